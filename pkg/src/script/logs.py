import re
import sys
import pandas
import logging


LOG_FORMAT: str = "%(asctime)s [%(levelname)s] %(message)s"
LOGGER_NAME: str = "gkc"

_levels: dict[str, int] = {
	"debug": logging.DEBUG,
	"info": logging.INFO,
	"warning": logging.WARNING,
	"error": logging.ERROR
}


class logs():
	def __init__(self):
		super(logs, self).__init__()
		self.logger = logging.getLogger(LOGGER_NAME)


	def logs_setup(self, log_file: str | None = None, verbose: bool = False) -> None:
		self.logger.setLevel(logging.DEBUG)
		for handler in list(self.logger.handlers):
			self.logger.removeHandler(handler)
		ch = logging.StreamHandler(sys.stderr)
		ch.setLevel(logging.DEBUG if verbose else logging.INFO)
		ch.setFormatter(logging.Formatter(LOG_FORMAT))
		self.logger.addHandler(ch)
		if log_file:
			fh = logging.FileHandler(log_file, mode="a", encoding="utf-8")
			fh.setLevel(logging.DEBUG)
			fh.setFormatter(logging.Formatter(LOG_FORMAT))
			self.logger.addHandler(fh)


	def logs_console_print(self, func: str, reason: str, desc: str) -> None:
		self.logger.log(_levels.get(reason, logging.INFO), f"{func} ~ ( {reason} ): {desc}.")


	def logs_logo_print(self, logo: str, version: str) -> None:
		print(re.sub("<version>", version, logo), file=sys.stderr)


	def logs_result_print(self, result: str | pandas.DataFrame) -> None:
		if isinstance(result, pandas.DataFrame):
			print(result.to_string(index=False))
		else:
			print(result)


	def logs_load_process_print(self, func: str, done: int, total: int) -> None:
		self.logger.debug(f"{func} ~ ( progress ): {done}/{total}.")
