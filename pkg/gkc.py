import json
import argparse

from pathlib import Path

from src.script.method.check_grads import check_grads
from src.script.method.evaluate import evaluate
from src.script.method.ablate import ablate
from src.script.method.train import train
from src.script.method.gen import gen

from src.script.errors import GkcError
from src.script.logs import logs


CONFIG_FILE: Path = Path(__file__).resolve().parent / "src" / "gkc-config.json"


class gkc():
	def __init__(self):
		self.gen_class = gen()
		self.train_class = train()
		self.evaluate_class = evaluate()
		self.ablate_class = ablate()
		self.check_grads_class = check_grads()
		self.logs_class = logs()


	def _gkc_config_file_open(self) -> dict[str, dict]:
		return json.loads(CONFIG_FILE.read_text(encoding="utf-8"))


	def _gkc_config_access(self, func: str, attribute: str):
		return self._gkc_config_file_open()[func][attribute]


	def _gkc_logo(self) -> str:
		return r"""
	         __
	   ___ _/ /_____
	  / _ `/  '_/ __/
	  \_, /_/\_\\__/  v<version>
	 /___/  global knowledge calibration
				"""


	def _gkc_method(self, args: argparse.Namespace) -> None:
		method_dict: dict[str, callable] = {
			"gen": self.gen_class.gen_run,
			"train": self.train_class.train_run,
			"eval": self.evaluate_class.evaluate_run,
			"ablate": self.ablate_class.ablate_run,
			"check-grads": self.check_grads_class.check_grads_run
		}
		method_dict[args.method](args)


	def _gkc_argparse_format_help(self) -> str:
		return """
	usage:
		python3 gkc.py { method } [ --config file ] [ --seed n ] [ --out dir ] [ --dataset dir ] [ --checkpoint file ]
	example:
		python3 gkc.py gen --seed 7 --out data
		python3 gkc.py train --dataset data --out run
		python3 gkc.py eval --dataset data --checkpoint run/model.gkc --out report
		python3 gkc.py ablate --dataset data --config ablate.txt --out ablation
		python3 gkc.py check-grads

	methods:
		gen, train, eval, ablate, check-grads

	accepts:
		gen -> config, seed, out
		train -> dataset, config, seed, out
		eval -> dataset, checkpoint, config, out
		ablate -> dataset, config, seed, out
		check-grads -> seed
	"""


	def _gkc_argparse_exception(self, exception: str) -> None:
		self.logs_class.logs_console_print("gkc/argparse", "error", exception)
		self.gkc_term(1)


	def _gkc_argparse_check(self, args: argparse.Namespace) -> None:
		accepts = [a.strip() for a in self._gkc_config_access("gkc", "method")[args.method].split(",")]
		for required in ("dataset", "checkpoint", "out"):
			if required in accepts and getattr(args, required) is None:
				self._gkc_argparse_exception(f"{args.method} needs --{required}")


	def _gkc_argparse(self, argv: list[str] | None = None) -> argparse.Namespace:
		parser = argparse.ArgumentParser()
		parser.error = self._gkc_argparse_exception
		parser.format_help = self._gkc_argparse_format_help
		parser.add_argument("method", choices=self._gkc_config_access("gkc", "method").keys())
		parser.add_argument("-c", "--config", type=str)
		parser.add_argument("-s", "--seed", type=int)
		parser.add_argument("-o", "--out", type=str)
		parser.add_argument("-d", "--dataset", type=str)
		parser.add_argument("-k", "--checkpoint", type=str)
		parser.add_argument("-l", "--log-file", type=str)
		parser.add_argument("-v", "--verbose", action="store_true")
		args = parser.parse_args(argv)
		if args.seed is not None and not 0 <= args.seed < 2 ** 64:
			self._gkc_argparse_exception(f"seed {args.seed} is not an unsigned 64-bit integer")
		self._gkc_argparse_check(args)
		return args


	def gkc_run(self, argv: list[str] | None = None) -> None:
		self.logs_class.logs_setup()
		self.logs_class.logs_logo_print(self._gkc_logo(), self._gkc_config_access("gkc", "version"))
		args = self._gkc_argparse(argv)
		self.logs_class.logs_setup(args.log_file, args.verbose)
		try:
			self._gkc_method(args)
		except (GkcError, OSError) as exception:
			self.logs_class.logs_console_print(args.method, "error", str(exception))
			self.gkc_term(1)


	def gkc_term(self, code: int | None = None):
		raise SystemExit(code)


if __name__ == "__main__":
	gkc_class = gkc()
	gkc_class.gkc_run()
	gkc_class.gkc_term()
