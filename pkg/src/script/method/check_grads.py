import argparse

from src.script.errors import DivergenceError
from src.script.gradcheck import run_suite
from src.script.logs import logs


class check_grads():
	def __init__(self):
		self.logs_class = logs()


	def check_grads_run(self, args: argparse.Namespace) -> None:
		self.logs_class.logs_console_print("check-grads", "info", "runned")
		seed = args.seed if args.seed is not None else 0
		table = run_suite(seed=seed)
		self.logs_class.logs_result_print(table)
		failed = table.loc[~table["passed"], "kernel"].tolist()
		if failed:
			raise DivergenceError(f"analytic gradients disagree with finite differences: {', '.join(failed)}")
		self.logs_class.logs_console_print("check-grads", "info", "ended")
