import argparse

from pathlib import Path

from src.script.config import dump_config
from src.script.dataset import load_split
from src.script.experiment import experiment
from src.script.pipeline import write_checkpoint
from src.script.logs import logs


class train():
	def __init__(self):
		self.experiment_class = experiment()
		self.logs_class = logs()


	def train_run(self, args: argparse.Namespace) -> None:
		self.logs_class.logs_console_print("train", "info", "runned")
		dataset_config, config = self.experiment_class.experiment_run_config(args)
		space = self.experiment_class.experiment_teacher(args.dataset, dataset_config)
		batches = load_split(args.dataset, "train", space.table)
		self.logs_class.logs_console_print("train", "info",
			f"{len(batches)} images, {config.steps} steps, diversify {config.diversify}, distill {config.distill}")
		model, loss_log = self.experiment_class.experiment_fit(config, space, batches)
		out = Path(args.out)
		out.mkdir(parents=True, exist_ok=True)
		write_checkpoint(out / "model.gkc", model)
		loss_log.to_csv(out / "loss_log.csv", index=False, float_format="%.10g")
		(out / "config.txt").write_text(dump_config(config), encoding="utf-8")
		if len(loss_log):
			self.logs_class.logs_result_print(loss_log.iloc[[0, -1]])
		self.logs_class.logs_console_print("train", "info", "ended")
