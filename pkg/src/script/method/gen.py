import argparse

from pathlib import Path

from src.script.dataset import build_dataset, write_dataset
from src.script.embeddings import TeacherConfig, build_teacher
from src.script.experiment import experiment
from src.script.logs import logs


class gen():
	def __init__(self):
		self.experiment_class = experiment()
		self.logs_class = logs()


	def gen_run(self, args: argparse.Namespace) -> None:
		self.logs_class.logs_console_print("gen", "info", "runned")
		config = self.experiment_class.experiment_config(args)
		space = build_teacher(TeacherConfig.from_experiment(config), config.seed)
		dataset = build_dataset(config, space)
		write_dataset(dataset, config, space, args.out)
		self.logs_class.logs_console_print("gen", "info",
			f"{len(dataset.train)} train, {len(dataset.val)} val images and {len(dataset.clips)} clips written to {Path(args.out)}")
		self.logs_class.logs_console_print("gen", "info", "ended")
