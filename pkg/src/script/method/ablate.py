import pandas
import argparse

from pathlib import Path
from concurrent.futures import ProcessPoolExecutor

from src.script.config import ExperimentConfig
from src.script.dataset import load_split
from src.script.experiment import experiment
from src.script.logs import logs


DEFAULT_LAMBDA_KD: float = 2.0


def ablation_cells(config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
	"""Diversification x distillation grid, then every distillation variant under the configured diversification."""
	lambda_kd = config.lambda_kd if config.lambda_kd > 0 else DEFAULT_LAMBDA_KD
	td = config.diversify if config.diversify != "none" else "random"
	cells = [
		("baseline", config.replace(diversify="none", distill="none")),
		("td", config.replace(diversify=td, distill="none")),
		("tgkd", config.replace(diversify="none", distill="text_guided", lambda_kd=lambda_kd)),
		("td+tgkd", config.replace(diversify=td, distill="text_guided", lambda_kd=lambda_kd))
	]
	for variant in ("none", "vanilla", "vision_guided", "text_guided"):
		cells.append((f"kd:{variant}", config.replace(distill=variant, lambda_kd=lambda_kd)))
	return cells


def ablation_cell(dataset_dir: str, dataset_config: ExperimentConfig, name: str, config: ExperimentConfig) -> dict:
	"""Train and evaluate one cell; a module-level function so worker processes can run it."""
	experiment_class = experiment()
	space = experiment_class.experiment_teacher(dataset_dir, dataset_config)
	model, loss_log = experiment_class.experiment_fit(config, space, load_split(dataset_dir, "train", space.table), f"ablate/{name}")
	report, _, _ = experiment_class.experiment_evaluate(model, config, space, dataset_dir)
	return {
		"cell": name,
		"diversify": config.diversify,
		"distill": config.distill,
		"final_loss": float(loss_log["total"].iloc[-1]) if len(loss_log) else float("nan"),
		"miou": report["miou"],
		"seen_miou": report["seen_miou"],
		"unseen_miou": report["unseen_miou"],
		"harmonic": report["harmonic"]
	}


class ablate():
	def __init__(self):
		self.experiment_class = experiment()
		self.logs_class = logs()


	def _ablate_rows(self, dataset_dir: str, dataset_config: ExperimentConfig, cells: list[tuple[str, ExperimentConfig]],
			workers: int) -> list[dict]:
		if workers <= 1:
			return [ablation_cell(dataset_dir, dataset_config, name, config) for name, config in cells]
		with ProcessPoolExecutor(max_workers=workers) as executor:
			futures = [executor.submit(ablation_cell, dataset_dir, dataset_config, name, config) for name, config in cells]
			return [future.result() for future in futures]


	def ablate_run(self, args: argparse.Namespace) -> None:
		self.logs_class.logs_console_print("ablate", "info", "runned")
		dataset_config, config = self.experiment_class.experiment_run_config(args)
		cells = ablation_cells(config)
		self.logs_class.logs_console_print("ablate", "info", f"{len(cells)} cells on {config.ablate_workers} worker(s)")
		rows = self._ablate_rows(str(args.dataset), dataset_config, cells, config.ablate_workers)
		table = pandas.DataFrame(rows)
		out = Path(args.out)
		out.mkdir(parents=True, exist_ok=True)
		table.to_csv(out / "ablation.csv", index=False, float_format="%.10g")
		self.logs_class.logs_result_print(table)
		self.logs_class.logs_console_print("ablate", "info", "ended")
