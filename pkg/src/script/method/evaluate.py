import pandas
import argparse

from pathlib import Path

from src.script.evaluation import write_label_map, write_label_volume
from src.script.experiment import experiment
from src.script.pipeline import read_checkpoint
from src.script.logs import logs


class evaluate():
	def __init__(self):
		self.experiment_class = experiment()
		self.logs_class = logs()


	def _evaluate_config_file(self, args: argparse.Namespace) -> argparse.Namespace:
		# a checkpoint written by train carries its run config next to it
		if args.config is None and (Path(args.checkpoint).parent / "config.txt").exists():
			return argparse.Namespace(**{**vars(args), "config": str(Path(args.checkpoint).parent / "config.txt")})
		return args


	def _evaluate_table(self, report: dict[str, float], names: list[str], seen: tuple[int, ...]) -> pandas.DataFrame:
		return pandas.DataFrame({
			"class": list(range(len(names))),
			"name": names,
			"split": ["seen" if k in seen else "unseen" for k in range(len(names))],
			"iou": [report[f"iou.{k}"] for k in range(len(names))]
		})


	def evaluate_run(self, args: argparse.Namespace) -> None:
		self.logs_class.logs_console_print("eval", "info", "runned")
		args = self._evaluate_config_file(args)
		dataset_config, config = self.experiment_class.experiment_run_config(args)
		space = self.experiment_class.experiment_teacher(args.dataset, dataset_config)
		model = read_checkpoint(args.checkpoint)
		report, pred, clips = self.experiment_class.experiment_evaluate(model, config, space, args.dataset)
		out = Path(args.out)
		out.mkdir(parents=True, exist_ok=True)
		(out / "report.txt").write_text(self.experiment_class.experiment_report_text(report), encoding="utf-8")
		for image_id, label_map in enumerate(pred, start=config.train_images):
			write_label_map(out / f"pred_{image_id:06d}.lbl", label_map)
		for clip, frames in enumerate(clips):
			write_label_volume(out / f"pred_clip_{clip}.lbv", frames)
		names = [entry.canonical_name for entry in space.table.entries]
		self.logs_class.logs_result_print(self._evaluate_table(report, names, config.seen))
		self.logs_class.logs_result_print(f"mIoU {report['miou']:.2f}  seen {report['seen_miou']:.2f}  "
			f"unseen {report['unseen_miou']:.2f}  harmonic {report['harmonic']:.2f}")
		self.logs_class.logs_console_print("eval", "info", "ended")
