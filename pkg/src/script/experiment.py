import math
import pandas
import argparse
import numpy as np

from pathlib import Path

from src.script.config import ExperimentConfig, load_config
from src.script.dataset import gt_label_map, load_clips, load_dataset_config, load_split
from src.script.diversify import TextBank, read_synonym_table
from src.script.embeddings import TeacherConfig, TeacherSpace, build_teacher, read_embedding_store
from src.script.errors import ConfigError
from src.script.evaluation import ConfusionAccumulator, LabelMap, accumulate, miou, split_metrics, video_eval
from src.script.pipeline import RegionBatch, StudentModel, TrainingContext, calibration_gap, segment_then_classify, train_step
from src.script.logs import logs


# keys fixed when the dataset was generated; a run may not change them
DATASET_KEYS: tuple[str, ...] = ("num_categories", "unseen_categories", "seen", "unseen", "synonyms_per_category", "dim",
	"synonym_angle", "alignment", "token_noise", "feature_dim", "height", "width", "train_images", "val_images",
	"video_clips", "video_frames", "synonym_temperature")


class experiment():
	def __init__(self):
		self.logs_class = logs()


	def experiment_config(self, args: argparse.Namespace) -> ExperimentConfig:
		config = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
		if getattr(args, "seed", None) is not None:
			config = config.replace(seed=args.seed)
		return config


	def experiment_run_config(self, args: argparse.Namespace) -> tuple[ExperimentConfig, ExperimentConfig]:
		"""(dataset config, run config); the run inherits every dataset key from the dataset."""
		dataset_config = load_dataset_config(args.dataset)
		run_config = load_dataset_config(args.dataset, args.config) if args.config else dataset_config
		if args.seed is not None:
			run_config = run_config.replace(seed=args.seed)
		changed = [key for key in DATASET_KEYS if getattr(run_config, key) != getattr(dataset_config, key)]
		if changed:
			self.logs_class.logs_console_print("config", "warning", f"dataset keys kept from the dataset: {', '.join(changed)}")
			run_config = run_config.replace(**{key: getattr(dataset_config, key) for key in DATASET_KEYS})
		return dataset_config, run_config


	def experiment_teacher(self, dataset_dir: str | Path, dataset_config: ExperimentConfig) -> TeacherSpace:
		dataset_dir = Path(dataset_dir)
		table = read_synonym_table(dataset_dir / "synonyms.tsv")
		teacher_config = TeacherConfig(dataset_config.num_categories, tuple(len(e.synonyms) for e in table.entries),
			dataset_config.dim, dataset_config.synonym_angle, dataset_config.alignment, dataset_config.token_noise)
		space = build_teacher(teacher_config, dataset_config.seed, table)
		words, matrix = read_embedding_store(dataset_dir / "teacher.emb")
		expected_words, expected = space.store_rows()
		if words != expected_words or matrix.shape != expected.shape or np.max(np.abs(matrix - expected)) > 1e-6:
			raise ConfigError(f"{dataset_dir}: teacher store does not match the dataset config")
		return space


	def experiment_fit(self, config: ExperimentConfig, space: TeacherSpace, train: list[RegionBatch],
			func: str = "train") -> tuple[StudentModel, pandas.DataFrame]:
		context = TrainingContext(train, space.table, space, config)
		model = StudentModel.initialize(config)
		self.logs_class.logs_console_print(func, "info", f"calibration gap at start {calibration_gap(model, context):.6f}")
		rows: list[dict] = []
		for step in range(config.steps):
			model, breakdown = train_step(model, train, space.table, space, context.weights, config, step, context)
			rows.append(breakdown.as_row(step))
			if (step + 1) % config.log_every == 0:
				self.logs_class.logs_load_process_print(func, step + 1, config.steps)
				self.logs_class.logs_console_print(func, "info", f"step {step + 1}: total {breakdown.total:.6f}")
		self.logs_class.logs_console_print(func, "info", f"calibration gap at end {calibration_gap(model, context):.6f}")
		return model, pandas.DataFrame(rows, columns=["step", "total", "mask", "ce", "grounding", "kd"])


	def experiment_predict(self, model: StudentModel, config: ExperimentConfig, space: TeacherSpace,
			batches: list[RegionBatch]) -> list[LabelMap]:
		bank = TextBank(space.table, space)
		return [segment_then_classify(model, batch.features, space.table, space, config.classify_mode,
			config.logit_scale, bank) for batch in batches]


	def experiment_score(self, pred: list[LabelMap], gt: list[LabelMap], config: ExperimentConfig,
			clips: list[tuple[list[LabelMap], list[LabelMap]]] | None = None) -> dict[str, float]:
		acc = ConfusionAccumulator.empty(config.num_categories)
		for p, g in zip(pred, gt):
			acc = accumulate(acc, p, g)
		per_class, mean = miou(acc)
		split = split_metrics(per_class, config.seen)
		report: dict[str, float] = {"miou": mean, "seen_miou": split.seen, "unseen_miou": split.unseen, "harmonic": split.harmonic}
		for category_id, iou in enumerate(per_class):
			report[f"iou.{category_id}"] = float(iou)
		if clips:
			video = video_eval([f for p, _ in clips for f in p], [f for _, g in clips for f in g], config.seen, config.num_categories)
			report.update({"video_miou": video.miou, "video_seen_miou": video.split.seen,
				"video_unseen_miou": video.split.unseen, "video_harmonic": video.split.harmonic})
		return report


	def experiment_evaluate(self, model: StudentModel, config: ExperimentConfig, space: TeacherSpace,
			dataset_dir: str | Path) -> tuple[dict[str, float], list[LabelMap], list[list[LabelMap]]]:
		if model.shape != (config.num_queries, config.query_dim, config.dim, config.feature_dim):
			raise ConfigError(f"checkpoint shape {model.shape} does not match the config")
		val = load_split(dataset_dir, "val", space.table)
		pred = self.experiment_predict(model, config, space, val)
		clips = [(self.experiment_predict(model, config, space, frames), [gt_label_map(f) for f in frames])
			for frames in load_clips(dataset_dir, space.table)]
		return self.experiment_score(pred, [gt_label_map(b) for b in val], config, clips), pred, [p for p, _ in clips]


	def experiment_report_text(self, report: dict[str, float]) -> str:
		return "".join(f"{key} = {'nan' if math.isnan(value) else repr(float(value))}\n" for key, value in report.items())
