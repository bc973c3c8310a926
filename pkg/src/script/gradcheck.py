import pandas
import numpy as np

from typing import Callable

from src.script.config import MAX_REGIONS, ExperimentConfig, substream
from src.script.distill import DISTILL_LOSSES, DistillBatch, central_difference, finite_diff_grad, kink_margin, relative_error
from src.script.embeddings import Instance, TeacherConfig, build_teacher
from src.script.losses import (alignment_ce, alignment_ce_grad, bce_mask_loss, bce_mask_loss_grad, dice_loss, dice_loss_grad,
	grounding_loss, grounding_loss_grad, grounding_scores)
from src.script.pipeline import RegionBatch, StudentModel, TrainingContext, objective, prepare_step


STEP: float = 1e-5
MARGIN: float = 1e-3
KERNEL_TOLERANCE: float = 1e-4
COMPOSITE_TOLERANCE: float = 1e-3


def _distill_point(rng: np.random.Generator, variant: str) -> DistillBatch:
	while True:
		n, d = int(rng.integers(1, 7)), int(rng.integers(2, 17))
		batch = DistillBatch(rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((n, d)))
		if kink_margin(batch, variant) >= MARGIN:
			return batch


def check_distill(variant: str, points: int, rng: np.random.Generator) -> float:
	loss_fn, grad_fn = DISTILL_LOSSES[variant]
	worst = 0.0
	for _ in range(points):
		batch = _distill_point(rng, variant)
		worst = max(worst, relative_error(grad_fn(batch), finite_diff_grad(loss_fn, batch, STEP)))
	return worst


def _check_mask_kernel(loss_fn: Callable, grad_fn: Callable, points: int, rng: np.random.Generator) -> float:
	worst = 0.0
	for _ in range(points):
		shape = (int(rng.integers(2, 7)), int(rng.integers(2, 7)))
		pred, gt = rng.uniform(0.05, 0.95, shape), (rng.random(shape) < 0.5).astype(np.float64)
		worst = max(worst, relative_error(grad_fn(pred, gt), central_difference(lambda p: loss_fn(p, gt), pred, STEP)))
	return worst


def check_alignment_ce(points: int, rng: np.random.Generator) -> float:
	worst = 0.0
	for _ in range(points):
		rows, columns = int(rng.integers(1, 7)), int(rng.integers(2, 8))
		logits, labels = 3.0 * rng.standard_normal((rows, columns)), rng.integers(0, columns, rows)
		numeric = central_difference(lambda x: alignment_ce(x, labels), logits, STEP)
		worst = max(worst, relative_error(alignment_ce_grad(logits, labels), numeric))
	return worst


def _grounding_separated(regions: list[np.ndarray], words: list[np.ndarray]) -> bool:
	"""True when every caption word has a unique best region in every image, by at least MARGIN."""
	cached = grounding_scores(regions, words)
	gaps = [np.sort(cached.cosines[cached.region_owner == image], axis=0) for image in range(len(regions))]
	return all(g.shape[0] < 2 or np.min(g[-1] - g[-2]) >= MARGIN for g in gaps)


def _grounding_point(rng: np.random.Generator) -> tuple[list[np.ndarray], list[np.ndarray]]:
	while True:
		images, d = int(rng.integers(2, 5)), int(rng.integers(2, 17))
		regions = [rng.standard_normal((int(rng.integers(1, 4)), d)) for _ in range(images)]
		words = [rng.standard_normal((int(rng.integers(1, 4)), d)) for _ in range(images)]
		if _grounding_separated(regions, words):
			return regions, words


def check_grounding(points: int, rng: np.random.Generator, scale: float = 10.0) -> float:
	worst = 0.0
	for _ in range(points):
		regions, words = _grounding_point(rng)
		sizes = np.cumsum([r.shape[0] for r in regions])[:-1]
		flat = np.concatenate(regions)
		numeric = central_difference(lambda x: grounding_loss(np.split(x, sizes), words, scale), flat, STEP)
		worst = max(worst, relative_error(np.concatenate(grounding_loss_grad(regions, words, scale)), numeric))
	return worst


def composite_fixture(seed: int) -> tuple[StudentModel, TrainingContext]:
	"""Tiny two-image problem: two queries, D = 4, 2 x 2 feature grids."""
	rng = substream(seed, "gradcheck.composite")
	config = ExperimentConfig(seed=seed, num_categories=3, unseen_categories=1, synonyms_per_category=2, dim=4,
		query_dim=4, feature_dim=3, num_queries=MAX_REGIONS, height=2, width=2, alignment=0.9, synonym_angle=0.3,
		teacher_embedding="region")
	space = build_teacher(TeacherConfig.from_experiment(config), seed)
	batches: list[RegionBatch] = []
	for image in range(2):
		count = int(rng.integers(1, 3))
		owner = rng.permutation([0, 1, 2, 3]) % (count + 1)
		masks = np.stack([(owner == k + 1).reshape(2, 2) for k in range(count)])
		labels = tuple(int(c) for c in rng.choice(config.seen, size=count, replace=False))
		words = tuple(space.table.entry(label).canonical_name for label in labels)
		instances = tuple(Instance(image, k, label) for k, label in enumerate(labels))
		batches.append(RegionBatch(image, rng.standard_normal((2, 2, 3)), masks, labels, words, words, instances))
	model = StudentModel(rng.standard_normal((2, 4)), rng.standard_normal((4, 4)), rng.standard_normal((4, 3)),
		float(rng.standard_normal()))
	return model, TrainingContext(batches, space.table, space, config)


def _composite_degenerate(model: StudentModel, context: TrainingContext, plans) -> bool:
	post = model.queries @ model.projection
	if not _grounding_separated([post[p.assignment] for p in plans], [context.caption_embeds[p.image] for p in plans]):
		return True
	for plan in plans:
		batch = DistillBatch(model.queries[plan.assignment], context.teacher_regions[plan.image], context.text_targets[plan.image])
		if kink_margin(batch, "text_guided") < MARGIN:
			return True
	return False


def check_composite(points: int, seed: int) -> float:
	worst, drawn = 0.0, 0
	while drawn < points:
		model, context = composite_fixture(seed)
		seed += 1
		plans = prepare_step(model, context, 0)
		if _composite_degenerate(model, context, plans):
			continue
		drawn += 1
		_, grad = objective(model, context, plans)
		numeric = central_difference(lambda v: objective(model.from_vector(v), context, plans)[0].total, model.to_vector(), STEP)
		worst = max(worst, relative_error(grad.to_vector(), numeric))
	return worst


def run_suite(points: int = 100, seed: int = 0) -> pandas.DataFrame:
	rng = substream(seed, "gradcheck")
	rows = [
		("vanilla_kd", check_distill("vanilla", points, rng), KERNEL_TOLERANCE),
		("vision_guided_kd", check_distill("vision_guided", points, rng), KERNEL_TOLERANCE),
		("tgkd", check_distill("text_guided", points, rng), KERNEL_TOLERANCE),
		("bce_mask_loss", _check_mask_kernel(bce_mask_loss, bce_mask_loss_grad, points, rng), KERNEL_TOLERANCE),
		("dice_loss", _check_mask_kernel(dice_loss, dice_loss_grad, points, rng), KERNEL_TOLERANCE),
		("alignment_ce", check_alignment_ce(points, rng), KERNEL_TOLERANCE),
		("grounding_loss", check_grounding(points, rng), KERNEL_TOLERANCE),
		("composite", check_composite(points, seed), COMPOSITE_TOLERANCE)
	]
	frame = pandas.DataFrame(rows, columns=["kernel", "max_relative_error", "tolerance"])
	frame.insert(1, "points", points)
	frame["passed"] = frame["max_relative_error"] <= frame["tolerance"]
	return frame
