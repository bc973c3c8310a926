import dataclasses
import numpy as np

from pathlib import Path
from scipy.special import expit

from src.script.config import ExperimentConfig, substream
from src.script.diversify import TextBank, diversify_labels
from src.script.distill import DISTILL_LOSSES, DistillBatch
from src.script.embeddings import CategoryTable, ImageLayout, Instance, TeacherSpace, global_pool, mask_pool, pairwise_l2
from src.script.errors import DivergenceError, DomainError, FormatError, ShapeError
from src.script.evaluation import IGNORE, LabelMap
from src.script.losses import (LossBreakdown, LossTerms, LossWeights, alignment_ce, alignment_ce_grad, bce_mask_loss,
	bce_mask_loss_grad, dice_loss, dice_loss_grad, grounding_loss, grounding_loss_grad, hungarian_match, mask_cost_matrix,
	total_loss)


CHECKPOINT_MAGIC: bytes = b"GKC1"


@dataclasses.dataclass(frozen=True, eq=False)
class RegionBatch:
	"""One training image: features, disjoint gt masks with labels, caption and instance identities."""
	image_id: int
	features: np.ndarray  # H x W x D_f
	gt_masks: np.ndarray  # N x H x W bool
	gt_labels: tuple[int, ...]
	gt_words: tuple[str, ...]
	caption_words: tuple[str, ...]
	instances: tuple[Instance, ...]
	synonym_scores: tuple[np.ndarray, ...] | None = None


	def __post_init__(self):
		count = len(self.gt_labels)
		if count == 0:
			raise DomainError(f"image {self.image_id} has no ground-truth instance")
		if self.gt_masks.shape != (count,) + self.features.shape[:2]:
			raise ShapeError(f"image {self.image_id}: masks {self.gt_masks.shape} do not fit features {self.features.shape}")
		if len(self.gt_words) != count or len(self.instances) != count:
			raise ShapeError(f"image {self.image_id}: one word and one instance id per mask")
		if np.any(self.gt_masks.sum(axis=0) > 1):
			raise DomainError(f"image {self.image_id}: ground-truth masks overlap")


	def layout(self) -> ImageLayout:
		instance_map = np.full(self.gt_masks.shape[1:], -1, dtype=np.int64)
		for position, mask in enumerate(self.gt_masks):
			instance_map[mask] = position
		return ImageLayout(self.image_id, instance_map, self.instances)


@dataclasses.dataclass(frozen=True, eq=False)
class StudentModel:
	queries: np.ndarray  # M x D_q
	projection: np.ndarray  # D_q x D
	mask_head: np.ndarray  # D_q x D_f
	no_object: float = 0.0  # learned no-object logit


	def __post_init__(self):
		m, dq = self.queries.shape
		if self.projection.shape[0] != dq or self.mask_head.shape[0] != dq:
			raise ShapeError("projection and mask head must have D_q rows")
		if not all(np.all(np.isfinite(p)) for p in (self.queries, self.projection, self.mask_head)) or not np.isfinite(self.no_object):
			raise DivergenceError("model parameters are not finite")


	@property
	def shape(self) -> tuple[int, int, int, int]:
		return (self.queries.shape[0], self.queries.shape[1], self.projection.shape[1], self.mask_head.shape[1])


	@classmethod
	def initialize(cls, config: ExperimentConfig) -> "StudentModel":
		rng = substream(config.seed, "init")
		dq = config.query_dim
		queries = rng.standard_normal((config.num_queries, dq)) / np.sqrt(dq)
		projection = np.eye(dq, config.dim) + 0.1 * rng.standard_normal((dq, config.dim)) / np.sqrt(dq)
		mask_head = config.mask_head_gain * np.eye(dq, config.feature_dim) + 0.1 * rng.standard_normal((dq, config.feature_dim)) / np.sqrt(dq)
		return cls(queries, projection, mask_head, config.logit_scale * config.no_object_init)


	def to_vector(self) -> np.ndarray:
		return np.concatenate([self.queries.ravel(), self.projection.ravel(), self.mask_head.ravel(), [self.no_object]])


	def from_vector(self, vector: np.ndarray) -> "StudentModel":
		parts, offset = [], 0
		for matrix in (self.queries, self.projection, self.mask_head):
			parts.append(np.asarray(vector[offset:offset + matrix.size], dtype=np.float64).reshape(matrix.shape))
			offset += matrix.size
		return StudentModel(parts[0], parts[1], parts[2], float(vector[offset]))


@dataclasses.dataclass(frozen=True, eq=False)
class ForwardOutput:
	queries_prior: np.ndarray
	queries_post: np.ndarray
	mask_logits: np.ndarray  # M x H x W
	masks: np.ndarray  # M x H x W


def forward(model: StudentModel, features: np.ndarray) -> ForwardOutput:
	features = np.asarray(features, dtype=np.float64)
	if features.ndim != 3 or features.shape[2] != model.mask_head.shape[1]:
		raise ShapeError(f"feature grid {features.shape} does not match D_f = {model.mask_head.shape[1]}")
	height, width, _ = features.shape
	mask_logits = (model.queries @ model.mask_head) @ features.reshape(height * width, -1).T
	mask_logits = mask_logits.reshape(-1, height, width)
	return ForwardOutput(model.queries, model.queries @ model.projection, mask_logits, expit(mask_logits))


def classify(queries_post: np.ndarray, table: CategoryTable, space: TeacherSpace, mode: str, no_object: float,
		logit_scale: float = 100.0, bank: TextBank | None = None) -> np.ndarray:
	"""M x (K+1) similarity scores; the last column is the no-object logit in similarity units."""
	bank = bank or TextBank(table, space)
	scores, _ = bank.scores(bank.word_cosines(queries_post), mode)
	return np.hstack([scores, np.full((scores.shape[0], 1), no_object / logit_scale)])


def segment_then_classify(model: StudentModel, features: np.ndarray, table: CategoryTable, space: TeacherSpace,
		mode: str, logit_scale: float = 100.0, bank: TextBank | None = None) -> LabelMap:
	bank = bank or TextBank(table, space)
	output = forward(model, features)
	scores = classify(output.queries_post, table, space, mode, model.no_object, logit_scale, bank)
	return label_pixels(output.masks, scores, bank.category_ids)


def label_pixels(masks: np.ndarray, scores: np.ndarray, category_ids: np.ndarray) -> LabelMap:
	"""Each pixel takes the class of the query maximizing mask x best score; no-object becomes ignore."""
	columns = scores.shape[1] - 1
	query_class = np.argmax(scores, axis=1)
	confidence = scores.max(axis=1)
	best_query = np.argmax(masks * confidence[:, None, None], axis=0)
	column = query_class[best_query]
	labels = np.full(column.shape, IGNORE, dtype=np.uint16)
	known = column < columns
	labels[known] = np.asarray(category_ids)[column[known]]
	return LabelMap(labels)


def weights_from_config(config: ExperimentConfig) -> LossWeights:
	return LossWeights(config.lambda_mask, config.lambda_ce, config.lambda_grounding, config.lambda_kd)


def teacher_regions(batch: RegionBatch, space: TeacherSpace, variant: str) -> np.ndarray:
	if variant == "region":
		return np.stack([space.region(instance) for instance in batch.instances])
	grid = space.token_grid(batch.layout())
	if variant == "global":
		return np.tile(global_pool(grid), (len(batch.instances), 1))
	return np.stack([mask_pool(grid, mask) for mask in batch.gt_masks])


class TrainingContext():
	"""Frozen per-dataset quantities: teacher targets, caption embeddings, flattened features and masks."""

	def __init__(self, batches: list[RegionBatch], table: CategoryTable, space: TeacherSpace, config: ExperimentConfig,
			weights: LossWeights | None = None):
		self.batches: list[RegionBatch] = list(batches)
		self.table, self.space, self.config = table, space, config
		self.weights: LossWeights = weights or weights_from_config(config)
		self.bank: TextBank = TextBank(table, space, config.seen)
		self.teacher_regions: list[np.ndarray] = [teacher_regions(b, space, config.teacher_embedding) for b in self.batches]
		self.text_targets: list[np.ndarray] = [np.stack([space.canonical(y) for y in b.gt_labels]) for b in self.batches]
		self.caption_embeds: list[np.ndarray] = [np.stack([space.text(w) for w in b.caption_words]) for b in self.batches]
		self.flat_features: list[np.ndarray] = [b.features.reshape(-1, b.features.shape[2]) for b in self.batches]
		self.flat_masks: list[np.ndarray] = [b.gt_masks.reshape(len(b.gt_labels), -1).astype(np.float64) for b in self.batches]
		self.train_mode: str = config.diversify if config.diversify.startswith("group_") else "canonical"


	def select(self, step_index: int) -> list[int]:
		count, size = len(self.batches), self.config.batch_size
		if size == 0 or size >= count:
			return list(range(count))
		return [(step_index * size + k) % count for k in range(size)]


@dataclasses.dataclass(frozen=True, eq=False)
class ImagePlan:
	image: int
	assignment: np.ndarray  # gt index -> query index
	labels: np.ndarray  # per-query target column, no-object = len(bank)
	overrides: tuple[tuple[int, int, int], ...]  # (query, column, word index) for diversified targets


@dataclasses.dataclass(frozen=True, eq=False)
class _SharedScores:
	post: np.ndarray
	cosines: np.ndarray
	carrier: np.ndarray
	logits: np.ndarray  # M x (K_seen + 1) before per-image overrides


def _shared_scores(model: StudentModel, context: TrainingContext) -> _SharedScores:
	post = model.queries @ model.projection
	cosines = context.bank.word_cosines(post)
	scores, carrier = context.bank.scores(cosines, context.train_mode)
	logits = np.hstack([context.config.logit_scale * scores, np.full((scores.shape[0], 1), model.no_object)])
	return _SharedScores(post, cosines, carrier, logits)


def _image_logits(shared: _SharedScores, plan: ImagePlan, scale: float) -> np.ndarray:
	logits = shared.logits.copy()
	for query, column, word in plan.overrides:
		logits[query, column] = scale * shared.cosines[query, word]
	return logits


def prepare_step(model: StudentModel, context: TrainingContext, step_index: int, diversify: bool = True) -> list[ImagePlan]:
	"""Draw training words and match queries to ground truth; both stay fixed for the step's gradient."""
	config, bank = context.config, context.bank
	shared = _shared_scores(model, context)
	head = model.queries @ model.mask_head
	step_seed = int(substream(config.seed, "diversify", step_index).integers(0, 2 ** 63))
	overriding = config.diversify == "random"
	plans: list[ImagePlan] = []
	for image in context.select(step_index):
		batch = context.batches[image]
		if overriding and diversify:
			batch = diversify_labels(batch, context.table, "random", step_seed, context.space, config.synonym_temperature)
		masks = expit(head @ context.flat_features[image].T)
		cost = context.weights.mask * mask_cost_matrix(masks, context.flat_masks[image])
		columns = [bank.column_of[label] for label in batch.gt_labels]
		words = [bank.word_index[word] for word in batch.gt_words]
		for i, (column, word) in enumerate(zip(columns, words)):
			alignment = config.logit_scale * shared.cosines[:, word] if overriding else shared.logits[:, column]
			cost[i] -= context.weights.ce * alignment
		match = hungarian_match(cost)
		assignment = np.array([match.assignment[i] for i in range(len(columns))], dtype=np.int64)
		labels = np.full(model.queries.shape[0], len(bank), dtype=np.int64)
		labels[assignment] = columns
		overrides = tuple((int(q), column, word) for q, column, word in zip(assignment, columns, words)) if overriding else ()
		plans.append(ImagePlan(image, assignment, labels, overrides))
	return plans


@dataclasses.dataclass(frozen=True, eq=False)
class ModelGrad:
	queries: np.ndarray
	projection: np.ndarray
	mask_head: np.ndarray
	no_object: float


	def to_vector(self) -> np.ndarray:
		return np.concatenate([self.queries.ravel(), self.projection.ravel(), self.mask_head.ravel(), [self.no_object]])


def objective(model: StudentModel, context: TrainingContext, plans: list[ImagePlan]) -> tuple[LossBreakdown, ModelGrad]:
	"""Composite loss and its analytic gradient for fixed training words and matching."""
	config, bank, weights = context.config, context.bank, context.weights
	scale = config.logit_scale
	shared = _shared_scores(model, context)
	head = model.queries @ model.mask_head
	images = len(plans)
	pairs = sum(plan.assignment.size for plan in plans)
	d_head = np.zeros_like(head)
	d_post = np.zeros_like(shared.post)
	d_queries = np.zeros_like(model.queries)
	d_cos = np.zeros_like(shared.cosines)
	d_scores = np.zeros((shared.post.shape[0], len(bank)))
	d_no_object = 0.0
	mask_total, ce_total, kd_total = 0.0, 0.0, 0.0

	for plan in plans:
		features, gt = context.flat_features[plan.image], context.flat_masks[plan.image]
		masks = expit(head @ features.T)
		for i, query in enumerate(plan.assignment):
			mask_total += bce_mask_loss(masks[query], gt[i]) + dice_loss(masks[query], gt[i])
			d_mask = weights.mask * (bce_mask_loss_grad(masks[query], gt[i]) + dice_loss_grad(masks[query], gt[i])) / pairs
			d_head[query] += (d_mask * masks[query] * (1.0 - masks[query])) @ features

		logits = _image_logits(shared, plan, scale)
		class_weights = np.where(plan.labels == len(bank), config.no_object_weight, 1.0)
		ce_total += alignment_ce(logits, plan.labels, class_weights)
		d_logits = weights.ce * alignment_ce_grad(logits, plan.labels, class_weights) / images
		d_no_object += float(d_logits[:, -1].sum())
		for query, column, word in plan.overrides:
			d_cos[query, word] += scale * d_logits[query, column]
			d_logits[query, column] = 0.0
		d_scores += scale * d_logits[:, :-1]

		if config.distill != "none":
			kd_fn, kd_grad = DISTILL_LOSSES[config.distill]
			source = model.queries if config.student_embedding == "prior" else shared.post
			batch = DistillBatch(source[plan.assignment], context.teacher_regions[plan.image],
				context.text_targets[plan.image], config.normalize_distill)
			kd_total += kd_fn(batch)
			target = d_queries if config.student_embedding == "prior" else d_post
			np.add.at(target, plan.assignment, weights.kd * kd_grad(batch) / images)

	grounding = 0.0
	if images >= 2:
		regions = [shared.post[plan.assignment] for plan in plans]
		captions = [context.caption_embeds[plan.image] for plan in plans]
		grounding = grounding_loss(regions, captions, config.grounding_scale)
		for plan, d_regions in zip(plans, grounding_loss_grad(regions, captions, config.grounding_scale)):
			np.add.at(d_post, plan.assignment, weights.grounding * d_regions)

	d_cos += bank.scores_backward(d_scores, shared.carrier, context.train_mode)
	d_post += bank.cosines_backward(shared.post, shared.cosines, d_cos)
	d_queries += d_post @ model.projection.T + d_head @ model.mask_head.T
	grad = ModelGrad(d_queries, model.queries.T @ d_post, model.queries.T @ d_head, d_no_object)
	terms = LossTerms(mask_total / pairs, ce_total / images, grounding, kd_total / images)
	return total_loss(terms, weights), grad


def train_step(model: StudentModel, batches: list[RegionBatch], table: CategoryTable, space: TeacherSpace,
		weights: LossWeights, config: ExperimentConfig, step_index: int,
		context: TrainingContext | None = None) -> tuple[StudentModel, LossBreakdown]:
	context = context or TrainingContext(batches, table, space, config, weights)
	plans = prepare_step(model, context, step_index)
	breakdown, grad = objective(model, context, plans)
	if not np.isfinite(breakdown.total):
		raise DivergenceError(f"step {step_index}: loss is not finite")
	updated = model.to_vector() - config.learning_rate * grad.to_vector()
	if not np.all(np.isfinite(updated)):
		raise DivergenceError(f"step {step_index}: parameters are not finite")
	return model.from_vector(updated), breakdown


def calibration_gap(model: StudentModel, context: TrainingContext) -> float:
	"""Frobenius gap between student-to-teacher distances and text distances over the training set."""
	plans = prepare_step(model, context, 0, diversify=False)
	post = model.queries @ model.projection
	source = model.queries if context.config.student_embedding == "prior" else post
	squared = 0.0
	for plan in plans:
		text = context.text_targets[plan.image]
		cross = pairwise_l2(source[plan.assignment], context.teacher_regions[plan.image])
		squared += float(np.sum((cross - pairwise_l2(text, text)) ** 2))
	return float(np.sqrt(squared))


def write_checkpoint(path: str | Path, model: StudentModel) -> None:
	header = CHECKPOINT_MAGIC + np.array(model.shape, dtype="<u4").tobytes()
	body = b"".join(np.asarray(p, dtype="<f4").tobytes() for p in (model.queries, model.projection, model.mask_head, [model.no_object]))
	Path(path).write_bytes(header + body)


def read_checkpoint(path: str | Path) -> StudentModel:
	blob = Path(path).read_bytes()
	if len(blob) < 20 or blob[:4] != CHECKPOINT_MAGIC:
		raise FormatError(f"{path}: not a model checkpoint")
	m, dq, d, df = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=4, offset=4))
	sizes = [m * dq, dq * d, dq * df, 1]
	if len(blob) != 20 + 4 * sum(sizes):
		raise FormatError(f"{path}: truncated checkpoint")
	values = np.frombuffer(blob, dtype="<f4", offset=20).astype(np.float64)
	queries = values[:sizes[0]].reshape(m, dq)
	projection = values[sizes[0]:sizes[0] + sizes[1]].reshape(dq, d)
	mask_head = values[sizes[0] + sizes[1]:sizes[0] + sizes[1] + sizes[2]].reshape(dq, df)
	return StudentModel(queries, projection, mask_head, float(values[-1]))
