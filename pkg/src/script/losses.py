import dataclasses
import numpy as np

from scipy.optimize import linear_sum_assignment
from scipy.special import log_softmax, softmax

from src.script.embeddings import cosine_matrix, cosine_matrix_grad
from src.script.errors import CapacityError, ConfigError, DomainError, ShapeError


CLAMP: float = 1e-7
DICE_SMOOTH: float = 1.0


@dataclasses.dataclass(frozen=True)
class LossWeights:
	mask: float = 5.0
	ce: float = 2.0
	grounding: float = 2.0
	kd: float = 2.0


	def __post_init__(self):
		if min(self.mask, self.ce, self.grounding, self.kd) < 0:
			raise ConfigError("loss weights must be non-negative")


@dataclasses.dataclass(frozen=True)
class LossTerms:
	mask: float = 0.0  # bce + dice
	ce: float = 0.0
	grounding: float = 0.0
	kd: float = 0.0


@dataclasses.dataclass(frozen=True)
class LossBreakdown:
	total: float
	mask: float
	ce: float
	grounding: float
	kd: float


	def as_row(self, step: int) -> dict[str, float | int]:
		return {"step": step, "total": self.total, "mask": self.mask, "ce": self.ce,
			"grounding": self.grounding, "kd": self.kd}


@dataclasses.dataclass(frozen=True)
class MatchResult:
	assignment: dict[int, int]  # gt index -> query index
	total_cost: float


def _check_masks(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
	pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
	if pred.shape != gt.shape:
		raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
	return pred, gt


def bce_mask_loss(pred: np.ndarray, gt: np.ndarray) -> float:
	pred, gt = _check_masks(pred, gt)
	p = np.clip(pred, CLAMP, 1.0 - CLAMP)
	return float(np.mean(-(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p))))


def bce_mask_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
	"""Gradient w.r.t. pred; zero where the clamp is active."""
	pred, gt = _check_masks(pred, gt)
	inside = (pred > CLAMP) & (pred < 1.0 - CLAMP)
	p = np.clip(pred, CLAMP, 1.0 - CLAMP)
	return np.where(inside, (p - gt) / (p * (1.0 - p)), 0.0) / pred.size


def dice_loss(pred: np.ndarray, gt: np.ndarray) -> float:
	pred, gt = _check_masks(pred, gt)
	return float(1.0 - (2.0 * np.sum(pred * gt) + DICE_SMOOTH) / (np.sum(pred) + np.sum(gt) + DICE_SMOOTH))


def dice_loss_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
	pred, gt = _check_masks(pred, gt)
	numerator = 2.0 * np.sum(pred * gt) + DICE_SMOOTH
	denominator = np.sum(pred) + np.sum(gt) + DICE_SMOOTH
	return -(2.0 * gt * denominator - numerator) / denominator ** 2


def _check_labels(logits: np.ndarray, labels) -> np.ndarray:
	labels = np.asarray(labels, dtype=np.int64)
	if logits.ndim != 2 or labels.shape != (logits.shape[0],):
		raise ShapeError("alignment logits must be M x (K+1) with one label per row")
	if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
		raise DomainError("alignment label out of range")
	return labels


def _check_weights(labels: np.ndarray, weights) -> np.ndarray:
	if weights is None:
		return np.ones(labels.size)
	weights = np.asarray(weights, dtype=np.float64)
	if weights.shape != labels.shape or np.any(weights < 0.0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0.0:
		raise DomainError("class weights must be finite, non-negative, one per row and not all zero")
	return weights


def alignment_ce(logits: np.ndarray, labels, weights=None) -> float:
	"""Softmax cross-entropy averaged with per-row weights (plain mean when None); the last column is the no-object class."""
	logits = np.asarray(logits, dtype=np.float64)
	labels = _check_labels(logits, labels)
	weights = _check_weights(labels, weights)
	nll = -log_softmax(logits, axis=1)[np.arange(labels.size), labels]
	return float(np.sum(weights * nll) / weights.sum())


def alignment_ce_grad(logits: np.ndarray, labels, weights=None) -> np.ndarray:
	logits = np.asarray(logits, dtype=np.float64)
	labels = _check_labels(logits, labels)
	weights = _check_weights(labels, weights)
	grad = softmax(logits, axis=1)
	grad[np.arange(labels.size), labels] -= 1.0
	return grad * (weights / weights.sum())[:, None]


def _stack_owned(items: list[np.ndarray], kind: str) -> tuple[np.ndarray, np.ndarray]:
	for position, item in enumerate(items):
		if np.ndim(item) != 2 or np.shape(item)[0] == 0:
			raise DomainError(f"image {position} has no {kind}")
	owner = np.concatenate([np.full(len(item), position) for position, item in enumerate(items)])
	return np.concatenate(items, axis=0), owner


@dataclasses.dataclass(frozen=True, eq=False)
class GroundingScores:
	scores: np.ndarray  # B x B, image a against caption b
	regions: np.ndarray
	region_owner: np.ndarray
	words: np.ndarray
	word_owner: np.ndarray
	cosines: np.ndarray
	best_region: np.ndarray  # B x total_words, row index into regions


def grounding_scores(region_embeds: list[np.ndarray], caption_words: list[np.ndarray]) -> GroundingScores:
	"""s(a, b) = mean over caption-b words of the best cosine among image-a regions."""
	if len(region_embeds) != len(caption_words):
		raise ShapeError("one region list and one caption list per image")
	regions, region_owner = _stack_owned(region_embeds, "regions")
	words, word_owner = _stack_owned(caption_words, "caption words")
	cosines = cosine_matrix(regions, words)
	images = len(region_embeds)
	counts = np.bincount(word_owner, minlength=images)
	scores = np.zeros((images, images))
	best_region = np.zeros((images, words.shape[0]), dtype=np.int64)
	for image in range(images):
		rows = np.flatnonzero(region_owner == image)
		block = cosines[rows]
		best_region[image] = rows[np.argmax(block, axis=0)]
		scores[image] = np.bincount(word_owner, weights=block.max(axis=0), minlength=images) / counts
	return GroundingScores(scores, regions, region_owner, words, word_owner, cosines, best_region)


def grounding_loss_from_scores(scores: np.ndarray, scale: float = 1.0) -> float:
	logits = scale * np.asarray(scores, dtype=np.float64)
	diagonal = np.arange(logits.shape[0])
	image_to_caption = -np.mean(log_softmax(logits, axis=1)[diagonal, diagonal])
	caption_to_image = -np.mean(log_softmax(logits, axis=0)[diagonal, diagonal])
	return float(0.5 * (image_to_caption + caption_to_image))


def grounding_loss(region_embeds: list[np.ndarray], caption_words: list[np.ndarray], scale: float = 10.0) -> float:
	return grounding_loss_from_scores(grounding_scores(region_embeds, caption_words).scores, scale)


def grounding_loss_grad(region_embeds: list[np.ndarray], caption_words: list[np.ndarray], scale: float = 10.0) -> list[np.ndarray]:
	"""Gradient w.r.t. every image's region embeddings; caption words are constants."""
	cached = grounding_scores(region_embeds, caption_words)
	images = cached.scores.shape[0]
	logits = scale * cached.scores
	eye = np.eye(images)
	dlogits = 0.5 * ((softmax(logits, axis=1) - eye) + (softmax(logits, axis=0) - eye)) / images
	dscores = scale * dlogits
	counts = np.bincount(cached.word_owner, minlength=images)
	dcos = np.zeros_like(cached.cosines)
	word_columns = np.arange(cached.words.shape[0])
	for image in range(images):
		np.add.at(dcos, (cached.best_region[image], word_columns),
			dscores[image, cached.word_owner] / counts[cached.word_owner])
	dregions = cosine_matrix_grad(cached.regions, cached.words, cached.cosines, dcos)
	return [dregions[cached.region_owner == image] for image in range(images)]


def mask_cost_matrix(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
	"""bce + dice between every gt mask (N x P) and every predicted mask (M x P)."""
	p = np.clip(pred, CLAMP, 1.0 - CLAMP)
	g = gt.astype(np.float64)
	bce = -(g @ np.log(p).T + (1.0 - g) @ np.log(1.0 - p).T) / pred.shape[1]
	dice = 1.0 - (2.0 * g @ pred.T + DICE_SMOOTH) / (pred.sum(axis=1)[None, :] + g.sum(axis=1)[:, None] + DICE_SMOOTH)
	return bce + dice


def _forced_total(cost: np.ndarray, fixed: dict[int, int], row: int, column: int) -> float:
	used = set(fixed.values()) | {column}
	total = sum(cost[i, q] for i, q in fixed.items()) + cost[row, column]
	rest_rows = np.arange(row + 1, cost.shape[0])
	if rest_rows.size == 0:
		return float(total)
	rest_columns = np.array([q for q in range(cost.shape[1]) if q not in used])
	sub = cost[np.ix_(rest_rows, rest_columns)]
	r, c = linear_sum_assignment(sub)
	return float(total + sub[r, c].sum())


def hungarian_match(cost: np.ndarray) -> MatchResult:
	cost = np.asarray(cost, dtype=np.float64)
	if cost.ndim != 2:
		raise ShapeError("cost must be an N_gt x M matrix")
	if cost.shape[0] > cost.shape[1]:
		raise CapacityError(f"{cost.shape[0]} ground-truth masks but only {cost.shape[1]} queries")
	if not np.all(np.isfinite(cost)):
		raise DomainError("matching costs must be finite")
	rows, columns = linear_sum_assignment(cost)
	best = float(cost[rows, columns].sum())
	assignment = {int(i): int(q) for i, q in zip(rows, columns)}
	if np.unique(cost).size < cost.size:
		# ties: pick the lexicographically smallest optimal assignment
		tolerance = 1e-12 * max(1.0, abs(best))
		assignment = {}
		for row in range(cost.shape[0]):
			for column in range(cost.shape[1]):
				if column in assignment.values():
					continue
				if _forced_total(cost, assignment, row, column) <= best + tolerance:
					assignment[row] = column
					break
	return MatchResult(assignment, float(sum(cost[i, q] for i, q in assignment.items())))


def total_loss(terms: LossTerms, weights: LossWeights) -> LossBreakdown:
	total = weights.mask * terms.mask + weights.ce * terms.ce + weights.grounding * terms.grounding + weights.kd * terms.kd
	return LossBreakdown(float(total), float(terms.mask), float(terms.ce), float(terms.grounding), float(terms.kd))
