import dataclasses
import numpy as np

from typing import Callable

from src.script.embeddings import EPS, normalize, pairwise_l2
from src.script.errors import DomainError, EmptyBatchError, ShapeError


KINK: float = 1e-8


@dataclasses.dataclass(frozen=True, eq=False)
class DistillBatch:
	"""Matched student queries V, frozen teacher regions R(I, M) and text targets T(Y); row i is instance i."""
	student: np.ndarray
	teacher_regions: np.ndarray
	text_embeds: np.ndarray
	normalize: bool = False


	def __post_init__(self):
		shapes = {np.shape(self.student), np.shape(self.teacher_regions), np.shape(self.text_embeds)}
		if len(shapes) != 1:
			raise ShapeError(f"distill lists disagree in shape: {sorted(shapes)}")
		if np.ndim(self.student) != 2:
			raise ShapeError("distill lists must be N x D")
		if np.shape(self.student)[0] == 0:
			raise EmptyBatchError("distillation batch has no instances")


	def with_student(self, student: np.ndarray) -> "DistillBatch":
		return dataclasses.replace(self, student=student)


	@property
	def size(self) -> int:
		return int(self.student.shape[0])


def _operands(batch: DistillBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
	if batch.normalize:
		return normalize(batch.student), normalize(batch.teacher_regions), normalize(batch.text_embeds)
	return np.asarray(batch.student, dtype=np.float64), batch.teacher_regions, batch.text_embeds


def _through_normalization(batch: DistillBatch, grad: np.ndarray) -> np.ndarray:
	if not batch.normalize:
		return grad
	norm = np.linalg.norm(batch.student, axis=1, keepdims=True)
	unit = batch.student / norm
	return (grad - unit * np.sum(unit * grad, axis=1, keepdims=True)) / norm


def _pairwise_loss(student: np.ndarray, teacher: np.ndarray, target: np.ndarray) -> float:
	return float(np.sum(np.abs(pairwise_l2(student, teacher) - target)) / student.shape[0])


def _pairwise_grad(student: np.ndarray, teacher: np.ndarray, target: np.ndarray) -> np.ndarray:
	delta = student[:, None, :] - teacher[None, :, :]
	smoothed = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta) + EPS)
	gap = (smoothed - np.sqrt(EPS)) - target
	sign = np.where(np.abs(gap) <= KINK, 0.0, np.sign(gap))
	return np.einsum("ij,ijk->ik", sign / smoothed, delta) / student.shape[0]


def vanilla_kd(batch: DistillBatch) -> float:
	student, teacher, _ = _operands(batch)
	delta = student - teacher
	return float(np.mean(np.sqrt(np.sum(delta * delta, axis=1) + EPS) - np.sqrt(EPS)))


def vanilla_kd_grad(batch: DistillBatch) -> np.ndarray:
	student, teacher, _ = _operands(batch)
	delta = student - teacher
	smoothed = np.sqrt(np.sum(delta * delta, axis=1, keepdims=True) + EPS)
	return _through_normalization(batch, delta / smoothed / batch.size)


def tgkd(batch: DistillBatch) -> float:
	"""Every student-to-teacher distance should match the text distance of the two categories."""
	student, teacher, text = _operands(batch)
	return _pairwise_loss(student, teacher, pairwise_l2(text, text))


def tgkd_grad(batch: DistillBatch) -> np.ndarray:
	student, teacher, text = _operands(batch)
	return _through_normalization(batch, _pairwise_grad(student, teacher, pairwise_l2(text, text)))


def vision_guided_kd(batch: DistillBatch) -> float:
	student, teacher, _ = _operands(batch)
	return _pairwise_loss(student, teacher, pairwise_l2(teacher, teacher))


def vision_guided_kd_grad(batch: DistillBatch) -> np.ndarray:
	student, teacher, _ = _operands(batch)
	return _through_normalization(batch, _pairwise_grad(student, teacher, pairwise_l2(teacher, teacher)))


DISTILL_LOSSES: dict[str, tuple[Callable[[DistillBatch], float], Callable[[DistillBatch], np.ndarray]]] = {
	"vanilla": (vanilla_kd, vanilla_kd_grad),
	"vision_guided": (vision_guided_kd, vision_guided_kd_grad),
	"text_guided": (tgkd, tgkd_grad)
}


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
	if h <= 0:
		raise DomainError("finite-difference step must be positive")
	x = np.array(x, dtype=np.float64)
	grad = np.zeros_like(x)
	for index in np.ndindex(x.shape):
		original = x[index]
		x[index] = original + h
		upper = fn(x)
		x[index] = original - h
		lower = fn(x)
		x[index] = original
		grad[index] = (upper - lower) / (2.0 * h)
	return grad


def finite_diff_grad(loss_fn: Callable[[DistillBatch], float], batch: DistillBatch, h: float = 1e-5) -> np.ndarray:
	return central_difference(lambda student: loss_fn(batch.with_student(student)), batch.student, h)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
	scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
	return float(np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))) / scale


def kink_margin(batch: DistillBatch, variant: str) -> float:
	"""Smallest |inner difference| of a pairwise loss; points closer than h to zero are degenerate."""
	student, teacher, text = _operands(batch)
	if variant == "vanilla":
		return float(np.min(pairwise_l2(student, teacher).diagonal()))
	target = pairwise_l2(text, text) if variant == "text_guided" else pairwise_l2(teacher, teacher)
	return float(np.min(np.abs(pairwise_l2(student, teacher) - target)))
