import math
import dataclasses
import numpy as np

from pathlib import Path

from src.script.errors import DomainError, FormatError, ShapeError


IGNORE: int = 0xFFFF
MAP_MAGIC: bytes = b"LBL1"
VOLUME_MAGIC: bytes = b"LBV1"


@dataclasses.dataclass(frozen=True, eq=False)
class LabelMap:
	labels: np.ndarray  # H x W uint16, IGNORE for unlabeled pixels


	def __post_init__(self):
		labels = np.asarray(self.labels)
		if labels.ndim != 2:
			raise ShapeError(f"label map must be H x W, got {labels.shape}")
		object.__setattr__(self, "labels", labels.astype(np.uint16, copy=False))


	@property
	def height(self) -> int:
		return int(self.labels.shape[0])


	@property
	def width(self) -> int:
		return int(self.labels.shape[1])


	def check(self, num_classes: int) -> None:
		labels = self.labels[self.labels != IGNORE]
		if labels.size and int(labels.max()) >= num_classes:
			raise DomainError(f"label {int(labels.max())} outside {num_classes} classes")


@dataclasses.dataclass(frozen=True, eq=False)
class ConfusionAccumulator:
	num_classes: int
	intersection: np.ndarray
	union: np.ndarray


	@classmethod
	def empty(cls, num_classes: int) -> "ConfusionAccumulator":
		return cls(num_classes, np.zeros(num_classes, dtype=np.int64), np.zeros(num_classes, dtype=np.int64))


	def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
		if other.num_classes != self.num_classes:
			raise ShapeError("cannot merge accumulators over different class counts")
		return ConfusionAccumulator(self.num_classes, self.intersection + other.intersection, self.union + other.union)


def accumulate(acc: ConfusionAccumulator, pred: LabelMap, gt: LabelMap) -> ConfusionAccumulator:
	"""Count IoU tallies over gt-labeled pixels; gt-ignore pixels are skipped entirely."""
	if pred.labels.shape != gt.labels.shape:
		raise ShapeError(f"prediction {pred.labels.shape} and ground truth {gt.labels.shape} differ")
	pred.check(acc.num_classes)
	gt.check(acc.num_classes)
	valid = gt.labels != IGNORE
	g = gt.labels[valid].astype(np.int64)
	p = pred.labels[valid].astype(np.int64)
	hit = p == g
	intersection = np.bincount(g[hit], minlength=acc.num_classes)
	gt_count = np.bincount(g, minlength=acc.num_classes)
	pred_count = np.bincount(p[p != IGNORE], minlength=acc.num_classes)
	union = gt_count + pred_count - intersection
	return ConfusionAccumulator(acc.num_classes, acc.intersection + intersection, acc.union + union)


def miou(acc: ConfusionAccumulator) -> tuple[np.ndarray, float]:
	"""Per-class IoU (NaN where the class never appears) and the mean in percent."""
	present = acc.union > 0
	if not np.any(present):
		raise DomainError("no class has a nonzero union")
	per_class = np.full(acc.num_classes, np.nan)
	per_class[present] = acc.intersection[present] / acc.union[present]
	return per_class, float(100.0 * np.mean(per_class[present]))


def harmonic_mean(seen: float, unseen: float) -> float:
	if seen + unseen == 0:
		return 0.0
	return 2.0 * seen * unseen / (seen + unseen)


@dataclasses.dataclass(frozen=True)
class SplitMetrics:
	seen: float  # percent, NaN when undefined
	unseen: float
	harmonic: float


def split_metrics(per_class_iou: np.ndarray, seen_set) -> SplitMetrics:
	seen_set = {int(c) for c in seen_set}
	per_class_iou = np.asarray(per_class_iou, dtype=np.float64)
	if not seen_set or len(seen_set) >= per_class_iou.size:
		raise DomainError("seen set and its complement must both be nonempty")
	is_seen = np.isin(np.arange(per_class_iou.size), sorted(seen_set))
	evaluated = ~np.isnan(per_class_iou)
	seen = float(100.0 * per_class_iou[is_seen & evaluated].mean()) if np.any(is_seen & evaluated) else math.nan
	unseen = float(100.0 * per_class_iou[~is_seen & evaluated].mean()) if np.any(~is_seen & evaluated) else math.nan
	if math.isnan(seen) or math.isnan(unseen):
		return SplitMetrics(seen, unseen, 0.0)
	return SplitMetrics(seen, unseen, harmonic_mean(seen, unseen))


@dataclasses.dataclass(frozen=True, eq=False)
class VideoMetrics:
	per_class_iou: np.ndarray
	miou: float
	split: SplitMetrics


def video_eval(pred_frames: list[LabelMap], gt_frames: list[LabelMap], seen_set, num_classes: int) -> VideoMetrics:
	"""Score a T x H x W volume as a single pixel set."""
	if len(pred_frames) != len(gt_frames):
		raise ShapeError(f"{len(pred_frames)} predicted frames for {len(gt_frames)} ground-truth frames")
	acc = ConfusionAccumulator.empty(num_classes)
	for pred, gt in zip(pred_frames, gt_frames):
		acc = accumulate(acc, pred, gt)
	per_class, mean = miou(acc)
	return VideoMetrics(per_class, mean, split_metrics(per_class, seen_set))


def _map_bytes(label_map: LabelMap) -> bytes:
	return np.array([label_map.height, label_map.width], dtype="<u4").tobytes() + label_map.labels.astype("<u2").tobytes()


def _map_from(blob: bytes, offset: int, source: str) -> tuple[LabelMap, int]:
	if len(blob) < offset + 8:
		raise FormatError(f"{source}: truncated label map header")
	height, width = (int(v) for v in np.frombuffer(blob, dtype="<u4", count=2, offset=offset))
	end = offset + 8 + 2 * height * width
	if len(blob) < end:
		raise FormatError(f"{source}: truncated label map")
	labels = np.frombuffer(blob, dtype="<u2", count=height * width, offset=offset + 8).reshape(height, width)
	return LabelMap(labels.astype(np.uint16)), end


def write_label_map(path: str | Path, label_map: LabelMap) -> None:
	Path(path).write_bytes(MAP_MAGIC + _map_bytes(label_map))


def read_label_map(path: str | Path) -> LabelMap:
	blob = Path(path).read_bytes()
	if blob[:4] != MAP_MAGIC:
		raise FormatError(f"{path}: not a label map")
	label_map, end = _map_from(blob, 4, str(path))
	if end != len(blob):
		raise FormatError(f"{path}: trailing bytes after label map")
	return label_map


def write_label_volume(path: str | Path, frames: list[LabelMap]) -> None:
	body = b"".join(_map_bytes(frame) for frame in frames)
	Path(path).write_bytes(VOLUME_MAGIC + np.array([len(frames)], dtype="<u4").tobytes() + body)


def read_label_volume(path: str | Path) -> list[LabelMap]:
	blob = Path(path).read_bytes()
	if len(blob) < 8 or blob[:4] != VOLUME_MAGIC:
		raise FormatError(f"{path}: not a label volume")
	count = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
	frames, offset = [], 8
	for _ in range(count):
		frame, offset = _map_from(blob, offset, str(path))
		frames.append(frame)
	if offset != len(blob):
		raise FormatError(f"{path}: trailing bytes after label volume")
	return frames
