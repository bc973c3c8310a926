import json
import dataclasses
import numpy as np

from pathlib import Path

from src.script.config import MAX_REGIONS, ExperimentConfig, dump_config, load_config, substream
from src.script.diversify import synonym_scores, write_synonym_table
from src.script.embeddings import CategoryTable, ImageLayout, Instance, TeacherSpace, write_embedding_store
from src.script.errors import FormatError
from src.script.evaluation import IGNORE, LabelMap, read_label_map, read_label_volume, write_label_map, write_label_volume
from src.script.pipeline import RegionBatch


FEATURE_MAGIC: bytes = b"FEA1"
CLIP_OWNER_BASE: int = 1_000_000


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticDataset:
	train: list[RegionBatch]
	val: list[RegionBatch]
	clips: list[list[RegionBatch]]


def _place_rectangles(rng: np.random.Generator, height: int, width: int, count: int) -> list[tuple[int, int, int, int]]:
	occupied = np.zeros((height, width), dtype=bool)
	boxes: list[tuple[int, int, int, int]] = []
	low_h, low_w = max(2, height // 5), max(2, width // 5)
	for _ in range(100 * count):
		if len(boxes) == count:
			break
		h = int(rng.integers(low_h, max(low_h, height // 2) + 1))
		w = int(rng.integers(low_w, max(low_w, width // 2) + 1))
		top, left = int(rng.integers(0, height - h + 1)), int(rng.integers(0, width - w + 1))
		if occupied[top:top + h, left:left + w].any():
			continue
		occupied[top:top + h, left:left + w] = True
		boxes.append((top, left, h, w))
	return boxes


def generate_layout(rng: np.random.Generator, height: int, width: int, categories: list[int] | tuple[int, ...],
		image_id: int, max_regions: int = MAX_REGIONS) -> ImageLayout:
	"""Up to max_regions disjoint rectangles with distinct categories on a background of -1."""
	count = int(rng.integers(1, min(max_regions, len(categories)) + 1))
	labels = rng.choice(np.asarray(categories), size=count, replace=False)
	boxes = _place_rectangles(rng, height, width, count)
	instance_map = np.full((height, width), -1, dtype=np.int64)
	for position, (top, left, h, w) in enumerate(boxes):
		instance_map[top:top + h, left:left + w] = position
	instances = tuple(Instance(image_id, position, int(labels[position])) for position in range(len(boxes)))
	return ImageLayout(image_id, instance_map, instances)


def generate_video_layouts(rng: np.random.Generator, height: int, width: int, categories: list[int] | tuple[int, ...],
		owner_id: int, first_image_id: int, frames: int) -> list[ImageLayout]:
	"""One layout drifting by a per-instance velocity; later instances paint over earlier ones."""
	start = generate_layout(rng, height, width, categories, owner_id)
	instances = tuple(Instance(owner_id, i.index, i.category_id) for i in start.instances)
	boxes = [(np.argwhere(start.instance_map == i.index).min(axis=0), np.argwhere(start.instance_map == i.index).max(axis=0))
		for i in instances]
	velocity = rng.integers(-1, 2, size=(len(instances), 2))
	layouts: list[ImageLayout] = []
	for t in range(frames):
		instance_map = np.full((height, width), -1, dtype=np.int64)
		for position, (low, high) in enumerate(boxes):
			shift = velocity[position] * t
			top, left = np.clip(low + shift, 0, [height - 1, width - 1])
			bottom, right = np.clip(high + shift, 0, [height - 1, width - 1])
			instance_map[top:bottom + 1, left:right + 1] = position
		layouts.append(ImageLayout(first_image_id + t, instance_map, instances))
	return layouts


def feature_projection(config: ExperimentConfig) -> np.ndarray:
	if config.feature_dim == config.dim:
		return np.eye(config.dim)
	return substream(config.seed, "features").standard_normal((config.dim, config.feature_dim)) / np.sqrt(config.dim)


def batch_from_layout(layout: ImageLayout, features: np.ndarray, table: CategoryTable, space: TeacherSpace,
		temperature: float, scored: bool = True) -> RegionBatch:
	masks = np.stack([layout.mask(i.index) for i in layout.instances])
	labels = tuple(i.category_id for i in layout.instances)
	words = tuple(table.entry(label).canonical_name for label in labels)
	scores = None
	if scored:
		scores = tuple(synonym_scores(space.region(i), table.entry(i.category_id), space, temperature).scores
			for i in layout.instances)
	return RegionBatch(layout.image_id, features, masks, labels, words, words, layout.instances, scores)


def build_dataset(config: ExperimentConfig, space: TeacherSpace) -> SyntheticDataset:
	table, projection = space.table, feature_projection(config)
	temperature = config.synonym_temperature

	def still(image_id: int, pool: tuple[int, ...]) -> RegionBatch:
		layout = generate_layout(substream(config.seed, "dataset", image_id), config.height, config.width, pool, image_id)
		return batch_from_layout(layout, space.token_grid(layout) @ projection, table, space, temperature)

	train = [still(k, config.seen) for k in range(config.train_images)]
	val = [still(config.train_images + k, tuple(range(config.num_categories))) for k in range(config.val_images)]
	clips: list[list[RegionBatch]] = []
	first = config.train_images + config.val_images
	for clip in range(config.video_clips if config.video_frames > 0 else 0):
		layouts = generate_video_layouts(substream(config.seed, "dataset.video", clip), config.height, config.width,
			tuple(range(config.num_categories)), CLIP_OWNER_BASE + clip, first + clip * config.video_frames, config.video_frames)
		clips.append([batch_from_layout(layout, space.token_grid(layout) @ projection, table, space, temperature, scored=False)
			for layout in layouts])
	return SyntheticDataset(train, val, clips)


def gt_label_map(batch: RegionBatch) -> LabelMap:
	labels = np.full(batch.gt_masks.shape[1:], IGNORE, dtype=np.uint16)
	for mask, label in zip(batch.gt_masks, batch.gt_labels):
		labels[mask] = label
	return LabelMap(labels)


def instance_map(batch: RegionBatch) -> LabelMap:
	positions = np.full(batch.gt_masks.shape[1:], IGNORE, dtype=np.uint16)
	for position, mask in enumerate(batch.gt_masks):
		positions[mask] = position
	return LabelMap(positions)


def write_features(path: Path, features: np.ndarray) -> None:
	header = FEATURE_MAGIC + np.array(features.shape, dtype="<u4").tobytes()
	path.write_bytes(header + features.astype("<f4").tobytes())


def read_features(path: Path) -> np.ndarray:
	blob = path.read_bytes()
	if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
		raise FormatError(f"{path}: not a feature grid")
	shape = tuple(int(v) for v in np.frombuffer(blob, dtype="<u4", count=3, offset=4))
	if len(blob) != 16 + 4 * int(np.prod(shape)):
		raise FormatError(f"{path}: truncated feature grid")
	return np.frombuffer(blob, dtype="<f4", offset=16).reshape(shape).astype(np.float64)


def _record(batch: RegionBatch) -> str:
	record = {
		"image_id": batch.image_id,
		"owner_id": batch.instances[0].owner_id,
		"labels": list(batch.gt_labels),
		"caption_words": list(batch.caption_words),
		"synonym_scores": None if batch.synonym_scores is None else [s.tolist() for s in batch.synonym_scores]
	}
	return json.dumps(record, sort_keys=True)


def _write_split(directory: Path, batches: list[RegionBatch]) -> None:
	directory.mkdir(parents=True, exist_ok=True)
	for batch in batches:
		write_label_map(directory / f"{batch.image_id:06d}.ins", instance_map(batch))
		write_label_map(directory / f"{batch.image_id:06d}.lbl", gt_label_map(batch))
		write_features(directory / f"{batch.image_id:06d}.fea", batch.features)
	(directory / "manifest.jsonl").write_text("".join(_record(b) + "\n" for b in batches), encoding="utf-8")


def write_dataset(dataset: SyntheticDataset, config: ExperimentConfig, space: TeacherSpace, out_dir: str | Path) -> None:
	out_dir = Path(out_dir)
	out_dir.mkdir(parents=True, exist_ok=True)
	(out_dir / "config.txt").write_text(dump_config(config), encoding="utf-8")
	words, matrix = space.store_rows()
	write_embedding_store(out_dir / "teacher.emb", words, matrix)
	write_synonym_table(out_dir / "synonyms.tsv", space.table)
	split = f"seen = {','.join(map(str, config.seen))}\nunseen = {','.join(map(str, config.unseen))}\n"
	(out_dir / "split.txt").write_text(split, encoding="utf-8")
	_write_split(out_dir / "train", dataset.train)
	_write_split(out_dir / "val", dataset.val)
	video = out_dir / "video"
	video.mkdir(exist_ok=True)
	records = []
	for clip, frames in enumerate(dataset.clips):
		write_label_volume(video / f"clip_{clip}.lbv", [gt_label_map(frame) for frame in frames])
		write_label_volume(video / f"clip_{clip}.ins.lbv", [instance_map(frame) for frame in frames])
		for t, frame in enumerate(frames):
			write_features(video / f"clip_{clip}_{t}.fea", frame.features)
		records.append(json.dumps({"clip": clip, "frames": [f.image_id for f in frames],
			"owner_id": frames[0].instances[0].owner_id, "labels": list(frames[0].gt_labels)}, sort_keys=True))
	(video / "manifest.jsonl").write_text("".join(r + "\n" for r in records), encoding="utf-8")


def _batch_from_files(image_id: int, owner_id: int, labels: list[int], positions: LabelMap, features: np.ndarray,
		table: CategoryTable, captions: list[str] | None = None, scores=None) -> RegionBatch:
	masks = np.stack([positions.labels == position for position in range(len(labels))])
	words = tuple(table.entry(label).canonical_name for label in labels)
	instances = tuple(Instance(owner_id, position, label) for position, label in enumerate(labels))
	scores = None if scores is None else tuple(np.asarray(s, dtype=np.float64) for s in scores)
	return RegionBatch(image_id, features, masks, tuple(labels), words, tuple(captions or words), instances, scores)


def load_split(dataset_dir: str | Path, split: str, table: CategoryTable) -> list[RegionBatch]:
	directory = Path(dataset_dir) / split
	batches: list[RegionBatch] = []
	for line in (directory / "manifest.jsonl").read_text(encoding="utf-8").splitlines():
		record = json.loads(line)
		stem = f"{record['image_id']:06d}"
		batches.append(_batch_from_files(record["image_id"], record["owner_id"], record["labels"],
			read_label_map(directory / f"{stem}.ins"), read_features(directory / f"{stem}.fea"), table,
			record["caption_words"], record["synonym_scores"]))
	return batches


def load_clips(dataset_dir: str | Path, table: CategoryTable) -> list[list[RegionBatch]]:
	video = Path(dataset_dir) / "video"
	manifest = video / "manifest.jsonl"
	if not manifest.exists():
		return []
	clips: list[list[RegionBatch]] = []
	for line in manifest.read_text(encoding="utf-8").splitlines():
		record = json.loads(line)
		positions = read_label_volume(video / f"clip_{record['clip']}.ins.lbv")
		clips.append([_batch_from_files(image_id, record["owner_id"], record["labels"], positions[t],
			read_features(video / f"clip_{record['clip']}_{t}.fea"), table)
			for t, image_id in enumerate(record["frames"])])
	return clips


def load_dataset_config(dataset_dir: str | Path, override: str | Path | None = None) -> ExperimentConfig:
	config = load_config(Path(dataset_dir) / "config.txt")
	return load_config(override, config) if override else config
