import dataclasses
import numpy as np
import numpy.typing as npt

from pathlib import Path

from src.script.config import ExperimentConfig, substream
from src.script.errors import ConfigError, DomainError, EmptyRegionError, FormatError, ShapeError, CategoryLookupError


Embedding = npt.NDArray[np.float64]

EPS: float = 1e-12
STORE_MAGIC: bytes = b"EMB1"

# curated synonym sets, canonical name first
DEFAULT_VOCABULARY: tuple[tuple[str, ...], ...] = (
	("person", "human", "individual", "somebody"),
	("car", "automobile", "auto", "motorcar"),
	("boat", "vessel", "ship", "watercraft"),
	("bus", "autobus", "coach", "omnibus"),
	("tree", "timber", "arbor", "sapling"),
	("dog", "hound", "canine", "puppy"),
	("cat", "kitty", "feline", "tomcat"),
	("bird", "fowl", "avian", "songbird"),
	("horse", "pony", "steed", "mare"),
	("road", "street", "roadway", "highway"),
	("sky", "heaven", "firmament", "welkin"),
	("building", "edifice", "structure", "house"),
	("grass", "lawn", "turf", "sward"),
	("water", "sea", "lake", "river"),
	("chair", "seat", "stool", "armchair"),
	("table", "desk", "counter", "dining table")
)


def as_embedding(values, normalized: bool = False) -> Embedding:
	vector = np.asarray(values, dtype=np.float64)
	if vector.ndim != 1 or vector.shape[0] < 2:
		raise ShapeError(f"embedding must be a vector of dimension >= 2, got shape {vector.shape}")
	if not np.all(np.isfinite(vector)):
		raise DomainError("embedding has non-finite entries")
	if normalized and abs(np.linalg.norm(vector) - 1.0) > 1e-9:
		raise DomainError("embedding flagged normalized is not unit-norm")
	return vector


def _check_pair(a, b) -> tuple[Embedding, Embedding]:
	a, b = as_embedding(a), as_embedding(b)
	if a.shape != b.shape:
		raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
	return a, b


def cosine_sim(a: Embedding, b: Embedding) -> float:
	a, b = _check_pair(a, b)
	norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
	if norm_a == 0.0 or norm_b == 0.0:
		raise DomainError("cosine similarity of a zero vector")
	return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def l2_distance(a: Embedding, b: Embedding) -> float:
	"""Smoothed L2 distance sqrt(|a-b|^2 + eps) - sqrt(eps)."""
	a, b = _check_pair(a, b)
	delta = a - b
	return float(np.sqrt(np.dot(delta, delta) + EPS) - np.sqrt(EPS))


def pairwise_l2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
	"""Smoothed distance matrix between the rows of a (N x D) and b (M x D)."""
	if a.shape[-1] != b.shape[-1]:
		raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
	delta = a[:, None, :] - b[None, :, :]
	return np.sqrt(np.einsum("ijk,ijk->ij", delta, delta) + EPS) - np.sqrt(EPS)


def normalize(vector: np.ndarray) -> np.ndarray:
	norm = np.linalg.norm(vector, axis=-1, keepdims=True)
	if np.any(norm == 0.0):
		raise DomainError("cannot normalize a zero vector")
	return vector / norm


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
	if a.shape[-1] != b.shape[-1]:
		raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
	return normalize(a) @ normalize(b).T


def cosine_matrix_grad(a: np.ndarray, b: np.ndarray, cos: np.ndarray, dcos: np.ndarray) -> np.ndarray:
	"""Gradient w.r.t. the rows of a, given upstream dcos for cos = cosine_matrix(a, b)."""
	norm_a = np.linalg.norm(a, axis=-1, keepdims=True)
	a_hat, b_hat = a / norm_a, normalize(b)
	return (dcos @ b_hat - np.sum(dcos * cos, axis=1, keepdims=True) * a_hat) / norm_a


@dataclasses.dataclass(frozen=True)
class CategoryEntry:
	category_id: int
	canonical_name: str
	synonyms: tuple[str, ...]


@dataclasses.dataclass(frozen=True)
class CategoryTable:
	entries: tuple[CategoryEntry, ...]


	def __post_init__(self):
		if not self.entries:
			raise ConfigError("category table is empty")
		for position, entry in enumerate(self.entries):
			if entry.category_id != position:
				raise ConfigError(f"category ids must be contiguous from 0, got {entry.category_id} at {position}")
			if not entry.synonyms or entry.synonyms[0] != entry.canonical_name:
				raise ConfigError(f"category {entry.category_id}: canonical name must head its synonym list")
			if len(set(entry.synonyms)) != len(entry.synonyms):
				raise ConfigError(f"category {entry.category_id}: duplicate synonyms")


	def __len__(self) -> int:
		return len(self.entries)


	def entry(self, category_id: int) -> CategoryEntry:
		if not 0 <= category_id < len(self.entries):
			raise CategoryLookupError(f"unknown category id {category_id}")
		return self.entries[category_id]


	def words(self) -> list[str]:
		return [word for entry in self.entries for word in entry.synonyms]


	@classmethod
	def from_synonyms(cls, synonym_sets: list[list[str]]) -> "CategoryTable":
		return cls(tuple(CategoryEntry(k, words[0], tuple(words)) for k, words in enumerate(synonym_sets)))


def default_table(num_categories: int, synonym_counts: tuple[int, ...]) -> CategoryTable:
	synonym_sets: list[list[str]] = []
	for k in range(num_categories):
		if k < len(DEFAULT_VOCABULARY):
			words = list(DEFAULT_VOCABULARY[k])
		else:
			words = [f"category{k:02d}"] + [f"category{k:02d}_alt{s}" for s in range(1, synonym_counts[k])]
		while len(words) < synonym_counts[k]:
			words.append(f"{words[0]}_alt{len(words)}")
		synonym_sets.append(words[:synonym_counts[k]])
	return CategoryTable.from_synonyms(synonym_sets)


@dataclasses.dataclass(frozen=True)
class TeacherConfig:
	num_categories: int
	synonym_counts: tuple[int, ...]
	dim: int = 16
	synonym_angle: float = 0.35
	alignment: float = 0.95
	token_noise: float = 0.1


	@classmethod
	def from_experiment(cls, config: ExperimentConfig) -> "TeacherConfig":
		return cls(config.num_categories, (config.synonyms_per_category,) * config.num_categories,
			config.dim, config.synonym_angle, config.alignment, config.token_noise)


@dataclasses.dataclass(frozen=True)
class Instance:
	"""One object; owner_id is the image (or video clip) the instance belongs to."""
	owner_id: int
	index: int
	category_id: int


@dataclasses.dataclass(frozen=True, eq=False)
class ImageLayout:
	image_id: int
	instance_map: np.ndarray  # H x W, -1 background, else position in instances
	instances: tuple[Instance, ...]


	def mask(self, position: int) -> np.ndarray:
		return self.instance_map == position


@dataclasses.dataclass(frozen=True, eq=False)
class TeacherSpace:
	dim: int
	table: CategoryTable
	text_table: dict[str, np.ndarray]
	alignment: float
	token_noise: float
	seed: int


	def text(self, word: str) -> np.ndarray:
		if word not in self.text_table:
			raise CategoryLookupError(f"word '{word}' not in teacher vocabulary")
		return self.text_table[word]


	def canonical(self, category_id: int) -> np.ndarray:
		return self.text(self.table.entry(category_id).canonical_name)


	def region(self, instance: Instance) -> np.ndarray:
		target = self.canonical(instance.category_id)
		if self.alignment >= 1.0:
			return target.copy()
		noise = normalize(substream(self.seed, "teacher.region", instance.owner_id, instance.index).standard_normal(self.dim))
		return normalize(self.alignment * target + (1.0 - self.alignment) * noise)


	def token_grid(self, layout: ImageLayout) -> np.ndarray:
		height, width = layout.instance_map.shape
		background = normalize(substream(self.seed, "teacher.background", layout.image_id).standard_normal(self.dim))
		palette = np.stack([background] + [self.region(instance) for instance in layout.instances])
		noise = substream(self.seed, "teacher.tokens", layout.image_id).standard_normal((height, width, self.dim))
		return palette[layout.instance_map + 1] + self.token_noise * noise


	def store_rows(self) -> tuple[list[str], np.ndarray]:
		words = self.table.words()
		return words, np.stack([self.text_table[word] for word in words])


def build_teacher(config: TeacherConfig, seed: int, table: CategoryTable | None = None) -> TeacherSpace:
	if config.num_categories < 2 or config.dim < 2:
		raise ConfigError("teacher needs at least 2 categories and dimension >= 2")
	if len(config.synonym_counts) != config.num_categories or min(config.synonym_counts) < 1:
		raise ConfigError("one positive synonym count per category is required")
	table = table or default_table(config.num_categories, config.synonym_counts)
	if len(table) != config.num_categories:
		raise ConfigError(f"table has {len(table)} categories, config asks for {config.num_categories}")
	canonical = normalize(substream(seed, "teacher.text").standard_normal((config.num_categories, config.dim)))
	text_table: dict[str, np.ndarray] = {}
	for entry in table.entries:
		center = canonical[entry.category_id]
		for position, word in enumerate(entry.synonyms):
			if word in text_table:
				raise ConfigError(f"word '{word}' appears in more than one category")
			if position == 0:
				vector = center.copy()
			else:
				rng = substream(seed, "teacher.synonym", entry.category_id, position)
				tangent = rng.standard_normal(config.dim)
				tangent -= np.dot(tangent, center) * center
				angle = rng.uniform(0.0, config.synonym_angle)
				if angle == 0.0:
					vector = center.copy()
				else:
					vector = normalize(np.cos(angle) * center + np.sin(angle) * normalize(tangent))
			vector.setflags(write=False)
			text_table[word] = vector
	return TeacherSpace(config.dim, table, text_table, config.alignment, config.token_noise, seed)


def mask_pool(tokens: np.ndarray, mask: np.ndarray) -> np.ndarray:
	"""Mask-weighted mean of an H x W x D token grid."""
	if tokens.shape[:2] != mask.shape:
		raise ShapeError(f"token grid {tokens.shape[:2]} and mask {mask.shape} differ")
	weights = np.asarray(mask, dtype=np.float64)
	total = weights.sum()
	if total <= 0.0:
		raise EmptyRegionError("mask has no weight")
	return np.tensordot(weights, tokens, axes=([0, 1], [0, 1])) / total


def global_pool(tokens: np.ndarray) -> np.ndarray:
	# unmasked mean stands in for the attention-pooled global token
	return tokens.reshape(-1, tokens.shape[-1]).mean(axis=0)


def write_embedding_store(path: str | Path, words: list[str], matrix: np.ndarray) -> None:
	path = Path(path)
	matrix = np.asarray(matrix)
	if matrix.ndim != 2 or matrix.shape[0] != len(words):
		raise ShapeError("embedding store needs one row per word")
	header = STORE_MAGIC + np.array(matrix.shape, dtype="<u4").tobytes()
	path.write_bytes(header + matrix.astype("<f4").tobytes())
	Path(f"{path}.words").write_text("".join(f"{word}\n" for word in words), encoding="utf-8")


def read_embedding_store(path: str | Path) -> tuple[list[str], np.ndarray]:
	path = Path(path)
	blob = path.read_bytes()
	if len(blob) < 12 or blob[:4] != STORE_MAGIC:
		raise FormatError(f"{path}: not an embedding store")
	count, dim = (int(value) for value in np.frombuffer(blob, dtype="<u4", count=2, offset=4))
	if len(blob) != 12 + 4 * count * dim:
		raise FormatError(f"{path}: truncated embedding store")
	matrix = np.frombuffer(blob, dtype="<f4", offset=12).reshape(count, dim).astype(np.float64)
	words = Path(f"{path}.words").read_text(encoding="utf-8").splitlines()
	if len(words) != count:
		raise FormatError(f"{path}: sidecar index has {len(words)} words, store has {count} rows")
	return words, matrix
