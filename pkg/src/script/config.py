import zlib
import typing
import dataclasses
import numpy as np

from pathlib import Path

from src.script.errors import ConfigError


DIVERSIFY_STRATEGIES: tuple[str, ...] = ("none", "random", "group_max", "group_avg")
DISTILL_VARIANTS: tuple[str, ...] = ("none", "vanilla", "vision_guided", "text_guided")
TEACHER_EMBEDDINGS: tuple[str, ...] = ("region", "spatial", "global")
STUDENT_EMBEDDINGS: tuple[str, ...] = ("prior", "post")
CLASSIFY_MODES: tuple[str, ...] = ("canonical", "group_avg", "group_max")
MAX_REGIONS: int = 4


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
	seed: int = 0
	# teacher
	num_categories: int = 12
	unseen_categories: int = 4
	seen: tuple[int, ...] = ()
	unseen: tuple[int, ...] = ()
	synonyms_per_category: int = 3
	dim: int = 16
	synonym_angle: float = 0.35
	alignment: float = 0.95
	token_noise: float = 0.1
	# model and data
	num_queries: int = 20
	query_dim: int = 16
	feature_dim: int = 16
	height: int = 16
	width: int = 16
	mask_head_gain: float = 3.0
	no_object_init: float = 0.5
	train_images: int = 32
	val_images: int = 16
	video_clips: int = 2
	video_frames: int = 4
	# loss weights
	lambda_mask: float = 5.0
	lambda_ce: float = 2.0
	lambda_grounding: float = 2.0
	lambda_kd: float = 2.0
	no_object_weight: float = 0.1
	# method switches
	diversify: str = "random"
	distill: str = "text_guided"
	teacher_embedding: str = "spatial"
	student_embedding: str = "prior"
	classify_mode: str = "canonical"
	synonym_temperature: float = 1.0
	logit_scale: float = 100.0
	grounding_scale: float = 10.0
	normalize_distill: bool = False
	# optimisation
	steps: int = 3000
	learning_rate: float = 0.1
	batch_size: int = 0
	ablate_workers: int = 1
	log_every: int = 100


	def __post_init__(self):
		seen, unseen = self.seen, self.unseen
		if not seen and not unseen:
			if not 0 < self.unseen_categories < self.num_categories:
				raise ConfigError(f"unseen_categories must be in (0, {self.num_categories})")
			cut = self.num_categories - self.unseen_categories
			seen, unseen = tuple(range(cut)), tuple(range(cut, self.num_categories))
		elif not unseen:
			unseen = tuple(c for c in range(self.num_categories) if c not in seen)
		elif not seen:
			seen = tuple(c for c in range(self.num_categories) if c not in unseen)
		object.__setattr__(self, "seen", tuple(sorted(seen)))
		object.__setattr__(self, "unseen", tuple(sorted(unseen)))
		object.__setattr__(self, "unseen_categories", len(self.unseen))
		self._validate()


	def _validate(self) -> None:
		if self.num_categories < 2 or self.dim < 2:
			raise ConfigError("num_categories and dim must be at least 2")
		if set(self.seen) & set(self.unseen):
			raise ConfigError("seen and unseen overlap")
		if set(self.seen) | set(self.unseen) != set(range(self.num_categories)):
			raise ConfigError("seen and unseen must cover every category id")
		if not self.seen or not self.unseen:
			raise ConfigError("seen and unseen must both be nonempty")
		for name in ("synonyms_per_category", "num_queries", "query_dim", "feature_dim",
				"height", "width", "train_images", "val_images"):
			if getattr(self, name) <= 0:
				raise ConfigError(f"{name} must be positive")
		if self.num_queries < MAX_REGIONS:
			raise ConfigError(f"num_queries must be at least {MAX_REGIONS}, the most regions an image holds")
		if self.height < 2 or self.width < 2:
			raise ConfigError("height and width must be at least 2")
		if self.video_clips < 0 or self.video_frames < 0 or self.steps < 0:
			raise ConfigError("video_clips, video_frames and steps must be non-negative")
		if not 0.0 <= self.alignment <= 1.0:
			raise ConfigError("alignment must lie in [0, 1]")
		if self.synonym_angle < 0 or self.token_noise < 0:
			raise ConfigError("synonym_angle and token_noise must be non-negative")
		for name in ("lambda_mask", "lambda_ce", "lambda_grounding", "lambda_kd", "learning_rate"):
			if getattr(self, name) < 0:
				raise ConfigError(f"{name} must be non-negative")
		if self.synonym_temperature <= 0 or self.logit_scale <= 0 or self.grounding_scale <= 0:
			raise ConfigError("temperatures and logit scales must be positive")
		if not 0.0 < self.no_object_weight <= 1.0:
			raise ConfigError("no_object_weight must lie in (0, 1]")
		if self.mask_head_gain < 0:
			raise ConfigError("mask_head_gain must be non-negative")
		for name, allowed in (("diversify", DIVERSIFY_STRATEGIES), ("distill", DISTILL_VARIANTS),
				("teacher_embedding", TEACHER_EMBEDDINGS), ("student_embedding", STUDENT_EMBEDDINGS),
				("classify_mode", CLASSIFY_MODES)):
			if getattr(self, name) not in allowed:
				raise ConfigError(f"{name} must be one of {', '.join(allowed)}")
		if self.distill != "none" and self.student_embedding == "prior" and self.query_dim != self.dim:
			raise ConfigError("distilling pre-projection queries needs query_dim == dim")
		if self.batch_size < 0 or self.ablate_workers < 1 or self.log_every < 1:
			raise ConfigError("batch_size, ablate_workers and log_every out of range")


	def replace(self, **changes) -> "ExperimentConfig":
		return dataclasses.replace(self, **changes)


def _parse_value(field: dataclasses.Field, raw: str):
	kind = field.type
	if kind is tuple or typing.get_origin(kind) is tuple:
		return tuple(int(item) for item in raw.split(",") if item.strip())
	if kind is bool:
		if raw.lower() in ("1", "true", "yes", "on"):
			return True
		if raw.lower() in ("0", "false", "no", "off"):
			return False
		raise ValueError(f"not a boolean: {raw}")
	if kind is int:
		return int(raw)
	if kind is float:
		return float(raw)
	return raw


"""
example of config file:
	# toy run
	seed = 7
	num_categories = 12
	unseen = 8, 9, 10, 11
	diversify = random
"""
def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
	fields = {field.name: field for field in dataclasses.fields(ExperimentConfig)}
	changes: dict = {}
	for number, line in enumerate(text.splitlines(), start=1):
		line = line.split("#", 1)[0].strip()
		if not line:
			continue
		if "=" not in line:
			raise ConfigError(f"line {number}: expected 'key = value'")
		key, raw = (part.strip() for part in line.split("=", 1))
		if key not in fields:
			raise ConfigError(f"line {number}: unknown key '{key}'")
		try:
			changes[key] = _parse_value(fields[key], raw)
		except ValueError as exc:
			raise ConfigError(f"line {number}: bad value for '{key}': {exc}") from exc
	base = base or ExperimentConfig()
	if changes.keys() & {"seen", "unseen", "num_categories", "unseen_categories"}:
		changes.setdefault("seen", ())
		changes.setdefault("unseen", ())
	return dataclasses.replace(base, **changes)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
	return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def dump_config(config: ExperimentConfig) -> str:
	lines: list[str] = []
	for field in dataclasses.fields(ExperimentConfig):
		value = getattr(config, field.name)
		if isinstance(value, tuple):
			value = ",".join(str(item) for item in value)
		elif isinstance(value, bool):
			value = "true" if value else "false"
		elif isinstance(value, float):
			value = repr(value)
		lines.append(f"{field.name} = {value}")
	return "\n".join(lines) + "\n"


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
	"""Independent generator for one named consumer of the root seed."""
	entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
	entropy.extend(int(index) for index in indices)
	return np.random.default_rng(np.random.SeedSequence(entropy))
