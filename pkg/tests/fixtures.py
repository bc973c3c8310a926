import numpy as np

from src.script.config import ExperimentConfig
from src.script.embeddings import CategoryTable, Instance, TeacherConfig, TeacherSpace, build_teacher
from src.script.pipeline import RegionBatch


SMALL_CONFIG_TEXT: str = """# small run for tests
num_categories = 6
unseen_categories = 2
synonyms_per_category = 3
dim = 8
query_dim = 8
feature_dim = 8
num_queries = 6
height = 8
width = 8
train_images = 6
val_images = 4
video_clips = 1
video_frames = 3
steps = 4
log_every = 2
"""


def small_config(**changes) -> ExperimentConfig:
	config = ExperimentConfig(num_categories=6, unseen_categories=2, synonyms_per_category=3, dim=8, query_dim=8,
		feature_dim=8, num_queries=6, height=8, width=8, train_images=6, val_images=4, video_clips=1, video_frames=3,
		steps=4, log_every=2)
	return config.replace(**changes) if changes else config


def small_space(config: ExperimentConfig | None = None) -> TeacherSpace:
	config = config or small_config()
	return build_teacher(TeacherConfig.from_experiment(config), config.seed)


def single_category_batch(words: list[str], scores: np.ndarray, count: int, image_id: int = 0) -> tuple[RegionBatch, CategoryTable]:
	"""`count` instances of one category on a 1 x 1 grid, all sharing one synonym score vector."""
	table = CategoryTable.from_synonyms([list(words)])
	instances = tuple(Instance(image_id, k, 0) for k in range(count))
	batch = RegionBatch(image_id, np.zeros((1, 1, 2)), np.zeros((count, 1, 1), dtype=bool), (0,) * count,
		(words[0],) * count, (words[0],), instances, (np.asarray(scores, dtype=np.float64),) * count)
	return batch, table
