from __future__ import annotations

import dataclasses
import numpy as np

from pathlib import Path
from typing import TYPE_CHECKING
from scipy.special import softmax

from src.script.config import substream
from src.script.embeddings import CategoryEntry, CategoryTable, TeacherSpace, cosine_matrix, cosine_matrix_grad, cosine_sim
from src.script.errors import CategoryLookupError, ConfigError, DomainError, FormatError

if TYPE_CHECKING:
	from src.script.pipeline import RegionBatch


GROUP_MODES: tuple[str, ...] = ("canonical", "group_avg", "group_max")


@dataclasses.dataclass(frozen=True, eq=False)
class SynonymScores:
	category_id: int
	scores: np.ndarray


	def __post_init__(self):
		if self.scores.ndim != 1 or self.scores.size == 0:
			raise DomainError("synonym scores must be a nonempty vector")
		if abs(float(self.scores.sum()) - 1.0) > 1e-9:
			raise DomainError("synonym scores must sum to one")


def synonym_scores(instance_embed: np.ndarray, category: CategoryEntry, space: TeacherSpace,
		temperature: float = 1.0) -> SynonymScores:
	if not category.synonyms:
		raise DomainError(f"category {category.category_id} has no synonyms")
	if temperature <= 0:
		raise DomainError("temperature must be positive")
	cosines = np.array([cosine_sim(instance_embed, space.text(word)) for word in category.synonyms])
	return SynonymScores(category.category_id, softmax(cosines / temperature))


def _draw_word(category: CategoryEntry, scores: np.ndarray, rng: np.random.Generator) -> str:
	# inverse-CDF draw on one uniform keeps the stream one number per instance
	position = int(np.searchsorted(np.cumsum(scores), rng.random() * scores.sum(), side="right"))
	return category.synonyms[min(position, len(category.synonyms) - 1)]


"""
each instance i of image `image_id` draws from substream(rng_seed, "diversify", image_id, i),
so serial and parallel execution agree; callers refresh rng_seed every training step
"""
def diversify_labels(batch: RegionBatch, table: CategoryTable, strategy: str, rng_seed: int,
		space: TeacherSpace, temperature: float = 1.0) -> RegionBatch:
	if strategy == "none":
		return batch
	if strategy != "random":
		raise ConfigError(f"unknown diversification strategy '{strategy}'")
	words: list[str] = []
	for position, label in enumerate(batch.gt_labels):
		try:
			category = table.entry(label)
		except CategoryLookupError:
			raise CategoryLookupError(f"image {batch.image_id}: label {label} not in category table") from None
		if len(category.synonyms) == 1:
			words.append(category.canonical_name)
			continue
		if batch.synonym_scores is not None:
			scores = np.asarray(batch.synonym_scores[position], dtype=np.float64)
		else:
			scores = synonym_scores(space.region(batch.instances[position]), category, space, temperature).scores
		rng = substream(rng_seed, "diversify", batch.image_id, position)
		words.append(_draw_word(category, scores, rng))
	return dataclasses.replace(batch, gt_words=tuple(words))


def group_score(query_embed: np.ndarray, category: CategoryEntry, space: TeacherSpace, mode: str) -> float:
	if mode == "canonical":
		return cosine_sim(query_embed, space.text(category.canonical_name))
	cosines = [cosine_sim(query_embed, space.text(word)) for word in category.synonyms]
	if mode == "group_max":
		return float(max(cosines))
	if mode == "group_avg":
		return float(np.mean(cosines))
	raise ConfigError(f"unknown group mode '{mode}'")


class TextBank():
	"""Text embeddings of every synonym of a subset of categories, laid out for batched scoring."""

	def __init__(self, table: CategoryTable, space: TeacherSpace, category_ids: list[int] | tuple[int, ...] | None = None):
		self.category_ids: np.ndarray = np.array(range(len(table)) if category_ids is None else category_ids, dtype=np.int64)
		if self.category_ids.size == 0:
			raise ConfigError("text bank needs at least one category")
		self.words: list[str] = []
		self.word_column: list[int] = []
		self.canonical_index: list[int] = []
		for column, category_id in enumerate(self.category_ids):
			entry = table.entry(int(category_id))
			self.canonical_index.append(len(self.words))
			for word in entry.synonyms:
				self.words.append(word)
				self.word_column.append(column)
		self.word_index: dict[str, int] = {word: i for i, word in enumerate(self.words)}
		self.matrix: np.ndarray = np.stack([space.text(word) for word in self.words])
		self.word_column_array: np.ndarray = np.array(self.word_column, dtype=np.int64)
		self.column_of: dict[int, int] = {int(c): column for column, c in enumerate(self.category_ids)}
		self.group_size: np.ndarray = np.bincount(self.word_column_array, minlength=self.category_ids.size)


	def __len__(self) -> int:
		return int(self.category_ids.size)


	def word_cosines(self, queries: np.ndarray) -> np.ndarray:
		return cosine_matrix(queries, self.matrix)


	def scores(self, cosines: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
		"""Class scores (M x K) and the word index that carries each score (M x K, -1 for averages)."""
		rows, columns = cosines.shape[0], len(self)
		if mode == "canonical":
			carrier = np.tile(np.array(self.canonical_index), (rows, 1))
			return cosines[np.arange(rows)[:, None], carrier], carrier
		if mode == "group_avg":
			totals = np.zeros((rows, columns))
			np.add.at(totals.T, self.word_column_array, cosines.T)
			return totals / self.group_size, np.full((rows, columns), -1)
		if mode == "group_max":
			best = np.full((rows, columns), -np.inf)
			carrier = np.full((rows, columns), -1)
			for index, column in enumerate(self.word_column):
				better = cosines[:, index] > best[:, column]
				best[better, column] = cosines[better, index]
				carrier[better, column] = index
			return best, carrier
		raise ConfigError(f"unknown group mode '{mode}'")


	def scores_backward(self, dscores: np.ndarray, carrier: np.ndarray, mode: str) -> np.ndarray:
		"""Scatter class-score gradients back onto word cosines."""
		rows = dscores.shape[0]
		dcos = np.zeros((rows, len(self.words)))
		if mode == "group_avg":
			dcos += (dscores / self.group_size)[:, self.word_column_array]
			return dcos
		np.add.at(dcos, (np.repeat(np.arange(rows), carrier.shape[1]), carrier.ravel()), dscores.ravel())
		return dcos


	def cosines_backward(self, queries: np.ndarray, cosines: np.ndarray, dcos: np.ndarray) -> np.ndarray:
		return cosine_matrix_grad(queries, self.matrix, cosines, dcos)


"""
example of synonym table file:
	# id	canonical	synonyms
	0	boat	boat,vessel,ship
	1	bus	bus,coach
"""
def read_synonym_table(path: str | Path) -> CategoryTable:
	synonym_sets: list[list[str]] = []
	for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
		if not line.strip() or line.lstrip().startswith("#"):
			continue
		fields = line.split("\t")
		if len(fields) != 3:
			raise FormatError(f"{path}:{number}: expected id<TAB>canonical<TAB>synonyms")
		try:
			category_id = int(fields[0])
		except ValueError:
			raise FormatError(f"{path}:{number}: category id is not an integer: {fields[0]!r}") from None
		canonical = fields[1].strip()
		if category_id != len(synonym_sets):
			raise FormatError(f"{path}:{number}: category ids must be contiguous from 0")
		words = [word.strip() for word in fields[2].split(",") if word.strip()]
		if canonical in words:
			words.remove(canonical)
		synonym_sets.append([canonical] + words)
	return CategoryTable.from_synonyms(synonym_sets)


def write_synonym_table(path: str | Path, table: CategoryTable) -> None:
	lines = ["# id\tcanonical\tsynonyms"]
	lines.extend(f"{entry.category_id}\t{entry.canonical_name}\t{','.join(entry.synonyms)}" for entry in table.entries)
	Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
