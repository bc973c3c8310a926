import json
import tempfile
import unittest
import numpy as np

from pathlib import Path

from src.script.config import load_config, substream
from src.script.dataset import (build_dataset, generate_layout, generate_video_layouts, gt_label_map, load_clips,
	load_dataset_config, load_split, read_features, write_dataset, write_features)
from src.script.diversify import read_synonym_table
from src.script.embeddings import read_embedding_store
from src.script.errors import FormatError
from src.script.evaluation import IGNORE, read_label_map

from tests.fixtures import small_config, small_space


class TestLayouts(unittest.TestCase):
	def test_rectangles(self):
		for image_id in range(20):
			layout = generate_layout(substream(0, "layout", image_id), 12, 12, (0, 2, 5, 7, 9), image_id)
			self.assertTrue(1 <= len(layout.instances) <= 4)
			labels = [i.category_id for i in layout.instances]
			self.assertEqual(len(set(labels)), len(labels))
			self.assertTrue(set(labels) <= {0, 2, 5, 7, 9})
			for instance in layout.instances:
				self.assertGreater(int(layout.mask(instance.index).sum()), 0)
				self.assertEqual(instance.owner_id, image_id)


	def test_video_keeps_instances(self):
		frames = generate_video_layouts(substream(0, "video"), 10, 10, (0, 1, 2, 3), 1000, 50, 5)
		self.assertEqual([f.image_id for f in frames], [50, 51, 52, 53, 54])
		self.assertTrue(all(f.instances == frames[0].instances for f in frames))
		self.assertTrue(all(i.owner_id == 1000 for i in frames[0].instances))


class TestSyntheticDataset(unittest.TestCase):
	def setUp(self):
		self.config = small_config()
		self.space = small_space(self.config)
		self.dataset = build_dataset(self.config, self.space)


	def test_sizes_and_splits(self):
		self.assertEqual(len(self.dataset.train), 6)
		self.assertEqual(len(self.dataset.val), 4)
		self.assertEqual(len(self.dataset.clips), 1)
		self.assertEqual(len(self.dataset.clips[0]), 3)
		for batch in self.dataset.train:
			self.assertTrue(set(batch.gt_labels) <= set(self.config.seen))
			self.assertEqual(batch.features.shape, (8, 8, 8))
		self.assertEqual([b.image_id for b in self.dataset.val], [6, 7, 8, 9])


	def test_masks_disjoint(self):
		for batch in self.dataset.train + self.dataset.val + self.dataset.clips[0]:
			self.assertLessEqual(int(batch.gt_masks.sum(axis=0).max()), 1)


	def test_deterministic(self):
		again = build_dataset(self.config, small_space(self.config))
		for first, second in zip(self.dataset.train + self.dataset.val, again.train + again.val):
			np.testing.assert_array_equal(first.features, second.features)
			self.assertEqual(first.gt_labels, second.gt_labels)


	def test_synonym_scores_attached(self):
		for batch in self.dataset.train:
			self.assertEqual(len(batch.synonym_scores), len(batch.gt_labels))
			for scores in batch.synonym_scores:
				self.assertEqual(scores.shape, (3,))
				self.assertAlmostEqual(float(scores.sum()), 1.0, places=12)


	def test_gt_label_map(self):
		batch = self.dataset.train[0]
		labels = gt_label_map(batch).labels
		for mask, label in zip(batch.gt_masks, batch.gt_labels):
			self.assertTrue(np.all(labels[mask] == label))
		self.assertTrue(np.all(labels[~batch.gt_masks.any(axis=0)] == IGNORE))


	def test_write_and_load(self):
		with tempfile.TemporaryDirectory() as directory:
			write_dataset(self.dataset, self.config, self.space, directory)
			root = Path(directory)
			for name in ("config.txt", "teacher.emb", "teacher.emb.words", "synonyms.tsv", "split.txt"):
				self.assertTrue((root / name).exists(), name)
			self.assertEqual(load_dataset_config(root), self.config)
			table = read_synonym_table(root / "synonyms.tsv")
			self.assertEqual(table, self.space.table)
			words, _ = read_embedding_store(root / "teacher.emb")
			self.assertEqual(words, self.space.table.words())
			self.assertIn("unseen = 4,5", (root / "split.txt").read_text(encoding="utf-8"))
			record = json.loads((root / "train" / "manifest.jsonl").read_text(encoding="utf-8").splitlines()[0])
			self.assertEqual(record["image_id"], 0)
			np.testing.assert_array_equal(read_label_map(root / "val" / "000006.lbl").labels,
				gt_label_map(self.dataset.val[0]).labels)

			train = load_split(root, "train", table)
			clips = load_clips(root, table)
		self.assertEqual(len(train), 6)
		for loaded, original in zip(train, self.dataset.train):
			self.assertEqual(loaded.gt_labels, original.gt_labels)
			self.assertEqual(loaded.gt_words, original.gt_words)
			np.testing.assert_array_equal(loaded.gt_masks, original.gt_masks)
			np.testing.assert_allclose(loaded.features, original.features, atol=1e-5)
			np.testing.assert_allclose(loaded.synonym_scores[0], original.synonym_scores[0], rtol=1e-12)
		self.assertEqual(len(clips), 1)
		for loaded, original in zip(clips[0], self.dataset.clips[0]):
			np.testing.assert_array_equal(gt_label_map(loaded).labels, gt_label_map(original).labels)


	def test_override_config(self):
		with tempfile.TemporaryDirectory() as directory:
			write_dataset(self.dataset, self.config, self.space, directory)
			override = Path(directory) / "run.txt"
			override.write_text("steps = 9\ndiversify = none\n", encoding="utf-8")
			config = load_dataset_config(directory, override)
			self.assertEqual(load_config(override).num_categories, 12)
		self.assertEqual(config.steps, 9)
		self.assertEqual(config.diversify, "none")
		self.assertEqual(config.num_categories, 6)


class TestFeatureFiles(unittest.TestCase):
	def test_bad_magic(self):
		with tempfile.TemporaryDirectory() as directory:
			path = Path(directory) / "x.fea"
			write_features(path, np.ones((2, 2, 3)))
			np.testing.assert_array_equal(read_features(path), np.ones((2, 2, 3)))
			path.write_bytes(b"FEA0" + path.read_bytes()[4:])
			with self.assertRaises(FormatError):
				read_features(path)


if __name__ == "__main__":
	unittest.main()
