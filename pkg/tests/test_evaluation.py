import math
import tempfile
import unittest
import numpy as np

from pathlib import Path

from src.script.errors import DomainError, FormatError, ShapeError
from src.script.evaluation import (IGNORE, ConfusionAccumulator, LabelMap, accumulate, harmonic_mean, miou,
	read_label_map, read_label_volume, split_metrics, video_eval, write_label_map, write_label_volume)


def oracle_tallies(pairs: list[tuple[np.ndarray, np.ndarray]], num_classes: int) -> tuple[np.ndarray, np.ndarray]:
	intersection, union = np.zeros(num_classes, dtype=np.int64), np.zeros(num_classes, dtype=np.int64)
	for pred, gt in pairs:
		for y in range(gt.shape[0]):
			for x in range(gt.shape[1]):
				g, p = int(gt[y, x]), int(pred[y, x])
				if g == IGNORE:
					continue
				for c in range(num_classes):
					intersection[c] += g == c and p == c
					union[c] += g == c or p == c
	return intersection, union


class TestMeanIoU(unittest.TestCase):
	def test_small_example(self):
		gt = LabelMap(np.array([[0, 0], [1, 1]]))
		pred = LabelMap(np.array([[0, 1], [1, 1]]))
		per_class, mean = miou(accumulate(ConfusionAccumulator.empty(3), pred, gt))
		self.assertAlmostEqual(per_class[0], 0.5)
		self.assertAlmostEqual(per_class[1], 2.0 / 3.0)
		self.assertTrue(math.isnan(per_class[2]))
		self.assertAlmostEqual(mean, 100.0 * (0.5 + 2.0 / 3.0) / 2.0)


	def test_ignore_handling(self):
		gt = LabelMap(np.array([[0, 0], [0, 0]]))
		pred = LabelMap(np.array([[0, 0], [IGNORE, IGNORE]]))
		per_class, _ = miou(accumulate(ConfusionAccumulator.empty(2), pred, gt))
		self.assertAlmostEqual(per_class[0], 0.5)
		gt = LabelMap(np.array([[IGNORE, 1]]))
		pred = LabelMap(np.array([[0, 1]]))
		per_class, mean = miou(accumulate(ConfusionAccumulator.empty(2), pred, gt))
		self.assertTrue(math.isnan(per_class[0]))
		self.assertEqual(mean, 100.0)


	def test_against_pixel_oracle(self):
		rng = np.random.default_rng(12)
		pairs = []
		acc = ConfusionAccumulator.empty(5)
		for _ in range(100):
			gt = rng.integers(0, 5, (8, 8)).astype(np.uint16)
			pred = rng.integers(0, 5, (8, 8)).astype(np.uint16)
			gt[rng.random((8, 8)) < 0.1] = IGNORE
			pred[rng.random((8, 8)) < 0.1] = IGNORE
			pairs.append((pred, gt))
			single = accumulate(ConfusionAccumulator.empty(5), LabelMap(pred), LabelMap(gt))
			intersection, union = oracle_tallies([(pred, gt)], 5)
			np.testing.assert_array_equal(single.intersection, intersection)
			np.testing.assert_array_equal(single.union, union)
			acc = acc.merge(single)
		intersection, union = oracle_tallies(pairs, 5)
		np.testing.assert_array_equal(acc.intersection, intersection)
		np.testing.assert_array_equal(acc.union, union)
		present = union > 0
		self.assertAlmostEqual(miou(acc)[1], 100.0 * float(np.mean(intersection[present] / union[present])), places=12)


	def test_ground_truth_against_itself(self):
		gt = LabelMap(np.array([[0, 2, IGNORE], [1, 1, 2]]))
		self.assertEqual(miou(accumulate(ConfusionAccumulator.empty(4), gt, gt))[1], 100.0)


	def test_errors(self):
		with self.assertRaises(DomainError):
			miou(ConfusionAccumulator.empty(3))
		with self.assertRaises(DomainError):
			accumulate(ConfusionAccumulator.empty(2), LabelMap(np.array([[2]])), LabelMap(np.array([[0]])))
		with self.assertRaises(ShapeError):
			accumulate(ConfusionAccumulator.empty(2), LabelMap(np.zeros((1, 2))), LabelMap(np.zeros((2, 1))))
		with self.assertRaises(ShapeError):
			ConfusionAccumulator.empty(2).merge(ConfusionAccumulator.empty(3))


class TestSplitMetrics(unittest.TestCase):
	def test_reported_harmonic_values(self):
		for seen, unseen, expected in ((44.2, 2.4, 4.5), (43.4, 2.9, 5.4), (45.8, 8.5, 14.4)):
			per_class = np.array([seen, seen, unseen]) / 100.0
			metrics = split_metrics(per_class, {0, 1})
			self.assertAlmostEqual(metrics.seen, seen, places=9)
			self.assertAlmostEqual(metrics.unseen, unseen, places=9)
			self.assertAlmostEqual(metrics.harmonic, expected, delta=0.1)


	def test_harmonic_properties(self):
		self.assertAlmostEqual(harmonic_mean(30.0, 30.0), 30.0)
		self.assertEqual(harmonic_mean(0.0, 0.0), 0.0)
		for a, b in ((10.0, 50.0), (1.0, 99.0), (42.0, 7.0)):
			h = harmonic_mean(a, b)
			self.assertLessEqual(h, (a + b) / 2.0)
			self.assertLessEqual(h, 2.0 * min(a, b))
			self.assertAlmostEqual(h, harmonic_mean(b, a))


	def test_nan_classes_skipped(self):
		metrics = split_metrics(np.array([0.5, np.nan, 0.25, np.nan]), {0, 1})
		self.assertAlmostEqual(metrics.seen, 50.0)
		self.assertAlmostEqual(metrics.unseen, 25.0)
		undefined = split_metrics(np.array([0.5, 0.3, np.nan]), {0, 1})
		self.assertTrue(math.isnan(undefined.unseen))
		self.assertEqual(undefined.harmonic, 0.0)


	def test_bad_split(self):
		with self.assertRaises(DomainError):
			split_metrics(np.array([0.1, 0.2]), set())
		with self.assertRaises(DomainError):
			split_metrics(np.array([0.1, 0.2]), {0, 1})


class TestVideo(unittest.TestCase):
	def test_volume_is_one_pixel_set(self):
		rng = np.random.default_rng(13)
		gt = [LabelMap(rng.integers(0, 4, (5, 6))) for _ in range(3)]
		pred = [LabelMap(rng.integers(0, 4, (5, 6))) for _ in range(3)]
		stacked_gt = LabelMap(np.concatenate([f.labels for f in gt]))
		stacked_pred = LabelMap(np.concatenate([f.labels for f in pred]))
		per_class, mean = miou(accumulate(ConfusionAccumulator.empty(4), stacked_pred, stacked_gt))
		video = video_eval(pred, gt, {0, 1}, 4)
		np.testing.assert_allclose(video.per_class_iou, per_class)
		self.assertAlmostEqual(video.miou, mean)
		with self.assertRaises(ShapeError):
			video_eval(pred[:2], gt, {0, 1}, 4)


class TestLabelFiles(unittest.TestCase):
	def test_map_and_volume(self):
		frames = [LabelMap(np.array([[0, IGNORE, 3]])), LabelMap(np.array([[1, 1, 2]]))]
		with tempfile.TemporaryDirectory() as directory:
			directory = Path(directory)
			write_label_map(directory / "a.lbl", frames[0])
			self.assertEqual((directory / "a.lbl").read_bytes()[:4], b"LBL1")
			np.testing.assert_array_equal(read_label_map(directory / "a.lbl").labels, frames[0].labels)
			write_label_volume(directory / "clip.lbv", frames)
			loaded = read_label_volume(directory / "clip.lbv")
		self.assertEqual(len(loaded), 2)
		np.testing.assert_array_equal(loaded[1].labels, frames[1].labels)


	def test_corrupt_files(self):
		with tempfile.TemporaryDirectory() as directory:
			path = Path(directory) / "a.lbl"
			write_label_map(path, LabelMap(np.zeros((2, 2))))
			path.write_bytes(path.read_bytes()[:-1])
			with self.assertRaises(FormatError):
				read_label_map(path)
			path.write_bytes(b"LBV1" + bytes(8))
			with self.assertRaises(FormatError):
				read_label_map(path)


if __name__ == "__main__":
	unittest.main()
