import itertools
import unittest
import numpy as np

from src.script.distill import central_difference, relative_error
from src.script.embeddings import cosine_matrix
from src.script.errors import CapacityError, ConfigError, DomainError, ShapeError
from src.script.losses import (LossTerms, LossWeights, alignment_ce, alignment_ce_grad, bce_mask_loss, bce_mask_loss_grad,
	dice_loss, dice_loss_grad, grounding_loss, grounding_loss_from_scores, grounding_loss_grad, grounding_scores,
	hungarian_match, mask_cost_matrix, total_loss)


def brute_force_match(cost: np.ndarray) -> float:
	rows, columns = cost.shape
	return min(sum(cost[i, q] for i, q in enumerate(p)) for p in itertools.permutations(range(columns), rows))


class TestMaskLosses(unittest.TestCase):
	def test_bce_values(self):
		self.assertAlmostEqual(bce_mask_loss(np.full((2, 2), 0.5), np.eye(2)), np.log(2.0))
		self.assertLess(bce_mask_loss(np.eye(3), np.eye(3)), 1e-6)


	def test_dice_values(self):
		gt = np.array([[1.0, 0.0], [1.0, 0.0]])
		self.assertAlmostEqual(dice_loss(gt, gt), 0.0)
		self.assertAlmostEqual(dice_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0])), 2.0 / 3.0)


	def test_gradients(self):
		rng = np.random.default_rng(4)
		for loss_fn, grad_fn in ((bce_mask_loss, bce_mask_loss_grad), (dice_loss, dice_loss_grad)):
			for _ in range(20):
				pred = rng.uniform(0.05, 0.95, (3, 4))
				gt = (rng.random((3, 4)) < 0.5).astype(np.float64)
				numeric = central_difference(lambda p: loss_fn(p, gt), pred)
				self.assertLessEqual(relative_error(grad_fn(pred, gt), numeric), 1e-4)


	def test_clamped_pixels_have_no_gradient(self):
		grad = bce_mask_loss_grad(np.array([0.0, 1.0, 0.5]), np.array([1.0, 0.0, 1.0]))
		self.assertEqual(grad[0], 0.0)
		self.assertEqual(grad[1], 0.0)
		self.assertLess(grad[2], 0.0)


	def test_shape_mismatch(self):
		with self.assertRaises(ShapeError):
			dice_loss(np.zeros(3), np.zeros(4))


	def test_cost_matrix_matches_losses(self):
		rng = np.random.default_rng(5)
		pred = rng.uniform(0.01, 0.99, (4, 9))
		gt = rng.random((3, 9)) < 0.4
		cost = mask_cost_matrix(pred, gt)
		for i in range(3):
			for q in range(4):
				expected = bce_mask_loss(pred[q], gt[i]) + dice_loss(pred[q], gt[i])
				self.assertAlmostEqual(cost[i, q], expected, places=12)


class TestAlignmentCrossEntropy(unittest.TestCase):
	def test_uniform_logits(self):
		self.assertAlmostEqual(alignment_ce(np.zeros((3, 4)), [0, 3, 2]), np.log(4.0))


	def test_large_logits_stable(self):
		value = alignment_ce(np.array([[1000.0, 0.0, -1000.0]]), [0])
		self.assertTrue(np.isfinite(value))
		self.assertAlmostEqual(value, 0.0)


	def test_gradient(self):
		rng = np.random.default_rng(6)
		for _ in range(20):
			logits, labels = 3.0 * rng.standard_normal((4, 5)), rng.integers(0, 5, 4)
			numeric = central_difference(lambda x: alignment_ce(x, labels), logits)
			self.assertLessEqual(relative_error(alignment_ce_grad(logits, labels), numeric), 1e-4)


	def test_row_shift_invariance(self):
		rng = np.random.default_rng(10)
		logits, labels = rng.standard_normal((4, 6)), [0, 5, 2, 2]
		shifted = logits + np.array([[3.0], [-7.5], [0.25], [40.0]])
		self.assertAlmostEqual(alignment_ce(logits, labels), alignment_ce(shifted, labels), places=10)
		np.testing.assert_allclose(alignment_ce_grad(logits, labels), alignment_ce_grad(shifted, labels), atol=1e-12)


	def test_weighted_rows(self):
		logits = np.array([[np.log(3.0), 0.0], [0.0, 0.0]])
		expected = (-np.log(0.75) + 0.1 * np.log(2.0)) / 1.1
		self.assertAlmostEqual(alignment_ce(logits, [0, 1], [1.0, 0.1]), expected, places=12)
		rng = np.random.default_rng(11)
		logits, labels = rng.standard_normal((5, 4)), rng.integers(0, 4, 5)
		self.assertAlmostEqual(alignment_ce(logits, labels, np.full(5, 0.3)), alignment_ce(logits, labels), places=12)
		for _ in range(10):
			logits, weights = 3.0 * rng.standard_normal((5, 4)), rng.uniform(0.05, 1.0, 5)
			numeric = central_difference(lambda x: alignment_ce(x, labels, weights), logits)
			self.assertLessEqual(relative_error(alignment_ce_grad(logits, labels, weights), numeric), 1e-4)
		with self.assertRaises(DomainError):
			alignment_ce(logits, labels, np.zeros(5))
		with self.assertRaises(DomainError):
			alignment_ce(logits, labels, [1.0, -1.0, 1.0, 1.0, 1.0])


	def test_label_range(self):
		with self.assertRaises(DomainError):
			alignment_ce(np.zeros((2, 3)), [0, 3])
		with self.assertRaises(ShapeError):
			alignment_ce(np.zeros((2, 3)), [0])


class TestGrounding(unittest.TestCase):
	def test_scores_by_loop(self):
		rng = np.random.default_rng(7)
		regions = [rng.standard_normal((k, 5)) for k in (2, 1, 3)]
		words = [rng.standard_normal((k, 5)) for k in (1, 3, 2)]
		scores = grounding_scores(regions, words).scores
		for a in range(3):
			for b in range(3):
				expected = np.mean(cosine_matrix(regions[a], words[b]).max(axis=0))
				self.assertAlmostEqual(scores[a, b], expected, places=12)


	def test_matched_captions_lower_loss(self):
		rng = np.random.default_rng(8)
		words = [rng.standard_normal((2, 6)) for _ in range(3)]
		regions = [w.copy() for w in words]
		aligned = grounding_loss(regions, words)
		shuffled = grounding_loss(regions, words[1:] + words[:1])
		self.assertLess(aligned, shuffled)


	def test_batch_permutation(self):
		rng = np.random.default_rng(11)
		regions = [rng.standard_normal((k, 5)) for k in (2, 1, 3, 2)]
		words = [rng.standard_normal((k, 5)) for k in (1, 3, 2, 2)]
		order = [2, 0, 3, 1]
		permuted_regions, permuted_words = [regions[i] for i in order], [words[i] for i in order]
		self.assertAlmostEqual(grounding_loss(regions, words), grounding_loss(permuted_regions, permuted_words), places=10)
		grads = grounding_loss_grad(regions, words)
		for position, grad in enumerate(grounding_loss_grad(permuted_regions, permuted_words)):
			np.testing.assert_allclose(grad, grads[order[position]], atol=1e-12)


	def test_single_image_is_zero(self):
		self.assertEqual(grounding_loss_from_scores(np.array([[0.3]]), 10.0), 0.0)


	def test_gradient(self):
		rng = np.random.default_rng(9)
		checked = 0
		while checked < 10:
			regions = [rng.standard_normal((int(rng.integers(1, 4)), 6)) for _ in range(3)]
			words = [rng.standard_normal((int(rng.integers(1, 4)), 6)) for _ in range(3)]
			cached = grounding_scores(regions, words)
			gaps = [np.sort(cached.cosines[cached.region_owner == image], axis=0) for image in range(3)]
			if any(g.shape[0] > 1 and np.min(g[-1] - g[-2]) < 1e-3 for g in gaps):
				continue
			checked += 1
			sizes = np.cumsum([r.shape[0] for r in regions])[:-1]
			numeric = central_difference(lambda x: grounding_loss(np.split(x, sizes), words), np.concatenate(regions))
			analytic = np.concatenate(grounding_loss_grad(regions, words))
			self.assertLessEqual(relative_error(analytic, numeric), 1e-4)


	def test_empty_caption(self):
		with self.assertRaises(DomainError):
			grounding_scores([np.ones((1, 3)), np.ones((1, 3))], [np.ones((1, 3)), np.zeros((0, 3))])


class TestHungarianMatch(unittest.TestCase):
	def test_against_permutations(self):
		rng = np.random.default_rng(10)
		for _ in range(200):
			n = int(rng.integers(1, 7))
			m = int(rng.integers(n, 7))
			cost = rng.random((n, m))
			result = hungarian_match(cost)
			self.assertEqual(sorted(result.assignment), list(range(n)))
			self.assertEqual(len(set(result.assignment.values())), n)
			self.assertAlmostEqual(result.total_cost, brute_force_match(cost), places=9)


	def test_ties_pick_smallest_query(self):
		self.assertEqual(hungarian_match(np.zeros((2, 3))).assignment, {0: 0, 1: 1})
		self.assertEqual(hungarian_match(np.array([[0.0, 0.0, 5.0], [5.0, 0.0, 0.0]])).assignment, {0: 0, 1: 1})
		self.assertEqual(hungarian_match(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])).assignment, {0: 1, 1: 0})


	def test_capacity(self):
		with self.assertRaises(CapacityError):
			hungarian_match(np.zeros((3, 2)))
		with self.assertRaises(DomainError):
			hungarian_match(np.array([[np.inf, 0.0]]))


class TestTotalLoss(unittest.TestCase):
	def test_weighted_sum(self):
		breakdown = total_loss(LossTerms(1.0, 2.0, 3.0, 4.0), LossWeights())
		self.assertAlmostEqual(breakdown.total, 5.0 + 4.0 + 6.0 + 8.0)
		self.assertEqual((breakdown.mask, breakdown.ce, breakdown.grounding, breakdown.kd), (1.0, 2.0, 3.0, 4.0))


	def test_unit_terms_with_default_weights(self):
		self.assertAlmostEqual(total_loss(LossTerms(1.0, 1.0, 1.0, 1.0), LossWeights()).total, 11.0)


	def test_zero_distill_weight_drops_term(self):
		terms = LossTerms(1.0, 1.0, 1.0, 100.0)
		self.assertAlmostEqual(total_loss(terms, LossWeights(kd=0.0)).total, 9.0)


	def test_negative_weight(self):
		with self.assertRaises(ConfigError):
			LossWeights(mask=-1.0)


if __name__ == "__main__":
	unittest.main()
