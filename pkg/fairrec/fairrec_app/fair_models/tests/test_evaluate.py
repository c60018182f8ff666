"""
Tests for histograms, group means, accuracy/fairness errors and the
alpha and beta sweeps.
"""

import os
import unittest

import numpy as np

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models import dataset, evaluate, minority_index, neural
from fairrec.fairrec_app.fair_models.FairErrors import GroupError, ModelShapeError
from fairrec.fairrec_app.fair_models.dataset import SplitSpec
from fairrec.fairrec_app.fair_models.pmf import FactorModel
from fairrec.fairrec_app.fair_models.tests.fixtures import (
    TOY_THRESHOLDS,
    constant_network,
    fixed_index,
    matrix_from_cells,
    random_factors,
    toy_groups,
    toy_matrix,
)


class HistogramTests(unittest.TestCase):

    def test_two_bins(self):
        self.assertEqual(list(evaluate.histogram([0, 0, 1], bins=2).counts), [2, 1])

    def test_single_value(self):
        counts = evaluate.histogram([0.3], bins=5).counts
        self.assertEqual(counts.sum(), 1)
        self.assertEqual(np.count_nonzero(counts), 1)

    def test_mass_is_conserved(self):
        values = np.random.default_rng(0).uniform(-1, 1, 500)
        self.assertEqual(evaluate.histogram(values).counts.sum(), 500)

    def test_empty_population(self):
        with self.assertRaises(ModelShapeError):
            evaluate.histogram([np.nan])

    def test_index_histograms_cover_groups(self):
        ratings, groups = toy_matrix(), toy_groups()
        im = minority_index.compute_im(ratings, groups, TOY_THRESHOLDS)
        um = minority_index.compute_um(ratings, im, TOY_THRESHOLDS)
        frame = evaluate.index_histograms(im, um, groups, bins=4)
        populations = frame.groupby(["index", "population"])["count"].sum().to_dict()
        self.assertEqual(populations, {("IM", "all"): 4, ("UM", "all"): 5, ("UM", "female"): 2, ("UM", "male"): 3})


class GroupMeanTests(unittest.TestCase):

    def setUp(self):
        self.ratings, self.groups = toy_matrix(), toy_groups()
        self.im = minority_index.compute_im(self.ratings, self.groups, TOY_THRESHOLDS)

    def test_single_user_per_group(self):
        # male 1 gets a and c, female 1 gets b
        lists = {0: np.array([0, 2]), 2: np.array([1])}
        means = evaluate.group_im_mean(lists, self.im, self.groups, self.ratings.user_ids)
        self.assertAlmostEqual(means["male"], 0.75)
        self.assertAlmostEqual(means["female"], -1.0)

    def test_two_items(self):
        im = minority_index.ImIndex(self.im.mode, np.array([0.2, 0.4, 0.0, 0.0]), self.im.neutral,
                                    self.im.counts, self.im.item_ids)
        means = evaluate.group_im_mean({0: np.array([0, 1]), 2: np.array([2])}, im, self.groups,
                                       self.ratings.user_ids)
        self.assertAlmostEqual(means["male"], 0.3)

    def test_group_without_items(self):
        with self.assertRaises(GroupError):
            evaluate.group_im_mean({0: np.array([0])}, self.im, self.groups, self.ratings.user_ids)

    def test_means_are_bounded_by_item_values(self):
        table = evaluate.prediction_im_means(self.ratings, self.im, self.groups)
        self.assertEqual(set(table["type"]), {"female", "male"})
        self.assertTrue(table["im_mean"].between(self.im.values.min(), self.im.values.max()).all())


class AccuracyErrorTests(unittest.TestCase):

    def setUp(self):
        self.held_out = matrix_from_cells([(0, 0, 4), (0, 1, 2)], 1, 3)

    def test_exact_predictions(self):
        factors = FactorModel(np.array([[1.0]]), np.array([[4.0], [2.0], [0.0]]))
        result = evaluate.accuracy_error({0: np.array([0, 1])}, self.held_out, factors)
        self.assertEqual(result.mse, 0.0)
        self.assertEqual(result.coverage, 1.0)

    def test_single_item(self):
        factors = FactorModel(np.array([[1.0]]), np.array([[3.0], [2.0], [0.0]]))
        result = evaluate.accuracy_error({0: np.array([0])}, self.held_out, factors)
        self.assertEqual(result.mse, 1.0)

    def test_items_without_held_out_rating_only_lower_coverage(self):
        factors = FactorModel(np.array([[1.0]]), np.array([[3.0], [2.0], [0.0]]))
        result = evaluate.accuracy_error({0: np.array([0, 2])}, self.held_out, factors)
        self.assertEqual((result.mse, result.coverage, result.hits), (1.0, 0.5, 1))

    def test_no_hits_is_flagged(self):
        factors = FactorModel(np.array([[1.0]]), np.zeros((3, 1)))
        result = evaluate.accuracy_error({0: np.array([2])}, self.held_out, factors)
        self.assertTrue(result.flagged)
        self.assertTrue(np.isnan(result.mse))


class FairnessErrorTests(unittest.TestCase):

    def setUp(self):
        self.ratings, self.groups = toy_matrix(), toy_groups()

    def test_distance_to_list_mean(self):
        um = fixed_index([0.7, 0.5, 0.2, 0.2, 0.5])
        im = fixed_index([0.4, 0.6, 0.5, 0.2])
        errors = evaluate.fairness_error({0: np.array([0, 1]), 2: np.array([3])}, um, im, self.groups,
                                         self.ratings.user_ids)
        self.assertAlmostEqual(errors["male"], 0.04)
        self.assertAlmostEqual(errors["female"], 0.0)

    def test_user_without_um(self):
        um = fixed_index([np.nan, 0.5, 0.2, 0.2, 0.5])
        with self.assertRaises(ModelShapeError):
            evaluate.fairness_error({0: np.array([0])}, um, fixed_index([0.1] * 4), self.groups,
                                    self.ratings.user_ids)


class NormalizeSeriesTests(unittest.TestCase):

    def test_preserves_argmin_and_argmax(self):
        values = np.array([3.0, 1.0, 4.0, 1.5])
        normalized = evaluate.normalize_series(values)
        self.assertEqual(np.argmin(normalized), np.argmin(values))
        self.assertEqual(np.argmax(normalized), np.argmax(values))
        self.assertEqual((normalized.min(), normalized.max()), (0.0, 1.0))

    def test_flat_series(self):
        np.testing.assert_array_equal(evaluate.normalize_series([2.0, 2.0, 2.0]), [0.5, 0.5, 0.5])

    def test_undefined_series(self):
        np.testing.assert_array_equal(evaluate.normalize_series([np.nan, np.nan]), [0.5, 0.5])


class SweepTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        rng = np.random.default_rng(7)
        cells = [(u, i, int(rng.integers(1, 6))) for u in range(12) for i in range(10) if rng.random() < 0.6]
        cls.ratings = matrix_from_cells(cells, 12, 10)
        users = "".join(f"{u + 1}::{'F' if u % 3 == 0 else 'M'}::25::0::0\n" for u in range(12)).encode()
        cls.groups = dataset.assign_groups(dataset.parse_users(users), "gender")
        parts = dataset.split(cls.ratings, SplitSpec((0.8, 0.0, 0.2), seed=1))
        cls.train, cls.test = parts.train, parts.test
        thresholds = minority_index.ThresholdConfig(min_side_votes=0)
        cls.im = minority_index.compute_im(cls.train, cls.groups, thresholds)
        cls.um = minority_index.compute_um(cls.train, cls.im, thresholds)
        cls.factors = random_factors(cls.ratings, factors=2, seed=3)

    def test_constant_network_gives_flat_curves(self):
        result = evaluate.beta_sweep(constant_network(5, 0.2), self.factors, self.train, self.test, self.groups,
                                     minority_index.normalize(self.im), minority_index.normalize(self.um),
                                     beta_grid=[0.0, 0.5, 1.0], n=3,
                                     users=[u for u in range(12) if self.um.present[u]])
        for column in result.normalized.columns.drop("beta"):
            np.testing.assert_array_equal(result.normalized[column], 0.5)
        self.assertEqual(result.optimum, 0.0)
        self.assertEqual(list(result.curves.columns),
                         ["beta", "accuracy_error", "coverage", "fairness_female", "fairness_male"])

    def test_sweep_is_deterministic(self):
        mln = neural.init_mln(input_width=5, hidden=(4,), seed=1)
        kwargs = dict(beta_grid=[0.0, 0.3, 1.0], n=3, users=[u for u in range(12) if self.um.present[u]])
        args = (mln, self.factors, self.train, self.test, self.groups,
                minority_index.normalize(self.im), minority_index.normalize(self.um))
        first = evaluate.beta_sweep(*args, max_workers=3, **kwargs)
        second = evaluate.beta_sweep(*args, max_workers=1, **kwargs)
        self.assertTrue(first.curves.equals(second.curves))
        self.assertEqual(first.optimum, second.optimum)

    def test_alpha_sweep_survivors_shrink(self):
        survivors, accuracy = evaluate.alpha_sweep(self.factors, self.im, self.train, self.test, self.groups,
                                                   alpha_grid=[0.0, 0.1, 0.3], n=3)
        self.assertEqual(len(survivors), 6)
        self.assertEqual(list(accuracy.columns), ["alpha", "group", "accuracy_error", "coverage", "hits"])
        for _, group in survivors.groupby("group"):
            self.assertTrue(group["survivors"].is_monotonic_decreasing)
            means = group["mean_abs_im"].dropna()
            self.assertTrue(means.is_monotonic_increasing)


def four_users():
    """Users 1-2 female, 3-4 male."""
    users = b"1::F::25::0::0\n2::F::25::0::0\n3::M::25::0::0\n4::M::25::0::0\n"
    return dataset.assign_groups(dataset.parse_users(users), "gender")


class AlphaTrendTests(unittest.TestCase):
    """Heuristic filter on nine items; item 8 is neutral and already voted by everybody."""

    def setUp(self):
        self.groups = four_users()
        self.train = matrix_from_cells([(u, 8, 3) for u in range(4)], 4, 9)
        self.test = matrix_from_cells([(u, i, 3) for u in range(4) for i in range(8)], 4, 9)
        values = np.array([0.01, 0.04, 0.08, 0.3, -0.01, -0.04, -0.08, -0.3, 0.0])
        neutral = np.arange(9) == 8
        self.im = minority_index.ImIndex(minority_index.ImMode.POOLED, values, neutral,
                                         np.zeros((9, 4), dtype=np.int64), np.arange(1, 10))
        self.factors = FactorModel(np.ones((4, 1)), np.array([[3.0], [3.5], [4.0], [5.0], [3.0],
                                                              [3.5], [4.0], [5.0], [3.0]]))
        self.survivors, self.accuracy = evaluate.alpha_sweep(self.factors, self.im, self.train, self.test,
                                                             self.groups, alpha_grid=[0.0, 0.025, 0.05, 0.1, 0.2],
                                                             n=10)

    def test_accuracy_error_grows_with_alpha(self):
        for name in ("female", "male"):
            curve = self.accuracy[self.accuracy["group"] == name]
            np.testing.assert_allclose(curve["accuracy_error"], [1.3125, 1.75, 2.5, 4.0, 4.0])
            self.assertTrue(curve["accuracy_error"].is_monotonic_increasing)
            self.assertEqual(list(curve["hits"]), [8, 6, 4, 2, 2])

    def test_filtered_predictions_grow_more_extreme(self):
        for name in ("female", "male"):
            curve = self.survivors[self.survivors["group"] == name]
            self.assertEqual(list(curve["survivors"]), [8, 6, 4, 2, 2])
            np.testing.assert_allclose(curve["mean_abs_im"], [0.1075, 0.14, 0.19, 0.3, 0.3])
            self.assertTrue(curve["mean_abs_im"].is_monotonic_increasing)


def tradeoff_network() -> neural.MlnModel:
    """
    ReLU network over [p_u, q_i, beta] with p_u = (g, 0, 0, 1) and
    q_i = (0, m, e, prediction): outputs e at beta 1 and |m - g| at beta 0.
    """
    hidden = np.zeros((9, 3))
    hidden[6, 0], hidden[8, 0] = 1.0, 1.0
    hidden[5, 1], hidden[0, 1], hidden[8, 1] = 1.0, -1.0, -1.0
    hidden[0, 2], hidden[5, 2], hidden[8, 2] = 1.0, -1.0, -1.0
    return neural.MlnModel([hidden, np.ones((3, 1))], [np.array([-1.0, 0.0, 0.0]), np.zeros(1)], dropout=0.0)


class BetaTrendTests(unittest.TestCase):

    def setUp(self):
        self.groups = four_users()
        self.train = matrix_from_cells([(u, 8, 3) for u in range(4)], 4, 9)
        self.test = matrix_from_cells([(u, i, 3) for u in range(4) for i in range(8)], 4, 9)
        minority = np.array([0.0, 0.1, 0.9, 1.0, 0.5, 0.5, 0.4, 0.6, 0.5])
        predictions = np.array([5.0, 4.5, 4.5, 5.0, 3.0, 3.0, 3.2, 3.2, 3.0])
        error = (3.0 - predictions) ** 2 / 4
        gender = np.array([0.0, 0.0, 1.0, 1.0])
        P = np.column_stack([gender, np.zeros(4), np.zeros(4), np.ones(4)])
        Q = np.column_stack([np.zeros(9), minority, error, predictions])
        self.factors = FactorModel(P, Q)
        self.result = evaluate.beta_sweep(tradeoff_network(), self.factors, self.train, self.test, self.groups,
                                          fixed_index(minority), fixed_index(gender),
                                          beta_grid=[0.0, 0.5, 1.0], n=2, max_workers=1)

    def test_accuracy_improves_as_beta_grows(self):
        curves = self.result.curves
        np.testing.assert_allclose(curves["accuracy_error"], [3.125, 0.0, 0.0])
        self.assertTrue(curves["accuracy_error"].is_monotonic_decreasing)

    def test_fairness_improves_as_beta_shrinks(self):
        curves = self.result.curves
        for column in ("fairness_female", "fairness_male"):
            np.testing.assert_allclose(curves[column], [0.0025, 0.25, 0.25])
            self.assertTrue(curves[column].is_monotonic_increasing)

    def test_balanced_optimum(self):
        # every grid point scores 1; ties go to the lowest beta
        self.assertEqual(self.result.optimum, 0.0)


@unittest.skipUnless(os.getenv(settings.ENV_ML1M_DIR), f"{settings.ENV_ML1M_DIR} not set")
class MovieLens1MPredictionImTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.ratings, cls.users = dataset.load_movielens(os.environ[settings.ENV_ML1M_DIR])
        parts = dataset.split(cls.ratings, SplitSpec((0.8, 0.0, 0.2), seed=settings.SEED))
        cls.train, cls.test = parts.train, parts.test

    def check_signs(self, scheme, minority, majority):
        groups = dataset.assign_groups(self.users, scheme)
        im = minority_index.compute_im(self.train, groups)
        means = evaluate.prediction_im_means(self.test, im, groups).set_index("type")["im_mean"]
        self.assertLess(means[minority], 0.0)
        self.assertGreater(means[majority], 0.0)

    def test_gender(self):
        self.check_signs("gender", "female", "male")

    def test_youth(self):
        self.check_signs("youth", "senior", "young")


if __name__ == "__main__":
    unittest.main()
