"""
Tests for the item and user minority indexes.

The toy values are the hand-computed IM and UM of the five-user,
four-item matrix in ``synthetic.toy_fixture``.
"""

import os
import tempfile
import unittest

import numpy as np
import pandas as pd
from hypothesis import assume, given, settings as hypothesis_settings
from hypothesis import strategies as st

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models import dataset, minority_index
from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, GroupError, ModelShapeError
from fairrec.fairrec_app.fair_models.dataset import GroupLabel
from fairrec.fairrec_app.fair_models.minority_index import ImMode, ThresholdConfig, UmMode
from fairrec.fairrec_app.fair_models.tests.fixtures import (
    TOY_THRESHOLDS,
    small_problems,
    toy_groups,
    toy_matrix,
)


def brute_force_im(ratings, labels, cfg, mode):
    """IM from explicit voter sets, one item at a time."""
    values = []
    for item in range(ratings.num_items):
        sets = {"maj_up": set(), "maj_down": set(), "min_up": set(), "min_down": set()}
        for u, i, r in zip(ratings.users, ratings.items, ratings.ratings):
            if i != item:
                continue
            side = "maj" if labels[u] == GroupLabel.MAJORITY else "min"
            if r >= cfg.like_threshold:
                sets[f"{side}_up"].add(u)
            elif r <= cfg.dislike_threshold:
                sets[f"{side}_down"].add(u)
        maj_up, maj_down = len(sets["maj_up"]), len(sets["maj_down"])
        min_up, min_down = len(sets["min_up"]), len(sets["min_down"])
        maj, mino = maj_up + maj_down, min_up + min_down
        if maj < cfg.min_side_votes or mino < cfg.min_side_votes or maj + mino == 0:
            values.append(0.0)
        elif mode is ImMode.POOLED:
            values.append(((maj_up - maj_down) - (min_up - min_down)) / (maj + mino))
        else:
            maj_score = (maj_up - maj_down) / maj if maj else 0.0
            min_score = (min_up - min_down) / mino if mino else 0.0
            values.append(maj_score - min_score)
    return np.asarray(values)


def brute_force_um(ratings, im_values, cfg, mode):
    """UM by summing each user's weighted votes in a plain loop."""
    values = []
    for user in range(ratings.num_users):
        total, count = 0.0, 0
        for u, i, r in zip(ratings.users, ratings.items, ratings.ratings):
            if u == user:
                total += (float(r) - cfg.midpoint) * im_values[i]
                count += 1
        if count == 0:
            values.append(np.nan)
        elif mode is UmMode.PER_FORMULA:
            values.append(total / ((ratings.max_rating - cfg.midpoint) * count))
        else:
            values.append(total / ratings.max_rating)
    return np.asarray(values)


class ToyIndexTests(unittest.TestCase):

    def setUp(self):
        self.ratings = toy_matrix()
        self.groups = toy_groups()
        self.im = minority_index.compute_im(self.ratings, self.groups, TOY_THRESHOLDS, ImMode.POOLED)

    def test_pooled_im(self):
        np.testing.assert_allclose(self.im.values, [1.0, -1.0, 0.5, -0.6])
        self.assertFalse(self.im.neutral.any())

    def test_score_difference_im(self):
        im = minority_index.compute_im(self.ratings, self.groups, TOY_THRESHOLDS, "scorediff")
        self.assertAlmostEqual(im.value_of(1), 2.0)

    def test_value_of_unknown_item(self):
        for raw in (0, 3.5, 99):
            with self.assertRaises(ModelShapeError):
                self.im.value_of(raw)
        self.assertAlmostEqual(self.im.value_of(4), -0.6)

    def test_um_divided_by_max_rating(self):
        um = minority_index.compute_um(self.ratings, self.im, TOY_THRESHOLDS, UmMode.TOY_DIVIDE_BY_NMAX)
        np.testing.assert_allclose(um.values, [0.48, 0.82, -0.72, -0.94, 0.82])

    def test_um_per_formula(self):
        um = minority_index.compute_um(self.ratings, self.im, TOY_THRESHOLDS, "formula")
        self.assertAlmostEqual(um.as_dict()[1], 0.4)

    def test_classification_table(self):
        um = minority_index.compute_um(self.ratings, self.im, TOY_THRESHOLDS, UmMode.TOY_DIVIDE_BY_NMAX)
        table = minority_index.classify_users(um, self.groups).set_index("type")
        self.assertEqual(table.loc["female", "correct"], 2)
        self.assertEqual(table.loc["female", "incorrect"], 0)
        self.assertEqual(table.loc["male", "correct"], 3)
        self.assertEqual(table.loc["male", "correct_pct"], 100.0)

    def test_min_votes_make_items_neutral(self):
        cfg = ThresholdConfig(min_side_votes=3)
        im = minority_index.compute_im(self.ratings, self.groups, cfg)
        # females cast only two votes per item
        self.assertTrue(im.neutral.all())
        np.testing.assert_array_equal(im.values, np.zeros(4))
        self.assertEqual(set(im.to_frame()["flag"]), {minority_index.FLAG_NEUTRAL})

    def test_empty_group(self):
        users = dataset.parse_users(b"1::M::25::0::0\n2::M::25::0::0\n3::M::25::0::0\n"
                                    b"4::M::25::0::0\n5::M::25::0::0\n")
        with self.assertRaises(GroupError):
            minority_index.compute_im(self.ratings, dataset.assign_groups(users, "gender"), TOY_THRESHOLDS)

    def test_like_threshold_above_scale(self):
        with self.assertRaises(ConfigError):
            minority_index.compute_im(self.ratings, self.groups, ThresholdConfig(like_threshold=6))

    def test_invalid_thresholds(self):
        with self.assertRaises(ConfigError):
            ThresholdConfig(like_threshold=2, dislike_threshold=2)

    def test_unknown_modes(self):
        with self.assertRaises(ConfigError):
            ImMode.parse("average")
        with self.assertRaises(ConfigError):
            UmMode.parse("mean")

    def test_export_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "im.csv")
            minority_index.export_csv(self.im, path)
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["raw_id", "value", "flag"])
        self.assertEqual(list(frame["raw_id"]), [1, 2, 3, 4])


class NormalizeTests(unittest.TestCase):

    def test_linear_map(self):
        np.testing.assert_allclose(minority_index.normalize([-1, 0, 1]).values, [0, 0.5, 1])

    def test_toy_um(self):
        normalized = minority_index.normalize([0.48, 0.82, -0.72, -0.94, 0.82])
        np.testing.assert_allclose(normalized.values, [0.80682, 1, 0.125, 0, 1], atol=1e-5)

    def test_constant_values(self):
        np.testing.assert_allclose(minority_index.normalize([0.3, 0.3]).values, [0.5, 0.5])

    def test_empty_population(self):
        with self.assertRaises(ModelShapeError):
            minority_index.normalize([])

    def test_absent_users_stay_absent(self):
        normalized = minority_index.normalize(np.array([np.nan, -1.0, 1.0]))
        self.assertTrue(np.isnan(normalized.values[0]))
        self.assertEqual(normalized.as_dict(), {1: 0.0, 2: 1.0})

    def test_transform_clamps(self):
        normalized = minority_index.normalize([-1, 1])
        np.testing.assert_allclose(normalized.transform([-3, 0, 3]), [0, 0.5, 1])

    def test_index_keys(self):
        im = minority_index.compute_im(toy_matrix(), toy_groups(), TOY_THRESHOLDS)
        normalized = minority_index.normalize(im).as_dict()
        self.assertEqual(sorted(normalized), [1, 2, 3, 4])
        for raw, expected in {1: 1.0, 2: 0.0, 3: 0.75, 4: 0.2}.items():
            self.assertAlmostEqual(normalized[raw], expected)


class IndexPropertyTests(unittest.TestCase):

    @given(problem=small_problems(), min_votes=st.integers(0, 2))
    @hypothesis_settings(max_examples=1000, deadline=None)
    def test_matches_voter_set_enumeration(self, problem, min_votes):
        ratings, labels = problem
        cfg = ThresholdConfig(min_side_votes=min_votes)
        for mode in ImMode:
            im = minority_index.compute_im(ratings, labels, cfg, mode)
            np.testing.assert_allclose(im.values, brute_force_im(ratings, labels, cfg, mode), atol=1e-12)

    @given(problem=small_problems())
    @hypothesis_settings(max_examples=60, deadline=None)
    def test_swapping_groups_negates_pooled_im(self, problem):
        ratings, labels = problem
        cfg = ThresholdConfig(min_side_votes=0)
        im = minority_index.compute_im(ratings, labels, cfg)
        swapped = minority_index.compute_im(ratings, -labels, cfg)
        np.testing.assert_array_equal(swapped.values, -im.values)

    @given(problem=small_problems(), min_votes=st.integers(0, 2))
    @hypothesis_settings(max_examples=60, deadline=None)
    def test_indexes_are_bounded(self, problem, min_votes):
        ratings, labels = problem
        cfg = ThresholdConfig(min_side_votes=min_votes)
        pooled = minority_index.compute_im(ratings, labels, cfg, ImMode.POOLED)
        scored = minority_index.compute_im(ratings, labels, cfg, ImMode.SCORE_DIFFERENCE)
        self.assertTrue(np.all(np.abs(pooled.values) <= 1.0))
        self.assertTrue(np.all(np.abs(scored.values) <= 2.0))
        um = minority_index.compute_um(ratings, pooled, cfg, UmMode.PER_FORMULA)
        self.assertTrue(np.all(np.abs(um.values[um.present]) <= 1.0 + 1e-12))

    @given(problem=small_problems(max_users=6, max_items=5))
    @hypothesis_settings(max_examples=40, deadline=None)
    def test_extra_majority_like_never_lowers_im(self, problem):
        ratings, labels = problem
        cfg = ThresholdConfig(min_side_votes=0)
        im = minority_index.compute_im(ratings, labels, cfg)
        # a new majority user who likes every item
        users = np.concatenate([ratings.users, np.full(ratings.num_items, ratings.num_users)])
        items = np.concatenate([ratings.items, np.arange(ratings.num_items)])
        values = np.concatenate([ratings.ratings, np.full(ratings.num_items, 5)])
        grown = dataset.RatingMatrix(users=users.astype(np.int32), items=items.astype(np.int32),
                                     ratings=values.astype(np.int8),
                                     user_ids=np.arange(1, ratings.num_users + 2), item_ids=ratings.item_ids)
        grown_labels = np.append(labels, np.int8(GroupLabel.MAJORITY))
        grown_im = minority_index.compute_im(grown, grown_labels, cfg)
        self.assertTrue(np.all(grown_im.values >= im.values - 1e-12))

    @given(problem=small_problems(), min_votes=st.integers(0, 2))
    @hypothesis_settings(max_examples=1000, deadline=None)
    def test_um_matches_per_user_sum(self, problem, min_votes):
        ratings, labels = problem
        cfg = ThresholdConfig(min_side_votes=min_votes)
        im_values = brute_force_im(ratings, labels, cfg, ImMode.POOLED)
        im = minority_index.compute_im(ratings, labels, cfg)
        for mode in UmMode:
            um = minority_index.compute_um(ratings, im, cfg, mode)
            np.testing.assert_allclose(um.values, brute_force_um(ratings, im_values, cfg, mode), atol=1e-12)

    @given(problem=small_problems(), pick=st.integers(0, 10 ** 6), min_votes=st.integers(0, 2))
    @hypothesis_settings(max_examples=300, deadline=None)
    def test_minority_dislike_turned_like_never_raises_im(self, problem, pick, min_votes):
        ratings, labels = problem
        minority_entries = np.flatnonzero(labels[ratings.users] == GroupLabel.MINORITY)
        assume(minority_entries.size > 0)
        entry = minority_entries[pick % minority_entries.size]
        cfg = ThresholdConfig(min_side_votes=min_votes)

        def with_rating(value):
            values = ratings.ratings.copy()
            values[entry] = value
            return dataset.RatingMatrix(users=ratings.users, items=ratings.items, ratings=values,
                                        user_ids=ratings.user_ids, item_ids=ratings.item_ids)

        for mode in ImMode:
            before = minority_index.compute_im(with_rating(2), labels, cfg, mode)
            after = minority_index.compute_im(with_rating(4), labels, cfg, mode)
            self.assertTrue(np.all(after.values <= before.values + 1e-12))
            np.testing.assert_array_equal(after.neutral, before.neutral)


@unittest.skipUnless(os.getenv(settings.ENV_ML1M_DIR), f"{settings.ENV_ML1M_DIR} not set")
class MovieLens1MClassificationTests(unittest.TestCase):

    def test_gender_classification_close_to_reference(self):
        ratings, users = dataset.load_movielens(os.environ[settings.ENV_ML1M_DIR])
        groups = dataset.assign_groups(users, "gender")
        im = minority_index.compute_im(ratings, groups)
        um = minority_index.compute_um(ratings, im)
        table = minority_index.classify_users(um, groups).set_index("type")
        self.assertAlmostEqual(table.loc["female", "correct_pct"], 67.11, delta=5)
        self.assertAlmostEqual(table.loc["male", "correct_pct"], 84.22, delta=5)


if __name__ == "__main__":
    unittest.main()
