"""Shared builders for the fair_models tests."""

import numpy as np
from hypothesis import assume
from hypothesis import strategies as st

from fairrec.fairrec_app.fair_models import dataset, synthetic
from fairrec.fairrec_app.fair_models.dataset import GroupLabel, RatingMatrix
from fairrec.fairrec_app.fair_models.minority_index import NormalizedIndex, ThresholdConfig
from fairrec.fairrec_app.fair_models.neural import MlnModel
from fairrec.fairrec_app.fair_models.pmf import FactorModel

# Like 4, dislike 2, every item counted
TOY_THRESHOLDS = ThresholdConfig(like_threshold=4, dislike_threshold=2, min_side_votes=0)


def toy_matrix() -> RatingMatrix:
    ratings, _ = synthetic.toy_fixture()
    return dataset.parse_ratings(ratings)


def toy_users() -> dataset.DemographicTable:
    _, users = synthetic.toy_fixture()
    return dataset.parse_users(users)


def toy_groups() -> dataset.GroupAssignment:
    return dataset.assign_groups(toy_users(), "gender")


def matrix_from_cells(cells, num_users: int, num_items: int) -> RatingMatrix:
    """Matrix over raw ids 1..num_users x 1..num_items from (user, item, rating) zero-based triples."""
    users = [u + 1 for u, _, _ in cells]
    items = [i + 1 for _, i, _ in cells]
    values = [r for _, _, r in cells]
    return RatingMatrix.from_raw(users, items, values,
                                 user_ids=np.arange(1, num_users + 1), item_ids=np.arange(1, num_items + 1))


def random_factors(ratings: RatingMatrix, factors: int = 3, seed: int = 0) -> FactorModel:
    rng = np.random.default_rng(seed)
    return FactorModel(rng.normal(0, 1, (ratings.num_users, factors)),
                       rng.normal(0, 1, (ratings.num_items, factors)))


def constant_network(input_width: int, value: float, hidden=(4, 2)) -> MlnModel:
    """A network whose output is ``value`` for every input."""
    sizes = (input_width,) + tuple(hidden) + (1,)
    weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    biases[-1][0] = value
    return MlnModel(weights, biases, dropout=0.0)


def fixed_index(values, source: str = "") -> NormalizedIndex:
    values = np.asarray(values, dtype=float)
    return NormalizedIndex(source=source, minimum=0.0, maximum=1.0, values=values)


@st.composite
def small_problems(draw, max_users: int = 8, max_items: int = 8):
    """(RatingMatrix, int8 labels) with both groups present."""
    num_users = draw(st.integers(2, max_users))
    num_items = draw(st.integers(1, max_items))
    cells = draw(st.lists(
        st.tuples(st.integers(0, num_users - 1), st.integers(0, num_items - 1), st.integers(1, 5)),
        min_size=1, max_size=num_users * num_items, unique_by=lambda cell: cell[:2],
    ))
    labels = draw(st.lists(st.sampled_from([int(GroupLabel.MINORITY), int(GroupLabel.MAJORITY)]),
                           min_size=num_users, max_size=num_users))
    assume(int(GroupLabel.MINORITY) in labels and int(GroupLabel.MAJORITY) in labels)
    return matrix_from_cells(cells, num_users, num_items), np.asarray(labels, dtype=np.int8)
