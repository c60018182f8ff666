"""
Measurements over indexes, predictions and recommendation lists.

Recommendation lists are passed around as ``{internal user index: array of
internal item indexes}`` so that network lists, heuristic lists and plain
test-set predictions share one shape.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models.FairErrors import GroupError, ModelShapeError
from fairrec.fairrec_app.fair_models.dataset import GroupAssignment, GroupLabel, RatingMatrix
from fairrec.fairrec_app.fair_models.heuristic import recommend_heuristic, survivors_mask
from fairrec.fairrec_app.fair_models.minority_index import ImIndex, NormalizedIndex, UmIndex
from fairrec.fairrec_app.fair_models.neural import MlnModel
from fairrec.fairrec_app.fair_models.pmf import FactorModel
from fairrec.fairrec_app.fair_models.recommend import recommend_batch

logger = logging.getLogger(__name__)

ListMap = Mapping[int, np.ndarray]
GROUP_ORDER = (GroupLabel.MINORITY, GroupLabel.MAJORITY)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_left": self.edges[:-1], "bin_right": self.edges[1:], "count": self.counts})


@dataclass(frozen=True)
class AccuracyResult:
    mse: float
    coverage: float
    hits: int
    total: int

    @property
    def flagged(self) -> bool:
        return self.hits == 0


@dataclass
class SweepResult:
    curves: pd.DataFrame
    normalized: pd.DataFrame
    optimum: float


def histogram(values, bins: int = settings.HISTOGRAM_BINS) -> Histogram:
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    if values.size == 0:
        raise ModelShapeError("Cannot histogram an empty population", component="evaluate")
    if bins < 1:
        raise ModelShapeError("Histogram needs at least one bin", component="evaluate", bins=bins)
    counts, edges = np.histogram(values, bins=bins)
    return Histogram(edges=edges, counts=counts)


def _user_labels(groups: GroupAssignment, user_ids: np.ndarray) -> np.ndarray:
    return np.array([groups.label_of(raw) for raw in user_ids], dtype=np.int8)


def index_histograms(im: ImIndex, um: UmIndex, groups: GroupAssignment,
                     bins: int = settings.HISTOGRAM_BINS) -> pd.DataFrame:
    """IM over all items, UM over all users and over each group."""
    frames = []

    def add(index_name, population, values):
        if np.count_nonzero(~np.isnan(values)) == 0:
            return
        frame = histogram(values, bins).to_frame()
        frame.insert(0, "population", population)
        frame.insert(0, "index", index_name)
        frames.append(frame)

    add("IM", "all", im.values)
    add("UM", "all", um.values)
    labels = _user_labels(groups, um.user_ids)
    for label in GROUP_ORDER:
        add("UM", groups.name_of(label), um.values[labels == label])
    return pd.concat(frames, ignore_index=True)


def group_im_mean(lists: ListMap, im: ImIndex, groups: GroupAssignment, user_ids: np.ndarray) -> Dict[str, float]:
    """Mean IM over every item listed for the users of each group."""
    means = {}
    for label in GROUP_ORDER:
        values = [im.values[items] for user, items in lists.items()
                  if groups.label_of(user_ids[user]) == label and len(items)]
        if not values:
            raise GroupError("No listed items for group", group=groups.name_of(label))
        means[groups.name_of(label)] = float(np.mean(np.concatenate(values)))
    return means


def held_out_lists(test: RatingMatrix) -> Dict[int, np.ndarray]:
    """Each user's held-out items, as a list map."""
    return {int(u): test.rated_items(u) for u in np.unique(test.users)}


def prediction_im_means(test: RatingMatrix, im: ImIndex, groups: GroupAssignment) -> pd.DataFrame:
    means = group_im_mean(held_out_lists(test), im, groups, test.user_ids)
    return pd.DataFrame([{"group": groups.scheme.value, "type": name, "im_mean": value}
                         for name, value in means.items()])


def accuracy_error(lists: ListMap, held_out: RatingMatrix, factors: FactorModel) -> AccuracyResult:
    """Squared error of the factor prediction on listed items that have a held-out rating."""
    squared, hits, total = [], 0, 0
    for user, items in lists.items():
        items = np.asarray(items, dtype=np.int64)
        total += len(items)
        if not len(items):
            continue
        truth_items = held_out.rated_items(user)
        truth = held_out.user_ratings(user)
        found = np.isin(items, truth_items)
        if not found.any():
            continue
        hit_items = items[found]
        ratings = truth[np.searchsorted(truth_items, hit_items)]
        predictions = factors.Q[hit_items] @ factors.P[user]
        squared.append((ratings - predictions) ** 2)
        hits += len(hit_items)
    if hits == 0:
        logger.warning("No recommended item has a held-out rating; accuracy error is undefined")
        return AccuracyResult(float("nan"), 0.0, 0, total)
    return AccuracyResult(float(np.mean(np.concatenate(squared))), hits / total, hits, total)


def fairness_error(lists: ListMap, um: NormalizedIndex, im: NormalizedIndex, groups: GroupAssignment,
                   user_ids: np.ndarray) -> Dict[str, float]:
    """Per group mean of (UM'_u - mean IM' of u's list)^2."""
    per_group = {label: [] for label in GROUP_ORDER}
    for user, items in lists.items():
        if not len(items):
            continue
        um_value = um.values[user]
        if np.isnan(um_value):
            raise ModelShapeError("User has no normalized UM value", component="evaluate",
                                  user=int(user_ids[user]))
        label = groups.label_of(user_ids[user])
        if label in per_group:
            per_group[label].append((um_value - float(np.mean(im.values[np.asarray(items)]))) ** 2)
    return {groups.name_of(label): float(np.mean(errors)) if errors else float("nan")
            for label, errors in per_group.items()}


def normalize_series(values) -> np.ndarray:
    """Min-max to [0, 1]; a flat (or undefined) series maps to 0.5."""
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    if finite.size == 0 or finite.max() == finite.min():
        return np.full_like(values, 0.5)
    return (values - finite.min()) / (finite.max() - finite.min())


def alpha_sweep(factors: FactorModel, im: ImIndex, ratings: RatingMatrix, test: RatingMatrix,
                groups: GroupAssignment, alpha_grid: Sequence[float] = settings.ALPHA_GRID,
                n: int = settings.TOP_N, users: Optional[Sequence[int]] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Heuristic filter curves over an alpha grid.

    The first frame holds, per group, the mean |IM| of test-set predictions
    surviving the filter; the second the accuracy error of the top-N
    heuristic recommendations.
    """
    labels = _user_labels(groups, ratings.user_ids)
    if users is None:
        users = [u for u in range(ratings.num_users) if labels[u] != GroupLabel.UNKNOWN]
    test_lists = held_out_lists(test)
    survivor_rows, accuracy_rows = [], []

    for alpha in sorted(alpha_grid):
        for label in GROUP_ORDER:
            name = groups.name_of(label)
            kept = []
            for user, items in test_lists.items():
                if labels[user] != label:
                    continue
                mask = survivors_mask(im.values[items], im.neutral[items], label, alpha)
                kept.append(im.values[items[mask]])
            kept = np.concatenate(kept) if kept else np.zeros(0)
            survivor_rows.append({
                "alpha": alpha, "group": name, "survivors": int(kept.size),
                "mean_abs_im": float(np.mean(np.abs(kept))) if kept.size else float("nan"),
            })

            group_users = [u for u in users if labels[u] == label]
            lists = {u: recommend_heuristic(factors, im, ratings, u, label, alpha, n).item_indexes
                     for u in group_users}
            accuracy = accuracy_error(lists, test, factors)
            accuracy_rows.append({
                "alpha": alpha, "group": name, "accuracy_error": accuracy.mse,
                "coverage": accuracy.coverage, "hits": accuracy.hits,
            })
        logger.debug(f"Alpha sweep point {alpha} done")

    return pd.DataFrame(survivor_rows), pd.DataFrame(accuracy_rows)


def beta_sweep(mln: MlnModel, factors: FactorModel, ratings: RatingMatrix, test: RatingMatrix,
               groups: GroupAssignment, im_norm: NormalizedIndex, um_norm: NormalizedIndex,
               beta_grid: Sequence[float] = settings.BETA_GRID, n: int = settings.TOP_N,
               users: Optional[Sequence[int]] = None, max_workers: Optional[int] = None) -> SweepResult:
    """
    Accuracy and per-group fairness error of network recommendations per beta.

    The optimum beta minimizes normalized accuracy error plus the mean of the
    normalized group fairness errors; ties go to the lower beta.
    """
    if users is None:
        users = range(ratings.num_users)
    users = list(users)
    grid = sorted(beta_grid)
    names = [groups.name_of(label) for label in GROUP_ORDER]

    def point(beta):
        batch = recommend_batch(mln, factors, ratings, users, beta, n, max_workers=1)
        lists = {u: rec.items for u, rec in batch.lists.items()}
        accuracy = accuracy_error(lists, test, factors)
        fairness = fairness_error(lists, um_norm, im_norm, groups, ratings.user_ids)
        row = {"beta": beta, "accuracy_error": accuracy.mse, "coverage": accuracy.coverage}
        row.update({f"fairness_{name}": fairness[name] for name in names})
        return row

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        curves = pd.DataFrame(list(pool.map(point, grid)))

    normalized = pd.DataFrame({"beta": curves["beta"]})
    for column in curves.columns:
        if column in ("beta", "coverage"):
            continue
        normalized[column] = normalize_series(curves[column])

    fairness_columns = [f"fairness_{name}" for name in names]
    score = (np.nan_to_num(normalized["accuracy_error"].to_numpy(), nan=0.5)
             + np.nan_to_num(normalized[fairness_columns].to_numpy(), nan=0.5).mean(axis=1))
    optimum = float(curves["beta"].iloc[int(np.argmin(score))])
    logger.info(f"Beta sweep optimum: beta={optimum}")
    return SweepResult(curves=curves, normalized=normalized, optimum=optimum)
