"""
Alpha-filtered recommendation baseline.

Three phases: score every item the user has not voted with the factor
model, keep the candidates whose IM lies on the user's group side of
+-alpha, return the N best predictions. Needs the user's group label.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd

from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, GroupError, ModelShapeError
from fairrec.fairrec_app.fair_models.dataset import GroupLabel, RatingMatrix
from fairrec.fairrec_app.fair_models.minority_index import ImIndex
from fairrec.fairrec_app.fair_models.pmf import FactorModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredCandidate:
    item: int
    prediction: float
    im: float
    neutral: bool = False


@dataclass
class HeuristicRecommendation:
    user: int
    alpha: float
    n_requested: int
    items: List[ScoredCandidate] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.items

    @property
    def item_indexes(self) -> np.ndarray:
        return np.array([c.item for c in self.items], dtype=np.int64)


def _check_label(label) -> GroupLabel:
    try:
        label = GroupLabel(label)
    except ValueError:
        label = GroupLabel.UNKNOWN
    if label is GroupLabel.UNKNOWN:
        raise GroupError("Alpha filtering needs a user with demographic information", group="unknown")
    return label


def survivors_mask(im_values: np.ndarray, neutral: np.ndarray, label, alpha: float) -> np.ndarray:
    """Vectorized filter_by_alpha over IM values."""
    if alpha < 0:
        raise ConfigError("Alpha must be >= 0", field_name="alpha", alpha=alpha)
    label = _check_label(label)
    if label is GroupLabel.MINORITY:
        keep = im_values <= -alpha
    else:
        keep = im_values >= alpha
    if alpha > 0:
        keep &= ~neutral
    return keep


def filter_by_alpha(candidates: Sequence[ScoredCandidate], label, alpha: float) -> List[ScoredCandidate]:
    if not candidates:
        survivors_mask(np.zeros(0), np.zeros(0, dtype=bool), label, alpha)
        return []
    im_values = np.array([c.im for c in candidates], dtype=float)
    neutral = np.array([c.neutral for c in candidates], dtype=bool)
    keep = survivors_mask(im_values, neutral, label, alpha)
    return [c for c, k in zip(candidates, keep) if k]


def score_candidates(factors: FactorModel, im: ImIndex, ratings: RatingMatrix, user: int) -> List[ScoredCandidate]:
    """Phase 1: (prediction, minority value) for every item ``user`` has not voted."""
    if not 0 <= user < factors.num_users:
        raise ModelShapeError("User unknown to the factor model", component="heuristic", user=user)
    unrated = np.setdiff1d(np.arange(ratings.num_items), ratings.rated_items(user), assume_unique=True)
    predictions = factors.Q[unrated] @ factors.P[user]
    return [ScoredCandidate(int(i), float(p), float(im.values[i]), bool(im.neutral[i]))
            for i, p in zip(unrated, predictions)]


def top_n(candidates: Sequence[ScoredCandidate], n: int) -> List[ScoredCandidate]:
    """Highest predictions first, ties to the lower item id."""
    return sorted(candidates, key=lambda c: (-c.prediction, c.item))[:n]


def ranked_survivors(factors: FactorModel, im: ImIndex, ratings: RatingMatrix, user: int, label,
                     alpha: float):
    """All three phases on arrays: surviving (items, predictions) best first."""
    if not 0 <= user < factors.num_users:
        raise ModelShapeError("User unknown to the factor model", component="heuristic", user=user)
    unrated = np.setdiff1d(np.arange(ratings.num_items), ratings.rated_items(user), assume_unique=True)
    keep = survivors_mask(im.values[unrated], im.neutral[unrated], label, alpha)
    items = unrated[keep]
    predictions = factors.Q[items] @ factors.P[user]
    order = np.lexsort((items, -predictions))
    return items[order], predictions[order]


def recommend_heuristic(factors: FactorModel, im: ImIndex, ratings: RatingMatrix, user: int, label,
                        alpha: float, n: int) -> HeuristicRecommendation:
    if n < 1:
        raise ConfigError("N must be at least 1", field_name="n", n=n)
    label = _check_label(label)
    items, predictions = ranked_survivors(factors, im, ratings, user, label, alpha)
    chosen = [ScoredCandidate(int(i), float(p), float(im.values[i]), bool(im.neutral[i]))
              for i, p in zip(items[:n], predictions[:n])]
    result = HeuristicRecommendation(user=user, alpha=alpha, n_requested=n, items=chosen)
    if result.empty:
        logger.warning(f"No candidates left for user {user} at alpha={alpha}")
    return result


def to_frame(recommendations: Sequence[HeuristicRecommendation], ratings: RatingMatrix) -> pd.DataFrame:
    rows = [
        {
            "user": int(ratings.user_ids[rec.user]),
            "rank": rank,
            "item": int(ratings.item_ids[c.item]),
            "prediction": c.prediction,
            "IM": c.im,
        }
        for rec in recommendations
        for rank, c in enumerate(rec.items, start=1)
    ]
    return pd.DataFrame(rows, columns=["user", "rank", "item", "prediction", "IM"])
