"""
Network-based recommendation.

For an active user and a fixed beta every unrated item is scored with the
network's predicted combined loss; the N smallest losses form the list.
Only factors and the user's own ratings are read, never demographics.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, FairRecError, ModelShapeError
from fairrec.fairrec_app.fair_models.dataset import RatingMatrix
from fairrec.fairrec_app.fair_models.neural import MlnModel, forward_batch
from fairrec.fairrec_app.fair_models.pmf import FactorModel

logger = logging.getLogger(__name__)


@dataclass
class RecommendationList:
    user: int
    beta: float
    n_requested: int
    items: np.ndarray
    losses: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.items) == 0

    def __len__(self):
        return len(self.items)


@dataclass
class BatchResult:
    lists: Dict[int, RecommendationList] = field(default_factory=dict)
    errors: Dict[int, str] = field(default_factory=dict)


def score_unrated(mln: MlnModel, factors: FactorModel, ratings: RatingMatrix, user: int, beta: float):
    """Predicted loss h for every item ``user`` has not voted; (items, losses)."""
    if not 0 <= user < factors.num_users:
        raise ModelShapeError("User unknown to the factor model", component="recommend", user=user)
    if not 0.0 <= beta <= 1.0:
        raise ConfigError("Beta must be in [0, 1]", field_name="beta", beta=beta)
    unrated = np.setdiff1d(np.arange(factors.num_items), ratings.rated_items(user), assume_unique=True)
    if len(unrated) == 0:
        return unrated, np.zeros(0)
    X = np.empty((len(unrated), 2 * factors.factors + 1))
    X[:, :factors.factors] = factors.P[user]
    X[:, factors.factors:-1] = factors.Q[unrated]
    X[:, -1] = beta
    return unrated, forward_batch(mln, X)


def recommend_dl(mln: MlnModel, factors: FactorModel, ratings: RatingMatrix, user: int, beta: float,
                 n: int) -> RecommendationList:
    if n < 1:
        raise ConfigError("N must be at least 1", field_name="n", n=n)
    items, losses = score_unrated(mln, factors, ratings, user, beta)
    # ascending loss, ties to the lower item id
    order = np.lexsort((items, losses))[:n]
    result = RecommendationList(user=user, beta=beta, n_requested=n, items=items[order], losses=losses[order])
    if result.empty:
        logger.warning(f"User {user} has voted every item; nothing to recommend")
    return result


def recommend_batch(mln: MlnModel, factors: FactorModel, ratings: RatingMatrix, users: Sequence[int], beta: float,
                    n: int, max_workers: Optional[int] = None) -> BatchResult:
    """recommend_dl per user; per-user failures are collected and the batch carries on."""
    result = BatchResult()
    users = list(users)
    if not users:
        return result

    def one(user):
        try:
            return user, recommend_dl(mln, factors, ratings, user, beta, n), None
        except FairRecError as e:
            return user, None, str(e)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for user, recommendation, error in pool.map(one, users):
            if error is not None:
                result.errors[user] = error
            else:
                result.lists[user] = recommendation

    if result.errors:
        logger.warning(f"{len(result.errors)} of {len(users)} users failed in the recommendation batch")
    return result


def to_frame(lists: Sequence[RecommendationList], ratings: RatingMatrix) -> pd.DataFrame:
    rows = [
        {
            "user": int(ratings.user_ids[rec.user]),
            "beta": rec.beta,
            "rank": rank,
            "item": int(ratings.item_ids[item]),
            "h": float(loss),
        }
        for rec in lists
        for rank, (item, loss) in enumerate(zip(rec.items, rec.losses), start=1)
    ]
    return pd.DataFrame(rows, columns=["user", "beta", "rank", "item", "h"])
