"""
Synthetic MovieLens-format fixtures.

``generate`` produces ratings and users files whose taste depends on the
user's group, so minority indexes and the fairness trade-off are
observable at desk scale. ``toy_fixture`` is the five-user, four-item
data-toy with hand-checked index values.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from fairrec.fairrec_app import settings

logger = logging.getLogger(__name__)

# users 1..5 = male 1, male 2, female 1, female 2, male 3; items 1..4 = a..d
TOY_RATINGS = (
    (1, 1, 5), (1, 2, 2), (1, 4, 4),
    (2, 1, 5), (2, 2, 2), (2, 3, 4), (2, 4, 2),
    (3, 1, 2), (3, 2, 4), (3, 3, 1), (3, 4, 4),
    (4, 1, 1), (4, 2, 5), (4, 3, 4), (4, 4, 5),
    (5, 1, 4), (5, 2, 1), (5, 3, 4), (5, 4, 2),
)
TOY_USERS = ((1, "M", 25), (2, "M", 25), (3, "F", 25), (4, "F", 25), (5, "M", 25))


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 100
    num_items: int = 60
    density: float = 0.3
    factors: int = 4
    minority_share: float = 0.3
    group_effect: float = 1.0
    noise: float = 0.3
    seed: int = settings.SEED


def _users_lines(rows) -> bytes:
    return "".join(f"{u}::{g}::{a}::0::00000\n" for u, g, a in rows).encode("utf-8")


def _ratings_lines(rows) -> bytes:
    return "".join(f"{u}::{i}::{r}::978300760\n" for u, i, r in rows).encode("utf-8")


def toy_fixture() -> Tuple[bytes, bytes]:
    """(ratings bytes, users bytes) of the data-toy."""
    return _ratings_lines(TOY_RATINGS), _users_lines(TOY_USERS)


def generate(spec: SyntheticSpec = SyntheticSpec()) -> Tuple[bytes, bytes]:
    """
    (ratings bytes, users bytes) for a synthetic population.

    Each user gets a gender and an age code; minority users (female or
    senior) have a taste offset along one latent axis that items load on
    with either sign. Ratings are the rounded, clipped sum of a shared
    preference term, the group term and noise.
    """
    rng = np.random.default_rng(spec.seed)
    female = rng.random(spec.num_users) < spec.minority_share
    senior = rng.random(spec.num_users) < spec.minority_share
    young_codes = np.array([1, 18, 25, 35])
    senior_codes = np.array([45, 50, 56])
    ages = np.where(senior, rng.choice(senior_codes, spec.num_users), rng.choice(young_codes, spec.num_users))

    user_factors = rng.normal(0, 1, (spec.num_users, spec.factors)) / np.sqrt(spec.factors)
    item_factors = rng.normal(0, 1, (spec.num_items, spec.factors))
    item_gender = rng.normal(0, 1, spec.num_items)
    item_age = rng.normal(0, 1, spec.num_items)
    item_quality = rng.normal(0, 0.5, spec.num_items)
    group_sign = np.where(female, -1.0, 1.0)[:, None] * item_gender[None, :]
    group_sign += np.where(senior, -1.0, 1.0)[:, None] * item_age[None, :]

    scores = 3.2 + item_quality[None, :] + user_factors @ item_factors.T
    scores += spec.group_effect * group_sign / 2
    scores += rng.normal(0, spec.noise, scores.shape)
    ratings = np.clip(np.rint(scores), 1, settings.MAX_RATING).astype(int)

    voted = rng.random(scores.shape) < spec.density
    # every user and item keeps at least one vote
    voted[np.arange(spec.num_users), rng.integers(0, spec.num_items, spec.num_users)] = True
    voted[rng.integers(0, spec.num_users, spec.num_items), np.arange(spec.num_items)] = True

    users, items = np.nonzero(voted)
    rows = [(int(u) + 1, int(i) + 1, int(ratings[u, i])) for u, i in zip(users, items)]
    user_rows = [(u + 1, "F" if female[u] else "M", int(ages[u])) for u in range(spec.num_users)]
    logger.info(f"Generated {len(rows)} synthetic ratings for {spec.num_users} users and {spec.num_items} items")
    return _ratings_lines(rows), _users_lines(user_rows)
