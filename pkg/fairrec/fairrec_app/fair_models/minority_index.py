"""
Item minority index (IM) and user minority index (UM).

IM(i) compares how the majority and the minority group vote item ``i``:
positive values lean to the majority, negative values to the minority.
UM(u) is the rating-weighted average of IM over the items ``u`` voted.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Union

import numpy as np
import pandas as pd

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, GroupError, ModelShapeError
from fairrec.fairrec_app.fair_models.dataset import GroupAssignment, GroupLabel, RatingMatrix

logger = logging.getLogger(__name__)

FLAG_OK = "ok"
FLAG_NEUTRAL = "neutral_insufficient_votes"
FLAG_ABSENT = "absent"


class ImMode(str, Enum):
    POOLED = "pooled"
    SCORE_DIFFERENCE = "score_difference"

    @classmethod
    def parse(cls, value) -> "ImMode":
        aliases = {"scorediff": cls.SCORE_DIFFERENCE}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"Unknown IM mode '{value}'", field_name="im_mode",
                              accepted="pooled,scorediff")


class UmMode(str, Enum):
    PER_FORMULA = "per_formula"
    TOY_DIVIDE_BY_NMAX = "toy_divide_by_Nmax"

    @classmethod
    def parse(cls, value) -> "UmMode":
        aliases = {"formula": cls.PER_FORMULA, "toy": cls.TOY_DIVIDE_BY_NMAX}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"Unknown UM mode '{value}'", field_name="um_mode",
                              accepted="formula,toy")


@dataclass(frozen=True)
class ThresholdConfig:
    like_threshold: int = settings.LIKE_THRESHOLD
    dislike_threshold: int = settings.DISLIKE_THRESHOLD
    min_side_votes: int = settings.MIN_SIDE_VOTES

    def __post_init__(self):
        if not 1 <= self.dislike_threshold < self.like_threshold:
            raise ConfigError("Thresholds must satisfy 1 <= dislike < like", field_name="thresholds",
                              like=self.like_threshold, dislike=self.dislike_threshold)
        if self.min_side_votes < 0:
            raise ConfigError("Minimum side votes must not be negative", field_name="min_side_votes")

    @property
    def midpoint(self) -> float:
        return (self.like_threshold + self.dislike_threshold) / 2

    def check_scale(self, max_rating: int):
        if self.like_threshold > max_rating:
            raise ConfigError(f"Like threshold above the maximum rating {max_rating}",
                              field_name="like_threshold")


# Column order of ImIndex.counts
COUNT_COLUMNS = ("majority_up", "majority_down", "minority_up", "minority_down")


@dataclass(frozen=True, eq=False)
class ImIndex:
    mode: ImMode
    values: np.ndarray
    neutral: np.ndarray
    counts: np.ndarray
    item_ids: np.ndarray

    def __len__(self):
        return len(self.values)

    def value_of(self, raw_item_id: int) -> float:
        pos = int(np.searchsorted(self.item_ids, raw_item_id))
        if pos >= len(self.item_ids) or self.item_ids[pos] != raw_item_id:
            raise ModelShapeError("Item has no index value", component="minority_index", item=raw_item_id)
        return float(self.values[pos])

    def as_dict(self) -> dict:
        return {int(raw): float(v) for raw, v in zip(self.item_ids, self.values)}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "raw_id": self.item_ids,
            "value": self.values,
            "flag": np.where(self.neutral, FLAG_NEUTRAL, FLAG_OK),
        })


@dataclass(frozen=True, eq=False)
class UmIndex:
    mode: UmMode
    values: np.ndarray
    raw_scores: np.ndarray
    user_ids: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def as_dict(self) -> dict:
        return {int(raw): float(v) for raw, v, ok in zip(self.user_ids, self.values, self.present) if ok}

    def to_frame(self) -> pd.DataFrame:
        present = self.present
        return pd.DataFrame({
            "raw_id": self.user_ids[present],
            "value": self.values[present],
            "flag": FLAG_OK,
        })


@dataclass(frozen=True, eq=False)
class NormalizedIndex:
    """Min-max scaling frozen on the population it was fitted to."""
    source: str
    minimum: float
    maximum: float
    values: np.ndarray
    keys: Optional[np.ndarray] = None

    def transform(self, value):
        """Scales values from outside the fitted population, clamped to [0, 1]."""
        return _scale(value, self.minimum, self.maximum)

    def as_dict(self) -> dict:
        keys = self.keys if self.keys is not None else range(len(self.values))
        return {k: float(v) for k, v in zip(keys, self.values) if not np.isnan(v)}


def _scale(values, lo: float, hi: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if hi == lo:
        return np.where(np.isnan(values), np.nan, 0.5)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def _labels(groups: Union[GroupAssignment, np.ndarray], ratings: RatingMatrix) -> np.ndarray:
    if isinstance(groups, GroupAssignment):
        return groups.labels_for(ratings)
    labels = np.asarray(groups, dtype=np.int8)
    if len(labels) != ratings.num_users:
        raise ModelShapeError("Group labels do not cover the user universe", component="minority_index",
                              labels=len(labels), users=ratings.num_users)
    return labels


def compute_im(train: RatingMatrix, groups, cfg: ThresholdConfig = ThresholdConfig(),
               mode=ImMode.POOLED) -> ImIndex:
    mode = ImMode.parse(mode)
    cfg.check_scale(train.max_rating)
    labels = _labels(groups, train)
    for label in (GroupLabel.MINORITY, GroupLabel.MAJORITY):
        if not np.any(labels == label):
            name = groups.name_of(label) if isinstance(groups, GroupAssignment) else label.name.lower()
            raise GroupError("No users in group", group=name)

    entry_labels = labels[train.users]
    up = train.ratings >= cfg.like_threshold
    down = train.ratings <= cfg.dislike_threshold

    def count(mask):
        return np.bincount(train.items[mask], minlength=train.num_items).astype(np.int64)

    majority = entry_labels == GroupLabel.MAJORITY
    minority = entry_labels == GroupLabel.MINORITY
    counts = np.stack([
        count(majority & up), count(majority & down),
        count(minority & up), count(minority & down),
    ], axis=1)
    maj_up, maj_down, min_up, min_down = counts.T
    maj_total = maj_up + maj_down
    min_total = min_up + min_down

    with np.errstate(divide="ignore", invalid="ignore"):
        if mode is ImMode.POOLED:
            total = maj_total + min_total
            values = np.where(total > 0, ((maj_up - maj_down) - (min_up - min_down)) / total, 0.0)
        else:
            maj_score = np.where(maj_total > 0, (maj_up - maj_down) / maj_total, 0.0)
            min_score = np.where(min_total > 0, (min_up - min_down) / min_total, 0.0)
            values = maj_score - min_score

    neutral = (maj_total < cfg.min_side_votes) | (min_total < cfg.min_side_votes) | (maj_total + min_total == 0)
    values = np.where(neutral, 0.0, values)
    if np.any(neutral):
        logger.info(f"{int(neutral.sum())} of {train.num_items} items are neutral (insufficient votes)")

    return ImIndex(mode=mode, values=values.astype(float), neutral=neutral, counts=counts,
                   item_ids=train.item_ids)


def compute_um(train: RatingMatrix, im: ImIndex, cfg: ThresholdConfig = ThresholdConfig(),
               mode=UmMode.PER_FORMULA) -> UmIndex:
    mode = UmMode.parse(mode)
    if len(im) != train.num_items:
        raise ModelShapeError("IM index does not cover the item universe", component="minority_index",
                              im_items=len(im), items=train.num_items)

    weights = train.ratings.astype(float) - cfg.midpoint
    raw_scores = np.bincount(train.users, weights=weights * im.values[train.items], minlength=train.num_users)
    votes = train.votes_per_user()

    with np.errstate(divide="ignore", invalid="ignore"):
        if mode is UmMode.PER_FORMULA:
            values = raw_scores / ((train.max_rating - cfg.midpoint) * votes)
        else:
            values = raw_scores / train.max_rating
    values = np.where(votes > 0, values, np.nan)
    raw_scores = np.where(votes > 0, raw_scores, np.nan)
    return UmIndex(mode=mode, values=values, raw_scores=raw_scores, user_ids=train.user_ids)


def normalize(values: Union[ImIndex, UmIndex, Mapping, np.ndarray, list], source: str = "") -> NormalizedIndex:
    keys = None
    if isinstance(values, ImIndex):
        source, keys, values = source or "IM", values.item_ids, values.values
    elif isinstance(values, UmIndex):
        source, keys, values = source or "UM", values.user_ids, values.values
    elif isinstance(values, Mapping):
        keys = np.asarray(list(values.keys()))
        values = list(values.values())
    values = np.asarray(values, dtype=float)
    finite = values[~np.isnan(values)]
    if finite.size == 0:
        raise ModelShapeError("Cannot normalize an empty index", component="minority_index", source=source)

    lo, hi = float(finite.min()), float(finite.max())
    return NormalizedIndex(source=source, minimum=lo, maximum=hi, values=_scale(values, lo, hi), keys=keys)


def classify_users(um: UmIndex, groups: GroupAssignment) -> pd.DataFrame:
    """Counts users whose UM sign matches their group's expected sign; UM = 0 is incorrect."""
    rows = []
    labels = np.array([groups.label_of(raw) for raw in um.user_ids], dtype=np.int8)
    present = um.present
    for label in (GroupLabel.MINORITY, GroupLabel.MAJORITY):
        members = present & (labels == label)
        correct = int(np.sum(np.sign(um.values[members]) == int(label)))
        incorrect = int(members.sum()) - correct
        total = correct + incorrect
        rows.append({
            "group": groups.scheme.value,
            "type": groups.name_of(label),
            "correct": correct,
            "incorrect": incorrect,
            "correct_pct": round(100.0 * correct / total, 2) if total else 0.0,
        })
    return pd.DataFrame(rows)


def export_csv(index: Union[ImIndex, UmIndex], path) -> None:
    index.to_frame().to_csv(path, index=False)
