"""
Ratings and demographics ingestion.

Parses MovieLens "::"-delimited files into a sparse ``RatingMatrix`` with
dense internal user/item indexes, reads the users file into a
``DemographicTable``, labels users for a minority scheme and splits rating
entries into train/validation/test partitions.
"""

import io
import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import sparse

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, DataIOError, DataParseError

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1

ByteSource = Union[bytes, io.BufferedIOBase, io.RawIOBase, Iterable[bytes]]


class Scheme(str, Enum):
    GENDER = "gender"
    YOUTH = "youth"

    @classmethod
    def parse(cls, value) -> "Scheme":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"Unknown minority scheme '{value}'", field_name="scheme",
                              accepted=",".join(s.value for s in cls))


class GroupLabel(IntEnum):
    """Group labels; the value is the expected sign of the user's UM."""
    MINORITY = -1
    UNKNOWN = 0
    MAJORITY = 1


GROUP_NAMES = {
    Scheme.GENDER: {GroupLabel.MINORITY: "female", GroupLabel.MAJORITY: "male"},
    Scheme.YOUTH: {GroupLabel.MINORITY: "senior", GroupLabel.MAJORITY: "young"},
}


@dataclass(frozen=True)
class RatingsFormat:
    delimiter: str = "::"
    max_rating: int = settings.MAX_RATING
    encoding: str = settings.INPUT_ENCODING


MOVIELENS_FORMAT = RatingsFormat()


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """
    Sparse user x item ratings.

    Entries are stored as parallel arrays of internal user index, internal
    item index and rating. ``user_ids``/``item_ids`` map internal indexes
    back to raw dataset ids. Sub-matrices produced by ``subset`` share the
    id universe of their parent.
    """
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray
    max_rating: int = settings.MAX_RATING

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def num_entries(self) -> int:
        return len(self.ratings)

    def __len__(self):
        return self.num_entries

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.ratings.astype(np.int8), (self.users, self.items)),
            shape=(self.num_users, self.num_items),
        )

    @cached_property
    def _user_lookup(self) -> Dict[int, int]:
        return {int(raw): idx for idx, raw in enumerate(self.user_ids)}

    @cached_property
    def _item_lookup(self) -> Dict[int, int]:
        return {int(raw): idx for idx, raw in enumerate(self.item_ids)}

    def user_index(self, raw_id: int) -> Optional[int]:
        return self._user_lookup.get(int(raw_id))

    def item_index(self, raw_id: int) -> Optional[int]:
        return self._item_lookup.get(int(raw_id))

    def rated_items(self, user: int) -> np.ndarray:
        """Internal indexes of the items ``user`` voted, ascending."""
        start, end = self.csr.indptr[user], self.csr.indptr[user + 1]
        return self.csr.indices[start:end]

    def user_ratings(self, user: int) -> np.ndarray:
        start, end = self.csr.indptr[user], self.csr.indptr[user + 1]
        return self.csr.data[start:end]

    def rating(self, user: int, item: int) -> Optional[int]:
        """The rating ``user`` gave ``item``, or None when not voted."""
        items = self.rated_items(user)
        pos = np.searchsorted(items, item)
        if pos < len(items) and items[pos] == item:
            return int(self.user_ratings(user)[pos])
        return None

    def votes_per_user(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def subset(self, positions: np.ndarray) -> "RatingMatrix":
        positions = np.asarray(positions)
        return RatingMatrix(
            users=self.users[positions],
            items=self.items[positions],
            ratings=self.ratings[positions],
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            max_rating=self.max_rating,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "user_id": self.user_ids[self.users],
            "item_id": self.item_ids[self.items],
            "rating": self.ratings,
        })

    @classmethod
    def from_raw(cls, raw_users, raw_items, ratings, max_rating: int = settings.MAX_RATING,
                 user_ids: np.ndarray = None, item_ids: np.ndarray = None) -> "RatingMatrix":
        """
        Builds a matrix from raw id triples.

        Without explicit ``user_ids``/``item_ids`` the universe is the sorted
        set of ids that occur in the triples.
        """
        raw_users = np.asarray(raw_users, dtype=np.int64)
        raw_items = np.asarray(raw_items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.int8)
        if user_ids is None:
            user_ids = np.unique(raw_users)
        if item_ids is None:
            item_ids = np.unique(raw_items)
        return cls(
            users=np.searchsorted(user_ids, raw_users).astype(np.int32),
            items=np.searchsorted(item_ids, raw_items).astype(np.int32),
            ratings=ratings,
            user_ids=np.asarray(user_ids, dtype=np.int64),
            item_ids=np.asarray(item_ids, dtype=np.int64),
            max_rating=max_rating,
        )


@dataclass(frozen=True)
class DemographicRecord:
    user_id: int
    gender: str
    age: int


@dataclass(frozen=True, eq=False)
class DemographicTable:
    user_ids: np.ndarray
    genders: np.ndarray
    ages: np.ndarray

    def __len__(self):
        return len(self.user_ids)

    @cached_property
    def _lookup(self) -> Dict[int, int]:
        return {int(raw): pos for pos, raw in enumerate(self.user_ids)}

    def get(self, raw_id: int) -> Optional[DemographicRecord]:
        pos = self._lookup.get(int(raw_id))
        if pos is None:
            return None
        return DemographicRecord(int(self.user_ids[pos]), str(self.genders[pos]), int(self.ages[pos]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"user_id": self.user_ids, "gender": self.genders, "age": self.ages})

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "DemographicTable":
        return cls(
            user_ids=df["user_id"].to_numpy(dtype=np.int64),
            genders=df["gender"].astype(str).to_numpy(),
            ages=df["age"].to_numpy(dtype=np.int64),
        )


@dataclass(frozen=True)
class GroupAssignment:
    """Minority/majority labels for one scheme, keyed by raw user id."""
    scheme: Scheme
    labels: Dict[int, GroupLabel] = field(default_factory=dict)

    def label_of(self, raw_id: int) -> GroupLabel:
        return self.labels.get(int(raw_id), GroupLabel.UNKNOWN)

    def labels_for(self, ratings: RatingMatrix) -> np.ndarray:
        """Label per internal user index of ``ratings`` (int8, GroupLabel values)."""
        return np.array([self.label_of(raw) for raw in ratings.user_ids], dtype=np.int8)

    def name_of(self, label: GroupLabel) -> str:
        return GROUP_NAMES[self.scheme].get(GroupLabel(label), "unknown")


@dataclass(frozen=True)
class SplitSpec:
    fractions: Sequence[float] = settings.SPLIT_FRACTIONS
    seed: int = settings.SEED

    def __post_init__(self):
        if len(self.fractions) != 3:
            raise ConfigError("Split needs train, validation and test fractions", field_name="fractions",
                              fractions=tuple(self.fractions))
        if any(f < 0 for f in self.fractions):
            raise ConfigError("Split fractions must not be negative", field_name="fractions",
                              fractions=tuple(self.fractions))
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError("Split fractions must sum to 1", field_name="fractions",
                              fractions=tuple(self.fractions), total=sum(self.fractions))


class RatingSplit(NamedTuple):
    train: RatingMatrix
    validation: RatingMatrix
    test: RatingMatrix


def _read_lines(stream: ByteSource) -> Iterable[bytes]:
    if stream is None:
        return []
    if isinstance(stream, (bytes, bytearray)):
        return bytes(stream).splitlines()
    return stream


def _decode(raw_line: bytes, encoding: str) -> str:
    if isinstance(raw_line, str):
        return raw_line.rstrip("\r\n")
    return raw_line.decode(encoding).rstrip("\r\n")


def parse_ratings(stream: ByteSource, fmt: RatingsFormat = MOVIELENS_FORMAT) -> RatingMatrix:
    """
    Parses ``UserID::MovieID::Rating::Timestamp`` lines.

    Timestamps are parsed for validity and discarded. Blank lines are
    skipped; anything else that does not split into four integer fields is
    reported with its line number.
    """
    raw_users, raw_items, values = [], [], []
    line_numbers = []
    for line_number, raw_line in enumerate(_read_lines(stream), start=1):
        line = _decode(raw_line, fmt.encoding)
        if not line.strip():
            continue
        parts = line.split(fmt.delimiter)
        if len(parts) != 4:
            raise DataParseError(f"expected 4 fields, got {len(parts)}", line_number=line_number)
        try:
            user, item, rating, _timestamp = (int(p) for p in parts)
        except ValueError:
            raise DataParseError(f"non-integer field in '{line}'", line_number=line_number)
        if not 1 <= rating <= fmt.max_rating:
            raise DataParseError(f"rating {rating} outside 1..{fmt.max_rating}", line_number=line_number)
        raw_users.append(user)
        raw_items.append(item)
        values.append(rating)
        line_numbers.append(line_number)

    raw_users = np.asarray(raw_users, dtype=np.int64)
    raw_items = np.asarray(raw_items, dtype=np.int64)
    if len(raw_users):
        keys = np.stack([raw_users, raw_items], axis=1)
        _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            dup_key = keys[first[np.argmax(counts > 1)]]
            dup_positions = np.flatnonzero((raw_users == dup_key[0]) & (raw_items == dup_key[1]))
            raise DataParseError("duplicate rating", line_number=line_numbers[dup_positions[1]],
                                 user=int(dup_key[0]), item=int(dup_key[1]))

    matrix = RatingMatrix.from_raw(raw_users, raw_items, values, max_rating=fmt.max_rating)
    logger.info(f"Parsed {matrix.num_entries} ratings from {matrix.num_users} users "
                f"on {matrix.num_items} items")
    return matrix


def parse_users(stream: ByteSource, encoding: str = settings.INPUT_ENCODING) -> DemographicTable:
    """Parses ``UserID::Gender::Age::Occupation::Zip`` lines."""
    user_ids, genders, ages = [], [], []
    seen = set()
    for line_number, raw_line in enumerate(_read_lines(stream), start=1):
        line = _decode(raw_line, encoding)
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 5:
            raise DataParseError(f"expected 5 fields, got {len(parts)}", line_number=line_number)
        try:
            user, age = int(parts[0]), int(parts[2])
        except ValueError:
            raise DataParseError(f"non-integer user or age in '{line}'", line_number=line_number)
        gender = parts[1]
        if gender not in ("F", "M"):
            raise DataParseError(f"unknown gender code '{gender}'", line_number=line_number)
        if age not in settings.MOVIELENS_AGE_CODES:
            raise DataParseError(f"unknown age code {age}", line_number=line_number)
        if user in seen:
            raise DataParseError("duplicate user", line_number=line_number, user=user)
        seen.add(user)
        user_ids.append(user)
        genders.append(gender)
        ages.append(age)

    table = DemographicTable(
        user_ids=np.asarray(user_ids, dtype=np.int64),
        genders=np.asarray(genders, dtype="<U1"),
        ages=np.asarray(ages, dtype=np.int64),
    )
    logger.info(f"Parsed demographics for {len(table)} users")
    return table


def assign_groups(demographics: DemographicTable, scheme) -> GroupAssignment:
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.GENDER:
        minority = demographics.genders == "F"
    else:
        minority = demographics.ages >= settings.SENIOR_AGE_CODE
    labels = {
        int(raw): GroupLabel.MINORITY if is_minority else GroupLabel.MAJORITY
        for raw, is_minority in zip(demographics.user_ids, minority)
    }
    return GroupAssignment(scheme, labels)


def group_totals(groups: GroupAssignment, ratings: Optional[RatingMatrix] = None) -> Dict[str, int]:
    """Population per group; with ``ratings`` the rated users without demographics count as unknown."""
    totals = {groups.name_of(GroupLabel.MINORITY): 0, groups.name_of(GroupLabel.MAJORITY): 0, "unknown": 0}
    if ratings is None:
        for label in groups.labels.values():
            totals[groups.name_of(label)] += 1
        return totals
    for label in groups.labels_for(ratings):
        totals[groups.name_of(label)] += 1
    return totals


def partition_sizes(total: int, fractions: Sequence[float]):
    n_train = min(total, int(round(fractions[0] * total)))
    n_validation = min(total - n_train, int(round(fractions[1] * total)))
    return n_train, n_validation, total - n_train - n_validation


def split(ratings: RatingMatrix, spec: SplitSpec) -> RatingSplit:
    """Per-rating random partition into train/validation/test."""
    n_train, n_validation, _ = partition_sizes(ratings.num_entries, spec.fractions)
    order = np.random.default_rng(spec.seed).permutation(ratings.num_entries)
    parts = RatingSplit(
        train=ratings.subset(np.sort(order[:n_train])),
        validation=ratings.subset(np.sort(order[n_train:n_train + n_validation])),
        test=ratings.subset(np.sort(order[n_train + n_validation:])),
    )
    logger.debug(f"Split {ratings.num_entries} ratings into "
                 f"{len(parts.train)}/{len(parts.validation)}/{len(parts.test)}")
    return parts


def serialize_ratings(ratings: RatingMatrix, timestamp: int = 0) -> bytes:
    """Writes the matrix back as "::" lines; parse_ratings reads it again."""
    frame = ratings.to_frame()
    lines = [f"{u}::{i}::{r}::{timestamp}" for u, i, r in frame.itertuples(index=False)]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def save_ratings_snapshot(ratings: RatingMatrix, path) -> None:
    np.savez(
        path,
        version=np.array(SNAPSHOT_VERSION),
        users=ratings.users,
        items=ratings.items,
        ratings=ratings.ratings,
        user_ids=ratings.user_ids,
        item_ids=ratings.item_ids,
        max_rating=np.array(ratings.max_rating),
    )


def load_ratings_snapshot(path) -> RatingMatrix:
    try:
        with np.load(path) as data:
            if int(data["version"]) != SNAPSHOT_VERSION:
                raise DataIOError(f"unsupported snapshot version {int(data['version'])}", path=str(path))
            return RatingMatrix(
                users=data["users"], items=data["items"], ratings=data["ratings"],
                user_ids=data["user_ids"], item_ids=data["item_ids"],
                max_rating=int(data["max_rating"]),
            )
    except (OSError, KeyError, ValueError) as e:
        raise DataIOError(f"cannot read ratings snapshot: {e}", path=str(path))


def load_movielens(directory) -> "tuple[RatingMatrix, DemographicTable]":
    """Reads ratings.dat and users.dat from an extracted MovieLens directory."""
    directory = Path(directory)
    ratings_path = directory / settings.RATINGS_FILE
    users_path = directory / settings.USERS_FILE
    try:
        with open(ratings_path, "rb") as f:
            ratings = parse_ratings(f)
        with open(users_path, "rb") as f:
            users = parse_users(f)
    except OSError as e:
        raise DataIOError(f"cannot read MovieLens files: {e}", path=str(directory))
    return ratings, users
