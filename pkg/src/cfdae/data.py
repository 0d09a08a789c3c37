"""Sparse rating data: loaders, index structures, splits, and snapshots."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

RATING_FORMATS = ("movielens_dat", "csv")
TAG_FORMATS = ("movielens_tags", "genre_flags", "adjacency_csv")

SNAPSHOT_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class RatingScale:
    """Inclusive rating range, optionally restricted to a uniform grid."""

    min_rating: float
    max_rating: float
    is_discrete: bool = False
    step: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.min_rating) and np.isfinite(self.max_rating)):
            raise DataError("rating scale bounds must be finite")
        if not self.min_rating < self.max_rating:
            raise DataError("min_rating must be strictly below max_rating")
        if self.is_discrete:
            if self.step <= 0:
                raise DataError("a discrete scale needs a positive step")
            n_steps = (self.max_rating - self.min_rating) / self.step
            if round(n_steps) < 1 or abs(n_steps - round(n_steps)) > 1e-9:
                raise DataError("(max - min) / step must be a positive integer")

    def clamp(self, values):
        return np.clip(values, self.min_rating, self.max_rating)


def infer_scale(values) -> RatingScale:
    """Infer a RatingScale from observed rating values.

    Values sitting on a uniform grid (integers, half stars, ...) give a
    discrete scale whose step is the smallest gap between distinct values.
    A single distinct value is widened by one unit on each side so the
    scale stays invertible.
    """
    distinct = np.unique(np.asarray(values, dtype=np.float64))
    if distinct.size == 0:
        raise DataError("cannot infer a scale from no ratings")
    vmin, vmax = float(distinct[0]), float(distinct[-1])
    if distinct.size == 1:
        return RatingScale(vmin - 1.0, vmax + 1.0)
    step = float(np.diff(distinct).min())
    offsets = (distinct - vmin) / step
    if step > 0 and np.all(np.abs(offsets - np.round(offsets)) < 1e-6):
        return RatingScale(vmin, vmax, is_discrete=True, step=step)
    return RatingScale(vmin, vmax)


class RatingMatrix:
    """Immutable sparse user x item rating store.

    Entries are kept sorted by (user, item), with CSR-style row and column
    views so a user's or an item's ratings can be sliced out directly.
    """

    __slots__ = ("n_users", "n_items", "users", "items", "ratings",
                 "_row_ptr", "_col_ptr", "_col_users", "_col_ratings")

    def __init__(self, n_users, n_items, users, items, ratings):
        users = np.ascontiguousarray(users, dtype=np.int64)
        items = np.ascontiguousarray(items, dtype=np.int64)
        ratings = np.ascontiguousarray(ratings, dtype=np.float64)
        if not (users.ndim == items.ndim == ratings.ndim == 1):
            raise DataError("entry arrays must be one-dimensional")
        if not (users.size == items.size == ratings.size):
            raise DataError("entry arrays must have equal length")
        if n_users < 0 or n_items < 0:
            raise DataError("matrix dimensions must be nonnegative")
        if users.size:
            if users.min() < 0 or users.max() >= n_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= n_items:
                raise DataError("item index out of range")
        if not np.all(np.isfinite(ratings)):
            raise DataError("ratings must be finite")

        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
        if users.size > 1:
            dup = (np.diff(users) == 0) & (np.diff(items) == 0)
            if dup.any():
                k = int(np.flatnonzero(dup)[0]) + 1
                raise DataError(
                    f"duplicate rating for user {users[k]}, item {items[k]}")

        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.users = users
        self.items = items
        self.ratings = ratings

        row_ptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=self.n_users), out=row_ptr[1:])
        self._row_ptr = row_ptr

        corder = np.lexsort((users, items))
        self._col_users = np.ascontiguousarray(users[corder])
        self._col_ratings = np.ascontiguousarray(ratings[corder])
        col_ptr = np.zeros(self.n_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(items, minlength=self.n_items), out=col_ptr[1:])
        self._col_ptr = col_ptr

        for arr in (self.users, self.items, self.ratings, self._row_ptr,
                    self._col_ptr, self._col_users, self._col_ratings):
            arr.setflags(write=False)

    @property
    def n_entries(self) -> int:
        return self.ratings.size

    @property
    def density(self) -> float:
        cells = self.n_users * self.n_items
        return self.n_entries / cells if cells else 0.0

    def row(self, user: int):
        """Items rated by ``user`` and the ratings, as aligned arrays."""
        if not 0 <= user < self.n_users:
            raise IndexError(f"user index {user} out of range")
        lo, hi = self._row_ptr[user], self._row_ptr[user + 1]
        return self.items[lo:hi], self.ratings[lo:hi]

    def col(self, item: int):
        """Users who rated ``item`` and the ratings, as aligned arrays."""
        if not 0 <= item < self.n_items:
            raise IndexError(f"item index {item} out of range")
        lo, hi = self._col_ptr[item], self._col_ptr[item + 1]
        return self._col_users[lo:hi], self._col_ratings[lo:hi]

    def row_counts(self) -> np.ndarray:
        return np.diff(self._row_ptr)

    def col_counts(self) -> np.ndarray:
        return np.diff(self._col_ptr)

    def fingerprint(self) -> str:
        """Content hash of dimensions and all entries."""
        h = hashlib.sha256()
        h.update(np.int64([self.n_users, self.n_items]).tobytes())
        h.update(self.users.tobytes())
        h.update(self.items.tobytes())
        h.update(self.ratings.tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        return (self.n_users == other.n_users
                and self.n_items == other.n_items
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings))

    def __repr__(self):
        return (f"RatingMatrix({self.n_users} users x {self.n_items} items, "
                f"{self.n_entries} entries)")


@dataclass(frozen=True)
class IdMaps:
    """Raw <-> internal id mapping; position in the tuple is the internal index."""

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {raw: k for k, raw in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {raw: k for k, raw in enumerate(self.item_ids)}


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic per-entry train/test partition."""

    train_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must lie strictly in (0, 1)")
        if self.seed < 0:
            raise DataError("seed must be nonnegative")


@dataclass(frozen=True)
class TagMatrix:
    """Sparse nonnegative entity x tag occurrence counts."""

    counts: sp.csr_matrix
    tag_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.counts.nnz and (not np.all(np.isfinite(self.counts.data))
                                or self.counts.data.min() < 0):
            raise DataError("tag counts must be finite and nonnegative")
        if self.tag_names is not None and len(self.tag_names) != self.n_tags:
            raise DataError("tag_names length must match the tag dimension")

    @property
    def n_entities(self) -> int:
        return self.counts.shape[0]

    @property
    def n_tags(self) -> int:
        return self.counts.shape[1]

    def toarray(self) -> np.ndarray:
        return self.counts.toarray()


def load_ratings(path, format="csv"):
    """Parse a ratings file into a zero-indexed sparse matrix.

    ``movielens_dat`` lines look like ``UserID::MovieID::Rating::Timestamp``;
    ``csv`` needs a ``user,item,rating`` header.  Raw ids are remapped to
    contiguous internal indices in order of first appearance.  Duplicate
    (user, item) pairs keep the last occurrence; a warning reports how many
    were merged.

    Returns ``(RatingMatrix, RatingScale, IdMaps)``.
    """
    path = Path(path)
    if format not in RATING_FORMATS:
        raise DataError(f"unknown ratings format {format!r}")
    if not path.is_file():
        raise DataError(f"{path}: no such file")

    user_ids: list[str] = []
    item_ids: list[str] = []
    uindex: dict[str, int] = {}
    iindex: dict[str, int] = {}
    uu: list[int] = []
    ii: list[int] = []
    vv: list[float] = []

    def push(raw_u: str, raw_i: str, value: float):
        ku = uindex.get(raw_u)
        if ku is None:
            ku = uindex[raw_u] = len(user_ids)
            user_ids.append(raw_u)
        ki = iindex.get(raw_i)
        if ki is None:
            ki = iindex[raw_i] = len(item_ids)
            item_ids.append(raw_i)
        uu.append(ku)
        ii.append(ki)
        vv.append(value)

    if format == "movielens_dat":
        with open(path, encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split("::")
                if len(parts) < 3:
                    raise DataError(
                        f"{path}: line {lineno}: expected "
                        "'user::item::rating[::timestamp]'")
                try:
                    value = float(parts[2])
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}: bad rating {parts[2]!r}"
                    ) from None
                push(parts[0], parts[1], value)
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: no ratings")
            if [c.strip().lower() for c in header[:3]] != ["user", "item", "rating"]:
                raise DataError(f"{path}: line 1: expected 'user,item,rating' header")
            for row in reader:
                if not row or not any(field.strip() for field in row):
                    continue
                if len(row) < 3:
                    raise DataError(
                        f"{path}: line {reader.line_num}: expected 3 fields")
                try:
                    value = float(row[2])
                except ValueError:
                    raise DataError(
                        f"{path}: line {reader.line_num}: bad rating {row[2]!r}"
                    ) from None
                push(row[0].strip(), row[1].strip(), value)

    if not vv:
        raise DataError(f"{path}: no ratings")

    users = np.asarray(uu, dtype=np.int64)
    items = np.asarray(ii, dtype=np.int64)
    values = np.asarray(vv, dtype=np.float64)

    # Keep the last occurrence of each (user, item) pair: the first hit in
    # the reversed stream is the last in file order.
    key = users * np.int64(len(item_ids)) + items
    _, first_rev = np.unique(key[::-1], return_index=True)
    keep = np.sort(key.size - 1 - first_rev)
    n_dup = key.size - keep.size
    if n_dup:
        log.warning("%s: %d duplicate (user, item) pairs, keeping the last "
                    "occurrence of each", path, n_dup)
        users, items, values = users[keep], items[keep], values[keep]

    matrix = RatingMatrix(len(user_ids), len(item_ids), users, items, values)
    scale = infer_scale(values)
    return matrix, scale, IdMaps(tuple(user_ids), tuple(item_ids))


def load_tags(path, format, ids: IdMaps, entity: str | None = None) -> TagMatrix:
    """Parse side-information files into a TagMatrix.

    Formats:
      movielens_tags  ``UserID::MovieID::Tag::Timestamp`` -> per-movie tag
                      occurrence counts; tag vocabulary is lowercased and
                      sorted.
      genre_flags     ``MovieID::Title::G1|G2|...`` -> 0/1 genre columns,
                      sorted genre vocabulary.
      adjacency_csv   ``a,b`` id pairs -> symmetric 0/1 entity x entity
                      matrix.

    ``entity`` selects which id map resolves the rows ("user" or "item");
    it defaults to "user" for adjacency_csv and "item" otherwise.  Rows
    whose entity id is unknown are dropped and counted in a warning.
    """
    path = Path(path)
    if format not in TAG_FORMATS:
        raise DataError(f"unknown tag format {format!r}")
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    if entity is None:
        entity = "user" if format == "adjacency_csv" else "item"
    if entity not in ("user", "item"):
        raise DataError(f"unknown entity kind {entity!r}")
    index = ids.user_index if entity == "user" else ids.item_index
    n_entities = len(index)

    rows: list[int] = []
    cols: list[int] = []
    dropped = 0
    tag_names: tuple[str, ...] | None = None

    if format == "movielens_tags":
        vocab: dict[str, int] = {}
        names: list[str] = []
        with open(path, encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("::")
                if len(parts) < 4:
                    raise DataError(
                        f"{path}: line {lineno}: expected "
                        "'user::item::tag::timestamp'")
                ent = index.get(parts[1])
                if ent is None:
                    dropped += 1
                    continue
                tag = "::".join(parts[2:-1]).strip().lower()
                kt = vocab.get(tag)
                if kt is None:
                    kt = vocab[tag] = len(names)
                    names.append(tag)
                rows.append(ent)
                cols.append(kt)
        order = np.argsort(names)
        remap = np.empty(len(names), dtype=np.int64)
        remap[order] = np.arange(len(names))
        cols = remap[np.asarray(cols, dtype=np.int64)] if cols else []
        tag_names = tuple(names[k] for k in order)
        n_tags = len(tag_names)
        binary = False
    elif format == "genre_flags":
        vocab = {}
        names = []
        with open(path, encoding="latin-1") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("::")
                if len(parts) < 3:
                    raise DataError(
                        f"{path}: line {lineno}: expected 'item::title::genres'")
                ent = index.get(parts[0])
                if ent is None:
                    dropped += 1
                    continue
                for genre in parts[-1].split("|"):
                    genre = genre.strip()
                    if not genre:
                        continue
                    kt = vocab.get(genre)
                    if kt is None:
                        kt = vocab[genre] = len(names)
                        names.append(genre)
                    rows.append(ent)
                    cols.append(kt)
        order = np.argsort(names)
        remap = np.empty(len(names), dtype=np.int64)
        remap[order] = np.arange(len(names))
        cols = remap[np.asarray(cols, dtype=np.int64)] if cols else []
        tag_names = tuple(names[k] for k in order)
        n_tags = len(tag_names)
        binary = True
    else:  # adjacency_csv
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            for row in reader:
                if not row or not any(field.strip() for field in row):
                    continue
                if len(row) < 2:
                    raise DataError(
                        f"{path}: line {reader.line_num}: expected 'a,b' pair")
                a = index.get(row[0].strip())
                b = index.get(row[1].strip())
                if a is None or b is None:
                    dropped += 1
                    continue
                rows.extend((a, b))
                cols.extend((b, a))
        n_tags = n_entities
        binary = True

    if dropped:
        log.warning("%s: dropped %d rows referencing unknown entities",
                    path, dropped)

    data = np.ones(len(rows), dtype=np.float64)
    counts = sp.coo_matrix(
        (data, (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(n_entities, n_tags)).tocsr()
    if binary and counts.nnz:
        counts.data = np.minimum(counts.data, 1.0)
    return TagMatrix(counts, tag_names)


def split(ratings: RatingMatrix, spec: SplitSpec):
    """Partition entries into train/test by a seeded uniform shuffle.

    The train side gets ``round(train_fraction * n_entries)`` entries; the
    two sides are disjoint and cover everything.  Both keep the parent's
    dimensions, so entities that end up without training ratings stay
    addressable.
    """
    n = ratings.n_entries
    if n == 0:
        raise DataError("cannot split an empty rating matrix")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.train_fraction * n))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return _take(ratings, train_idx), _take(ratings, test_idx)


def _take(ratings: RatingMatrix, idx: np.ndarray) -> RatingMatrix:
    return RatingMatrix(ratings.n_users, ratings.n_items,
                        ratings.users[idx], ratings.items[idx],
                        ratings.ratings[idx])


def save_snapshot(path, ratings: RatingMatrix, scale: RatingScale, ids: IdMaps):
    """Write a lossless .npz snapshot of a loaded dataset."""
    np.savez_compressed(
        path,
        format_version=SNAPSHOT_VERSION,
        n_users=ratings.n_users,
        n_items=ratings.n_items,
        users=ratings.users,
        items=ratings.items,
        values=ratings.ratings,
        scale=np.array([scale.min_rating, scale.max_rating,
                        float(scale.is_discrete), scale.step]),
        user_ids=np.asarray(ids.user_ids),
        item_ids=np.asarray(ids.item_ids),
    )


def load_snapshot(path):
    """Inverse of save_snapshot; round-trips bit-exactly."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != SNAPSHOT_VERSION:
            raise DataError(f"unsupported snapshot version {version}")
        matrix = RatingMatrix(int(z["n_users"]), int(z["n_items"]),
                              z["users"], z["items"], z["values"])
        smin, smax, sdisc, sstep = z["scale"]
        scale = RatingScale(float(smin), float(smax), bool(sdisc), float(sstep))
        ids = IdMaps(tuple(str(s) for s in z["user_ids"]),
                     tuple(str(s) for s in z["item_ids"]))
    return matrix, scale, ids


def save_tag_snapshot(path, tags: TagMatrix, entity: str = "item"):
    """Snapshot a tag matrix plus which entity kind its rows describe."""
    if entity not in ("user", "item"):
        raise DataError(f"unknown tag entity {entity!r}")
    coo = tags.counts.tocoo()
    names = np.asarray(tags.tag_names if tags.tag_names is not None else [])
    np.savez_compressed(
        path,
        format_version=SNAPSHOT_VERSION,
        shape=np.int64(tags.counts.shape),
        row=coo.row.astype(np.int64),
        col=coo.col.astype(np.int64),
        data=coo.data.astype(np.float64),
        tag_names=names,
        has_names=tags.tag_names is not None,
        entity=entity,
    )


def load_tag_snapshot(path):
    """Inverse of save_tag_snapshot; returns (TagMatrix, entity kind)."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != SNAPSHOT_VERSION:
            raise DataError(f"unsupported snapshot version {version}")
        shape = tuple(int(v) for v in z["shape"])
        counts = sp.coo_matrix((z["data"], (z["row"], z["col"])),
                               shape=shape).tocsr()
        names = tuple(str(s) for s in z["tag_names"]) if bool(z["has_names"]) else None
        entity = str(z["entity"])
    return TagMatrix(counts, names), entity
