"""Rating-file ingestion, filtering and per-user train/valid/test splitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

FORMATS = ("movielens-tab", "csv-generic")

TRAIN, VALID, TEST = 0, 1, 2
PARTITION_NAMES = ("train", "valid", "test")


class DatasetFormatError(ValueError):
    """A row of a rating file could not be parsed."""

    def __init__(self, path, lineno, reason):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}")


class EmptyDatasetError(ValueError):
    pass


class RawInteraction(NamedTuple):
    user_id: str
    item_id: str
    rating: float
    timestamp: Optional[int] = None


def _parse_rating(text, path, lineno):
    try:
        rating = float(text)
    except ValueError:
        raise DatasetFormatError(path, lineno, f"non-numeric rating {text!r}") from None
    if not math.isfinite(rating):
        raise DatasetFormatError(path, lineno, f"non-finite rating {text!r}")
    return rating


def _parse_timestamp(text, path, lineno):
    if text is None or text == "":
        return None
    try:
        return int(float(text))
    except ValueError:
        raise DatasetFormatError(path, lineno, f"bad timestamp {text!r}") from None


def load_dataset(path, format: str = "movielens-tab") -> list[RawInteraction]:
    """Parse a rating file into a list of :class:`RawInteraction`, in file order.

    ``movielens-tab`` expects ``user<TAB>item<TAB>rating<TAB>timestamp`` lines
    (the ML-100k ``u.data`` layout). ``csv-generic`` expects a header
    ``user,item,rating[,timestamp]``.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc

    out = []
    if format == "movielens-tab":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\r").split("\t")
            if len(fields) not in (3, 4):
                raise DatasetFormatError(path, lineno, f"expected 4 tab-separated fields, got {len(fields)}")
            ts = _parse_timestamp(fields[3] if len(fields) == 4 else None, path, lineno)
            out.append(RawInteraction(fields[0], fields[1], _parse_rating(fields[2], path, lineno), ts))
        return out

    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None:
        return out
    header = [h.strip() for h in header]
    if header[:3] != ["user", "item", "rating"] or len(header) > 4 or (
        len(header) == 4 and header[3] != "timestamp"
    ):
        raise DatasetFormatError(path, 1, f"bad header {','.join(header)!r}")
    for lineno, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise DatasetFormatError(path, lineno, f"expected {len(header)} fields, got {len(fields)}")
        ts = _parse_timestamp(fields[3].strip(), path, lineno) if len(header) == 4 else None
        out.append(RawInteraction(fields[0].strip(), fields[1].strip(),
                                  _parse_rating(fields[2].strip(), path, lineno), ts))
    return out


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Filtered interactions with dense indices and a per-edge partition label.

    ``edges`` is an ``(E, 2)`` int array of ``(user_idx, item_idx)`` sorted by
    user then item; ``partition`` holds ``TRAIN``/``VALID``/``TEST`` per edge.
    """

    user_ids: tuple
    item_ids: tuple
    edges: np.ndarray
    ratings: np.ndarray
    partition: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def part(self, which: int) -> np.ndarray:
        return self.edges[self.partition == which]

    @property
    def train(self) -> np.ndarray:
        return self.part(TRAIN)

    @property
    def valid(self) -> np.ndarray:
        return self.part(VALID)

    @property
    def test(self) -> np.ndarray:
        return self.part(TEST)

    def user_items(self, which: int) -> list[np.ndarray]:
        """Per-user sorted item arrays for one partition."""
        e = self.part(which)
        bounds = np.searchsorted(e[:, 0], np.arange(self.n_users + 1))
        return [e[bounds[u]:bounds[u + 1], 1] for u in range(self.n_users)]

    def to_raw(self) -> list[RawInteraction]:
        return [
            RawInteraction(self.user_ids[u], self.item_ids[i], float(r))
            for (u, i), r in zip(self.edges.tolist(), self.ratings.tolist())
        ]

    def same_as(self, other: "InteractionDataset") -> bool:
        return (
            self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and self.edges.tobytes() == other.edges.tobytes()
            and self.ratings.tobytes() == other.ratings.tobytes()
            and self.partition.tobytes() == other.partition.tobytes()
        )


def _id_key(x: str):
    # numeric ids sort numerically so ML user "2" precedes "10"
    return (0, int(x), "") if x.isdigit() else (1, 0, x)


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Per-user partition sizes: floor valid and test, remainder to train."""
    _, f_valid, f_test = fractions
    n_valid = math.floor(n * f_valid + 1e-9)
    n_test = math.floor(n * f_test + 1e-9)
    while n - n_valid - n_test < 1 and (n_valid or n_test):
        if n_test >= n_valid:
            n_test -= 1
        else:
            n_valid -= 1
    return n - n_valid - n_test, n_valid, n_test


def _dedupe(raw: Iterable[RawInteraction]) -> dict:
    best = {}
    for r in raw:
        key = (r.user_id, r.item_id)
        if key not in best or r.rating > best[key]:
            best[key] = r.rating
    return best


def filter_and_split(
    raw: Sequence[RawInteraction],
    rating_threshold: float = 3.0,
    min_interactions: int = 15,
    split: Sequence[float] = (0.7, 0.1, 0.2),
    seed: int = 42,
) -> InteractionDataset:
    """Threshold ratings, drop sparse users to a fixed point, split each user.

    Ratings ``>= rating_threshold`` are kept. Users with fewer than
    ``min_interactions`` remaining edges are removed repeatedly until no
    more removals happen (items are never removed for low degree, only
    when they lose every edge). Each user's edges are then shuffled by a
    generator seeded with ``seed`` and cut into train/valid/test with
    :func:`split_counts`.
    """
    if len(split) != 3 or any(f <= 0 for f in split) or not math.isclose(sum(split), 1.0, abs_tol=1e-9):
        raise ValueError(f"split fractions must be three positive numbers summing to 1, got {tuple(split)}")
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")

    kept = {k: v for k, v in _dedupe(raw).items() if v >= rating_threshold}
    while True:
        degree = {}
        for u, _ in kept:
            degree[u] = degree.get(u, 0) + 1
        drop = {u for u, d in degree.items() if d < min_interactions}
        if not drop:
            break
        kept = {k: v for k, v in kept.items() if k[0] not in drop}
    if not kept:
        raise EmptyDatasetError("no users survive filtering")

    user_ids = tuple(sorted({u for u, _ in kept}, key=_id_key))
    item_ids = tuple(sorted({i for _, i in kept}, key=_id_key))
    uidx = {u: n for n, u in enumerate(user_ids)}
    iidx = {i: n for n, i in enumerate(item_ids)}

    rows = sorted((uidx[u], iidx[i], r) for (u, i), r in kept.items())
    edges = np.array([(u, i) for u, i, _ in rows], dtype=np.int64).reshape(-1, 2)
    ratings = np.array([r for _, _, r in rows], dtype=np.float64)
    partition = np.empty(len(rows), dtype=np.int8)

    rng = np.random.default_rng(seed)
    bounds = np.searchsorted(edges[:, 0], np.arange(len(user_ids) + 1))
    for u in range(len(user_ids)):
        lo, hi = bounds[u], bounds[u + 1]
        n_train, n_valid, n_test = split_counts(hi - lo, split)
        labels = np.array([TRAIN] * n_train + [VALID] * n_valid + [TEST] * n_test, dtype=np.int8)
        partition[lo:hi] = labels[rng.permutation(hi - lo)]

    return InteractionDataset(user_ids, item_ids, edges, ratings, partition)


class DatasetStats(NamedTuple):
    n_users: int
    n_items: int
    n_edges: int
    sparsity: float


def dataset_stats(ds) -> DatasetStats:
    """Counts and sparsity ``1 - edges / (users * items)``.

    Accepts an :class:`InteractionDataset` or an unfiltered list of
    :class:`RawInteraction` (duplicate pairs are counted once).
    """
    if isinstance(ds, InteractionDataset):
        n_users, n_items, n_edges = ds.n_users, ds.n_items, len(ds.edges)
    else:
        pairs = {(r.user_id, r.item_id) for r in ds}
        n_users = len({u for u, _ in pairs})
        n_items = len({i for _, i in pairs})
        n_edges = len(pairs)
    denom = n_users * n_items
    sparsity = 1.0 - n_edges / denom if denom else 0.0
    return DatasetStats(n_users, n_items, n_edges, sparsity)


def write_split_manifest(ds: InteractionDataset, path) -> None:
    """Write ``user_idx item_idx partition`` lines for auditing the split."""
    with open(path, "w") as fh:
        for (u, i), p in zip(ds.edges.tolist(), ds.partition.tolist()):
            fh.write(f"{u} {i} {PARTITION_NAMES[p]}\n")
