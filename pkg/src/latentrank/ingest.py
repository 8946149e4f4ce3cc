"""Star ratings to pairwise comparisons.

Supports the MovieLens ``user::item::rating::timestamp`` layout and CSV with a
``userId,movieId,rating,timestamp`` header. Ids are remapped to dense 0-based
indices in ascending order of the original id.
"""

import csv
import logging
from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from . import _rng
from .exceptions import ValidationError
from .model import ComparisonDataset, pair_to_index

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01
SELECTIONS = ("full", "partial")
TIE_POLICIES = ("both", "ignore", "random")


@dataclass(frozen=True)
class RatingsTable:
    users: np.ndarray  # dense user index per record
    items: np.ndarray  # dense item index per record
    stars: np.ndarray
    timestamps: np.ndarray
    user_ids: np.ndarray  # original id of each dense user
    item_ids: np.ndarray  # original id of each dense item
    malformed: int = 0
    duplicates: int = 0

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.stars) == len(self.timestamps)):
            raise ValidationError("ratings columns differ in length")
        if len(self.stars) and (np.min(self.stars) < 1 or np.max(self.stars) > 5):
            raise ValidationError("stars must lie in 1..5")

    def __len__(self):
        return len(self.stars)

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    def ratings_count(self):
        """N_star per user."""
        return np.bincount(self.users, minlength=self.n_users)

    def user_ratings(self, m):
        """{dense item: stars} for user m."""
        sel = self.users == m
        return dict(zip(self.items[sel].tolist(), self.stars[sel].tolist()))

    def by_user(self):
        order = np.lexsort((self.items, self.users))
        bounds = np.searchsorted(self.users[order], np.arange(self.n_users + 1))
        for m in range(self.n_users):
            rows = order[bounds[m]:bounds[m + 1]]
            yield m, self.items[rows], self.stars[rows]


def _build_table(raw, malformed):
    """raw: list of (user, item, stars, timestamp) with original ids."""
    if not raw:
        raise ValidationError("no well-formed ratings")
    u = np.array([r[0] for r in raw], dtype=np.int64)
    i = np.array([r[1] for r in raw], dtype=np.int64)
    s = np.array([r[2] for r in raw], dtype=float)
    t = np.array([r[3] for r in raw], dtype=np.int64)
    # keep the latest timestamp per (user, item); later lines win exact ties
    order = np.lexsort((np.arange(len(raw)), t, i, u))
    u, i, s, t = u[order], i[order], s[order], t[order]
    last = np.ones(len(u), dtype=bool)
    last[:-1] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    dups = int((~last).sum())
    u, i, s, t = u[last], i[last], s[last], t[last]
    user_ids, users = np.unique(u, return_inverse=True)
    item_ids, items = np.unique(i, return_inverse=True)
    return RatingsTable(users, items, s, t, user_ids, item_ids, malformed, dups)


def _parse_line(fields):
    user, item, rating, ts = fields
    stars = float(rating)
    if not 1 <= stars <= 5:
        raise ValueError("stars out of range")
    return int(user), int(item), stars, int(float(ts))


def parse_ratings(path, format="dat"):
    if format not in ("dat", "csv"):
        raise ValidationError("format must be 'dat' or 'csv'")
    raw, bad, total = [], 0, 0
    with open(path, newline="", encoding="latin-1") as fh:
        if format == "dat":
            rows = (line.rstrip("\r\n").split("::") for line in fh if line.strip())
        else:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:4]] != ["userId", "movieId", "rating", "timestamp"]:
                raise ValidationError(f"{path}: expected header userId,movieId,rating,timestamp")
            rows = (r for r in reader if r)
        for fields in rows:
            total += 1
            try:
                if len(fields) != 4:
                    raise ValueError("wrong field count")
                raw.append(_parse_line(fields))
            except ValueError:
                bad += 1
    if total and bad / total > MAX_MALFORMED_FRACTION:
        raise ValidationError(f"{path}: {bad} of {total} lines malformed (> 1%)")
    if bad:
        log.warning("%s: skipped %d malformed line(s)", path, bad)
    return _build_table(raw, bad)


def _restrict(table, keep_record, items_keep=None):
    users, items = table.users[keep_record], table.items[keep_record]
    item_keep = np.unique(items) if items_keep is None else np.sort(items_keep)
    user_keep = np.unique(users)
    return RatingsTable(
        np.searchsorted(user_keep, users),
        np.searchsorted(item_keep, items),
        table.stars[keep_record],
        table.timestamps[keep_record],
        table.user_ids[user_keep],
        table.item_ids[item_keep],
        table.malformed,
        table.duplicates,
    )


def top_q_filter(table, Q):
    """Ratings of the Q most-rated items; count ties go to the smaller original id."""
    if Q > table.n_items:
        raise ValidationError(f"only {table.n_items} items, cannot keep Q={Q}")
    counts = np.bincount(table.items, minlength=table.n_items)
    order = np.lexsort((table.item_ids, -counts))
    keep_items = np.sort(order[:Q])
    mask = np.isin(table.items, keep_items)
    return _restrict(table, mask, keep_items)


@dataclass(frozen=True)
class ConversionPolicy:
    selection: str = "full"
    tie_policy: str = "ignore"
    partial_multiplier: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ValidationError(f"selection must be one of {SELECTIONS}")
        if self.tie_policy not in TIE_POLICIES:
            raise ValidationError(f"tie policy must be one of {TIE_POLICIES}")
        if int(self.partial_multiplier) < 1:
            raise ValidationError("partial multiplier must be >= 1")


def convert_user(items, stars, Q, policy, m, tag=""):
    """Comparison row indices for one user's ratings."""
    pairs = list(combinations(range(len(items)), 2))
    if policy.selection == "partial" and pairs:
        k = min(policy.partial_multiplier * len(items), len(pairs))
        pick = _rng.stream(policy.seed, f"select{tag}", m).choice(len(pairs), size=k, replace=False)
        pairs = [pairs[p] for p in pick]
    coin = _rng.stream(policy.seed, f"ties{tag}", m)
    out = []
    for a, b in pairs:
        i, j = int(items[a]), int(items[b])
        if stars[a] > stars[b]:
            out.append((i, j))
        elif stars[a] < stars[b]:
            out.append((j, i))
        elif policy.tie_policy == "both":
            out += [(i, j), (j, i)]
        elif policy.tie_policy == "random":
            out.append((i, j) if coin.random() < 0.5 else (j, i))
    if not out:
        return np.zeros(0, dtype=np.int64)
    w = pair_to_index(np.array([p[0] for p in out]), np.array([p[1] for p in out]), Q)
    # arrival order carries no information here; shuffle so index-based
    # splits of the comparisons are random
    return _rng.stream(policy.seed, f"order{tag}", m).permutation(np.atleast_1d(w))


def ratings_to_comparisons(table, policy, tag=""):
    per_user = [convert_user(items, stars, table.n_items, policy, m, tag) for m, items, stars in table.by_user()]
    return ComparisonDataset.from_lists(table.n_items, per_user, tuple(table.user_ids.tolist()))


def parse_split(text):
    """'new-comparison:0.8' -> ('new-comparison', 0.8); 'new-user:4000' -> ('new-user', 4000)."""
    if isinstance(text, tuple):
        return text
    kind, _, value = str(text).partition(":")
    if kind == "new-comparison":
        return kind, float(value) if value else 0.8
    if kind == "new-user":
        if not value:
            raise ValidationError("new-user split needs a training user count")
        return kind, int(value)
    raise ValidationError(f"unknown split mode {text!r}")


def split_ratings(table, ratio, seed):
    """Per-user split of ratings: floor(ratio * n) train, rest test.

    Both halves keep the dense user and item indices of ``table``.
    """
    if not 0 < ratio < 1:
        raise ValidationError("split ratio must be in (0, 1)")
    train = np.zeros(len(table), dtype=bool)
    for m in range(table.n_users):
        rows = np.flatnonzero(table.users == m)
        n_train = int(np.floor(ratio * len(rows) + 1e-9))
        chosen = _rng.stream(seed, "rating-split", m).permutation(rows)[:n_train]
        train[chosen] = True

    def part(mask):
        return replace(table, users=table.users[mask], items=table.items[mask],
                       stars=table.stars[mask], timestamps=table.timestamps[mask])

    return part(train), part(~train)


def build_split(table, mode, policy, seed=None):
    """(train, test) ComparisonDatasets for one of the two prediction settings."""
    kind, value = parse_split(mode)
    seed = policy.seed if seed is None else seed
    if kind == "new-comparison":
        train_r, test_r = split_ratings(table, value, seed)
        return ratings_to_comparisons(train_r, policy, "-train"), ratings_to_comparisons(test_r, policy, "-test")
    n = int(value)
    if not 1 <= n < table.n_users:
        raise ValidationError(f"train user count must be in [1, {table.n_users})")
    data = ratings_to_comparisons(table, policy)
    return data.subset(range(n)), data.subset(range(n, data.M))
