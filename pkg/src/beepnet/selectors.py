"""Strong and avoiding selector families.

A family over the universe [1, n] is an ordered sequence of subsets used
as a beep schedule: slot i activates exactly the members of set i.  Two
guarantees matter.  A strong family with parameter k isolates every
element of every subset of size at most k, and its own sets are capped
at k elements.  An avoiding family with parameters (k, l) promises less:
for each subset S of size at most k, either every element of S gets
isolated, or more than l of them do.  Avoiding sets are not size-capped.

Construction is seeded and deterministic.  Small parameter ranges run a
greedy cover over all isolation demands; k >= n degenerates to the
singleton family; everything else draws seeded random sets.  Families
are verified exhaustively when the subset count permits, otherwise by
stratified sampling, and the achieved tier is recorded on the family.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._bits import U64, popcount
from .graphs import ParameterError

DEFAULT_SEED = 1

# Greedy tracks one state row per subset; keep that under a million rows.
GREEDY_STATE_LIMIT = 1_000_000
# Exhaustive verification walks every subset of size <= k.
VERIFY_SUBSET_LIMIT = 10_000_000
SAMPLES_PER_SIZE = 4_000

_CANDIDATES_PER_ROUND = 16
_TARGETED_PER_ROUND = 4
_KIND_TAG = {"strong": 11, "avoiding": 13}


def subset_count(n: int, k: int) -> int:
    """Number of nonempty subsets of [1, n] with at most k elements."""
    return sum(math.comb(n, s) for s in range(1, min(k, n) + 1))


def strong_length(n: int, k: int) -> int:
    """Declared schedule length for a strong (n, k) family."""
    return math.ceil(k * k * math.log2(n + 1))


def avoiding_length(n: int, k: int, l: int) -> int:
    """Declared schedule length for an avoiding (n, k, l) family."""
    return math.ceil(k * k / (k - l) * math.log2(n + 1))


@dataclass
class SelectorFamily:
    n: int
    kind: str  # "strong" or "avoiding"
    k: int
    l: int | None
    sets: tuple[tuple[int, ...], ...]
    seed: int
    method: str  # "greedy", "random", or "singleton"
    verified: str = "none"  # "exhaustive", "sampled", or "none"
    _masks: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("strong", "avoiding"):
            raise ParameterError(f"unknown selector kind {self.kind!r}")
        if self.kind == "strong":
            if self.l is not None:
                raise ParameterError("a strong family carries no avoidance threshold")
        else:
            if self.l is None or not 1 <= self.l < self.k:
                raise ParameterError("an avoiding family needs 1 <= l < k")
        if not 1 <= self.k <= self.n:
            raise ParameterError("selector parameters need 1 <= k <= n")
        for f in self.sets:
            for e in f:
                if not 1 <= e <= self.n:
                    raise ParameterError(f"set member {e} outside [1, {self.n}]")

    def __len__(self) -> int:
        return len(self.sets)

    def masks(self) -> np.ndarray:
        """Sets as uint64 bitmasks, element e at bit e - 1.  Needs n <= 64."""
        if self.n > 64:
            raise ParameterError("bitmask view needs a universe of at most 64")
        if self._masks is None:
            vals = [sum(1 << (e - 1) for e in f) for f in self.sets]
            self._masks = np.array(vals, dtype=U64)
        return self._masks

    def member_matrix(self) -> np.ndarray:
        """Sets as a (len, n) boolean membership matrix."""
        mat = np.zeros((len(self.sets), self.n), dtype=bool)
        for i, f in enumerate(self.sets):
            for e in f:
                mat[i, e - 1] = True
        return mat


# ---------------------------------------------------------------------------
# subset enumeration and sampling


def _iter_subset_cols(n: int, sizes, chunk: int = 200_000):
    """Yield (s, cols) with cols an (m, s) int64 array of 0-based members."""
    for s in sizes:
        if s > n:
            continue
        it = itertools.combinations(range(n), s)
        while True:
            block = list(itertools.islice(it, chunk))
            if not block:
                break
            yield s, np.array(block, dtype=np.int64)


def _sample_subset_cols(n: int, s: int, count: int, rng) -> np.ndarray:
    """Random s-subsets of range(n), as sorted (count, s) columns."""
    if 4 * s * s >= n:
        # Dense subsets: iid draws would collide almost surely.
        picks = np.argsort(rng.random((count, n)), axis=1)[:, :s]
        picks.sort(axis=1)
        return picks.astype(np.int64)
    cols = rng.integers(0, n, size=(count, s))
    cols.sort(axis=1)
    for _ in range(64):
        bad = (np.diff(cols, axis=1) == 0).any(axis=1)
        if not bad.any():
            break
        cols[bad] = rng.integers(0, n, size=(int(bad.sum()), s))
        cols.sort(axis=1)
    else:
        raise RuntimeError("subset sampling failed to decollide")
    return cols


def _cols_to_masks(cols: np.ndarray) -> np.ndarray:
    return np.bitwise_or.reduce(np.uint64(1) << cols.astype(np.uint64), axis=1)


# ---------------------------------------------------------------------------
# verification

def _isolation_counts_masked(set_masks: np.ndarray, smasks: np.ndarray) -> np.ndarray:
    """Per subset, how many of its elements some set isolates.  n <= 64 path."""
    iso = np.zeros(smasks.shape, dtype=U64)
    for f in set_masks:
        x = smasks & f
        hit = popcount(x) == 1
        if hit.any():
            iso[hit] |= x[hit]
    return popcount(iso).astype(np.int64)


def _isolation_counts_matrix(member: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Same as above for arbitrary n, from a boolean membership matrix."""
    m, s = cols.shape
    iso = np.zeros((m, s), dtype=bool)
    for row in member:
        x = row[cols]
        hit = x.sum(axis=1) == 1
        if hit.any():
            iso[hit] |= x[hit]
    return iso.sum(axis=1).astype(np.int64)


def _isolation_counts(fam: SelectorFamily, cols: np.ndarray, member=None) -> np.ndarray:
    if fam.n <= 64:
        return _isolation_counts_masked(fam.masks(), _cols_to_masks(cols))
    if member is None:
        member = fam.member_matrix()
    return _isolation_counts_matrix(member, cols)


def _check_counts_strong(iso_count: np.ndarray, s: int) -> bool:
    return bool(np.all(iso_count == s))


def _check_counts_avoiding(iso_count: np.ndarray, s: int, k: int, l: int) -> bool:
    ok = (iso_count == s) | (iso_count > l)
    # A subset passing the definition can never leave k - l of its
    # elements unisolated; that count bound is one-directional, so it is
    # asserted rather than used as the acceptance test.
    if np.any(ok & ~(s - iso_count < k - l)):
        raise AssertionError("definition pass with large unisolated count")
    return bool(np.all(ok))


def verify_strong_selector(fam: SelectorFamily, n: int, k: int, exhaustive: bool = True) -> bool:
    """Check every size <= k subset of [1, n] has all elements isolated.

    With exhaustive=False only a stratified sample of subsets is checked.
    Set sizes are validated against the cap either way.
    """
    if fam.kind != "strong":
        raise ParameterError("verify_strong_selector needs a strong family")
    if any(len(f) > k for f in fam.sets):
        return False
    if exhaustive:
        if subset_count(n, k) > VERIFY_SUBSET_LIMIT:
            raise ParameterError("subset count exceeds the exhaustive verification guard")
        chunks = _iter_subset_cols(n, range(1, min(k, n) + 1))
    else:
        chunks = _sampled_chunks(n, k, fam.seed)
    member = fam.member_matrix() if n > 64 else None
    for s, cols in chunks:
        if not _check_counts_strong(_isolation_counts(fam, cols, member), s):
            return False
    return True


def verify_avoiding_selector(
    fam: SelectorFamily, n: int, k: int, l: int, exhaustive: bool = True
) -> bool:
    """Check each size <= k subset is fully isolated or has > l isolated."""
    if fam.kind != "avoiding":
        raise ParameterError("verify_avoiding_selector needs an avoiding family")
    if not 1 <= l < k <= n:
        raise ParameterError("avoiding verification needs 1 <= l < k <= n")
    if exhaustive:
        if subset_count(n, k) > VERIFY_SUBSET_LIMIT:
            raise ParameterError("subset count exceeds the exhaustive verification guard")
        chunks = _iter_subset_cols(n, range(1, min(k, n) + 1))
    else:
        chunks = _sampled_chunks(n, k, fam.seed)
    member = fam.member_matrix() if n > 64 else None
    for s, cols in chunks:
        if not _check_counts_avoiding(_isolation_counts(fam, cols, member), s, k, l):
            return False
    return True


def _sampled_chunks(n: int, k: int, seed: int):
    rng = np.random.default_rng([seed, n, k, 29])
    for s in range(1, min(k, n) + 1):
        total = math.comb(n, s)
        if total <= SAMPLES_PER_SIZE:
            yield from _iter_subset_cols(n, [s])
        else:
            yield s, _sample_subset_cols(n, s, SAMPLES_PER_SIZE, rng)


# ---------------------------------------------------------------------------
# construction

def _singleton_family(n: int, kind: str, k: int, l, seed: int) -> SelectorFamily:
    sets = tuple((e,) for e in range(1, n + 1))
    return SelectorFamily(n, kind, k, l, sets, seed, "singleton")


def _random_sets(n: int, kind: str, k: int, count: int, rng) -> list[tuple[int, ...]]:
    # aim for density 1/k; a strong family additionally keeps sets at size <= k
    size = min(k, max(1, round(n / k)))
    out = []
    for _ in range(count):
        if kind == "strong":
            ids = rng.choice(n, size=size, replace=False) + 1
        else:
            ids = np.nonzero(rng.random(n) < 1.0 / k)[0] + 1
        out.append(tuple(sorted(int(e) for e in ids)))
    return out


def _greedy_sets(n: int, kind: str, k: int, l, rng, target_len: int) -> list[tuple[int, ...]]:
    """Cover all isolation demands greedily, then pad to the declared length.

    State is one row per subset of size <= k: its member mask, the mask of
    members isolated so far, and the subset size.  Rows satisfied under the
    family definition are dropped as they accumulate.
    """
    smask_parts = []
    size_parts = []
    for s, cols in _iter_subset_cols(n, range(1, min(k, n) + 1)):
        smask_parts.append(_cols_to_masks(cols))
        size_parts.append(np.full(cols.shape[0], s, dtype=np.int64))
    smask = np.concatenate(smask_parts)
    size = np.concatenate(size_parts)
    iso = np.zeros(smask.shape, dtype=U64)

    def satisfied() -> np.ndarray:
        cnt = popcount(iso).astype(np.int64)
        if kind == "strong":
            return cnt == size
        return (cnt == size) | (cnt > l)

    chosen: list[int] = []
    rounds_since_compact = 0
    while True:
        sat = satisfied()
        if sat.all():
            break
        if rounds_since_compact >= 8:
            keep = ~sat
            smask, size, iso = smask[keep], size[keep], iso[keep]
            sat = np.zeros(smask.shape, dtype=bool)
            rounds_since_compact = 0
        candidates = [
            _mask_of(ids) for ids in _random_sets(n, kind, k, _CANDIDATES_PER_ROUND, rng)
        ]
        open_rows = np.nonzero(~sat)[0]
        for row in open_rows[:_TARGETED_PER_ROUND]:
            pending = int(smask[row] & ~iso[row])
            if pending:
                candidates.append(1 << _lowest_bit(pending))
        best_mask, best_score = 0, -1
        for f in candidates:
            x = smask & np.uint64(f)
            gain = (popcount(x) == 1) & ((x & ~iso) != 0) & ~sat
            score = int(gain.sum())
            if score > best_score:
                best_mask, best_score = f, score
        if best_score <= 0:
            raise RuntimeError("greedy selector construction stalled")
        x = smask & np.uint64(best_mask)
        upd = popcount(x) == 1
        iso[upd] |= x[upd]
        chosen.append(best_mask)
        rounds_since_compact += 1

    pad = target_len - len(chosen)
    sets = [_ids_of(m) for m in chosen]
    if pad > 0:
        sets.extend(_random_sets(n, kind, k, pad, rng))
    return sets


def _mask_of(ids) -> int:
    return sum(1 << (e - 1) for e in ids)


def _ids_of(mask: int) -> tuple[int, ...]:
    return tuple(i + 1 for i in range(mask.bit_length()) if (mask >> i) & 1)


def _lowest_bit(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


def _build(n: int, kind: str, k: int, l, seed: int) -> SelectorFamily:
    if kind == "strong":
        target = strong_length(n, k)
    else:
        target = avoiding_length(n, k, l)
    if k >= n:
        fam = _singleton_family(n, kind, k, l, seed)
        fam.verified = _verify_tier(fam, n, k, l)
        if fam.verified == "failed":
            raise RuntimeError("singleton family failed verification")
        return fam

    greedy_ok = n <= 64 and subset_count(n, k) <= GREEDY_STATE_LIMIT
    for attempt in range(4):
        rng = np.random.default_rng([seed, n, k, l or 0, _KIND_TAG[kind], attempt])
        length = math.ceil(target * 1.5**attempt)
        if greedy_ok:
            sets = _greedy_sets(n, kind, k, l, rng, target)
            method = "greedy"
        else:
            sets = _random_sets(n, kind, k, length, rng)
            method = "random"
        fam = SelectorFamily(n, kind, k, l, tuple(sets), seed, method)
        tier = _verify_tier(fam, n, k, l)
        if tier != "failed":
            fam.verified = tier
            return fam
        if greedy_ok:
            raise RuntimeError("greedy family failed verification")
    raise RuntimeError(f"selector construction failed for ({n}, {kind}, {k}, {l})")


def _verify_tier(fam: SelectorFamily, n: int, k: int, l) -> str:
    exhaustive = subset_count(n, k) <= VERIFY_SUBSET_LIMIT
    if fam.kind == "strong":
        ok = verify_strong_selector(fam, n, k, exhaustive=exhaustive)
    else:
        ok = verify_avoiding_selector(fam, n, k, l, exhaustive=exhaustive)
    if not ok:
        return "failed"
    return "exhaustive" if exhaustive else "sampled"


def build_strong_selector(n: int, k: int, seed: int = DEFAULT_SEED) -> SelectorFamily:
    """Build a verified strong (n, k) family at the declared length."""
    if not 1 <= k <= n:
        raise ParameterError("strong selector needs 1 <= k <= n")
    return _build(n, "strong", k, None, seed)


def build_avoiding_selector(n: int, k: int, l: int, seed: int = DEFAULT_SEED) -> SelectorFamily:
    """Build a verified avoiding (n, k, l) family at the declared length."""
    if not 1 <= l < k <= n:
        raise ParameterError("avoiding selector needs 1 <= l < k <= n")
    return _build(n, "avoiding", k, l, seed)


# ---------------------------------------------------------------------------
# serialization and cache

def save_family(fam: SelectorFamily, path) -> None:
    lines = []
    if fam.kind == "strong":
        lines.append(f"{fam.n} strong {fam.k} {len(fam.sets)} {fam.seed} {fam.method}")
    else:
        lines.append(
            f"{fam.n} avoiding {fam.k} {fam.l} {len(fam.sets)} {fam.seed} {fam.method}"
        )
    for f in fam.sets:
        lines.append(" ".join(str(e) for e in f))
    Path(path).write_text("\n".join(lines) + "\n")


def load_family(path) -> SelectorFamily:
    raw = Path(path).read_text().split("\n")
    if raw and raw[-1] == "":
        raw.pop()
    if not raw:
        raise ParameterError(f"empty selector file {path}")
    head = raw[0].split()
    if len(head) < 2 or head[1] not in ("strong", "avoiding"):
        raise ParameterError(f"bad selector header in {path}")
    kind = head[1]
    try:
        if kind == "strong":
            n, k, length, seed = int(head[0]), int(head[2]), int(head[3]), int(head[4])
            method = head[5]
            l = None
        else:
            n, k, l = int(head[0]), int(head[2]), int(head[3])
            length, seed, method = int(head[4]), int(head[5]), head[6]
    except (IndexError, ValueError) as exc:
        raise ParameterError(f"bad selector header in {path}") from exc
    body = raw[1:]
    if len(body) != length:
        raise ParameterError(f"selector file {path} promises {length} sets, has {len(body)}")
    sets = tuple(tuple(int(tok) for tok in line.split()) for line in body)
    return SelectorFamily(n, kind, k, l, sets, seed, method)


def cache_dir() -> Path:
    root = os.environ.get("BEEPNET_CACHE_DIR")
    if root:
        return Path(root)
    return Path.home() / ".cache" / "beepnet" / "selectors"


_memory_cache: dict[tuple, SelectorFamily] = {}


def clear_memory_cache() -> None:
    _memory_cache.clear()


def _cached(n: int, kind: str, k: int, l, seed: int, use_cache: bool) -> SelectorFamily:
    key = (n, kind, k, l, seed)
    if use_cache and key in _memory_cache:
        return _memory_cache[key]
    path = cache_dir() / f"{n}-{kind}-{k}-{l or 0}-s{seed}.txt"
    fam = None
    if use_cache and path.exists():
        try:
            fam = load_family(path)
        except ParameterError:
            fam = None
        if fam is not None and (fam.n, fam.kind, fam.k, fam.l, fam.seed) != key:
            fam = None
    if fam is None:
        fam = _build(n, kind, k, l, seed)
        if use_cache:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_family(fam, path)
    if use_cache:
        _memory_cache[key] = fam
    return fam


def get_strong_selector(n: int, k: int, seed: int = DEFAULT_SEED, use_cache: bool = True) -> SelectorFamily:
    if not 1 <= k <= n:
        raise ParameterError("strong selector needs 1 <= k <= n")
    return _cached(n, "strong", k, None, seed, use_cache)


def get_avoiding_selector(
    n: int, k: int, l: int, seed: int = DEFAULT_SEED, use_cache: bool = True
) -> SelectorFamily:
    if not 1 <= l < k <= n:
        raise ParameterError("avoiding selector needs 1 <= l < k <= n")
    return _cached(n, "avoiding", k, l, seed, use_cache)
