"""One CONGEST round carried over the beep channel by handshakes.

Every directed edge message crosses the channel inside an epoch/phase
schedule derived purely from public parameters.  Epoch i targets nodes
with at least k_i = ceil(D/2^i) open links ("announcers"); an avoiding
selector hands each of them a phase in which it beeps its ID alone among
its neighbors' announcers.  A neighbor that hears the ID cleanly becomes
responsive and, guided by a second cascade of avoiding selectors, sends
back <own id><announcer id><payload> across one window's first half; the
announcer answers <own id><responder id><payload> in the second half and
both sides mark the link realized at the window's end.

All words ride the extended encoding (payload then complement), so the
OR of two distinct words never decodes; the only systematic pile-up is
several responders of one announcer beeping the identical second word,
which is harmless and separately flagged by the trace auditor.

The population runner vectorizes whole super-rounds; per-node machines
(C2BNode) replay the identical schedule through the round engine for
cross-checking on small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._bits import bits_to_hex, hex_to_bits, pack_bool_rows
from .encoding import decode_extended, encode_extended, id_width
from .engine import Feedback, NodeAction, NodeProtocol, Trace
from .graphs import Graph, ParameterError
from .kernel import active as kernel
from .protocols._common import family_membership, resolve_degree_bound
from .selectors import DEFAULT_SEED, SelectorFamily, get_avoiding_selector

POPULATION_NODE_LIMIT = 64   # one channel word of node bits
REVERSAL_TABLE_LIMIT = 16    # widest payload served by the lookup table


class ScheduleIndex(NamedTuple):
    """Where one round sits in the global schedule; same at every node."""

    epoch: int
    phase: int
    subphase: int | None     # None during the announcing super-round
    window: int | None
    role: str                # "announcing" | "responding" | "confirming"
    part: int | None         # word index inside the half-window
    super_round: int
    offset: int              # round within the super-round, [0, 2w)


@dataclass(frozen=True)
class SubPhasePlan:
    k: int
    l: int
    family: SelectorFamily


@dataclass(frozen=True)
class EpochPlan:
    index: int
    k: int
    announce: SelectorFamily
    subphases: tuple[SubPhasePlan, ...]


def epoch_count(delta_hat: int) -> int:
    return max(1, math.ceil(math.log2(delta_hat)))


def subphase_parameters(k_i: int, delta_hat: int, epoch: int) -> list[tuple[int, int]]:
    """(k', l') per sub-phase, small values clamped into the legal range.

    The clamp can drive the last sub-phase's forced-isolation threshold
    below the worst entering count in exactly one configuration (degree
    bound 4, first epoch); an extra (2, 1) sub-phase there restores the
    within-phase guarantee.
    """
    out = []
    for a in range(1, max(1, math.ceil(math.log2(k_i))) + 1):
        kp = max(2, math.ceil(k_i / 2 ** (a - 2)))
        lp = max(1, min(math.ceil(k_i / 2 ** (a - 1)), kp - 1))
        out.append((kp, lp))
    if epoch == 1 and delta_hat == 4:
        out.append((2, 1))
    return out


def build_epochs(n: int, c: int, delta_hat: int, seed: int = DEFAULT_SEED) -> tuple[EpochPlan, ...]:
    universe = n ** c
    if delta_hat < 1:
        raise ParameterError("degree bound must be at least 1")
    if delta_hat + 1 > universe:
        raise ParameterError(f"degree bound {delta_hat} needs an ID space above {universe}")
    plans = []
    for i in range(1, epoch_count(delta_hat) + 1):
        k_i = math.ceil(delta_hat / 2 ** i)
        announce = get_avoiding_selector(universe, delta_hat + 1, delta_hat + 1 - k_i, seed)
        subs = tuple(
            SubPhasePlan(kp, lp, get_avoiding_selector(universe, kp, lp, seed))
            for kp, lp in subphase_parameters(k_i, delta_hat, i)
        )
        plans.append(EpochPlan(i, k_i, announce, subs))
    return tuple(plans)


@dataclass(frozen=True)
class C2BSchedule:
    n: int
    c: int
    delta_hat: int
    width: int               # max payload bits per directed message
    seed: int
    w: int                   # bits per extended word
    words_per_message: int
    epochs: tuple[EpochPlan, ...]

    @property
    def half_parts(self) -> int:
        return 2 + self.words_per_message

    @property
    def window_super_rounds(self) -> int:
        return 2 * self.half_parts

    def phase_super_rounds(self, epoch: EpochPlan) -> int:
        return 1 + sum(len(s.family) for s in epoch.subphases) * self.window_super_rounds

    @property
    def total_super_rounds(self) -> int:
        return sum(len(e.announce) * self.phase_super_rounds(e) for e in self.epochs)

    @property
    def total_rounds(self) -> int:
        return self.total_super_rounds * 2 * self.w

    def describe(self, round_index: int) -> ScheduleIndex:
        if not 0 <= round_index < self.total_rounds:
            raise ParameterError(f"round {round_index} outside the schedule")
        sr, offset = divmod(round_index, 2 * self.w)
        left = sr
        for epoch in self.epochs:
            span = self.phase_super_rounds(epoch)
            if left >= len(epoch.announce) * span:
                left -= len(epoch.announce) * span
                continue
            phase, inside = divmod(left, span)
            if inside == 0:
                return ScheduleIndex(epoch.index, phase + 1, None, None,
                                     "announcing", None, sr, offset)
            inside -= 1
            for a, sub in enumerate(epoch.subphases, 1):
                span_a = len(sub.family) * self.window_super_rounds
                if inside >= span_a:
                    inside -= span_a
                    continue
                window, pos = divmod(inside, self.window_super_rounds)
                role = "responding" if pos < self.half_parts else "confirming"
                return ScheduleIndex(epoch.index, phase + 1, a, window + 1,
                                     role, pos % self.half_parts, sr, offset)
        raise AssertionError("unreachable: spans covered the index")

    def window_first_super_round(self, epoch: int, phase: int,
                                 subphase: int, window: int) -> int:
        """Global index of the first responding super-round of a window."""
        sr = 0
        for plan in self.epochs:
            if plan.index != epoch:
                sr += len(plan.announce) * self.phase_super_rounds(plan)
                continue
            sr += (phase - 1) * self.phase_super_rounds(plan) + 1
            for a, sub in enumerate(plan.subphases, 1):
                if a != subphase:
                    sr += len(sub.family) * self.window_super_rounds
                    continue
                return sr + (window - 1) * self.window_super_rounds
        raise ParameterError(f"no such window: {epoch}/{phase}/{subphase}/{window}")


def build_schedule(n: int, c: int, delta_hat: int, width: int = 0,
                   seed: int = DEFAULT_SEED) -> C2BSchedule:
    if width < 0:
        raise ParameterError("message width must be nonnegative")
    w = id_width(n, c)
    return C2BSchedule(
        n, c, delta_hat, width, seed, w,
        max(1, math.ceil(width / w)),
        build_epochs(n, c, delta_hat, seed),
    )


def c2b_schedule_length(n: int, c: int, delta: int, width: int = 0,
                        seed: int = DEFAULT_SEED) -> int:
    return build_schedule(n, c, delta, width, seed).total_rounds


@dataclass
class CongestRoundInput:
    """Per directed edge (u, v), the bits u wants v to have; width caps them.

    Directions without an entry send the null payload (an empty string).
    """

    messages: dict[tuple[int, int], tuple[int, ...]]
    width: int

    def __post_init__(self):
        if self.width < 0:
            raise ParameterError("message width must be nonnegative")
        for (u, v), bits in self.messages.items():
            if len(bits) > self.width:
                raise ParameterError(f"message {u}->{v} longer than width {self.width}")
            if any(b not in (0, 1) for b in bits):
                raise ParameterError(f"message {u}->{v} has non-bit entries")


class RealizationRecord(NamedTuple):
    node: int
    peer: int
    epoch: int
    phase: int
    subphase: int
    window: int


class DecodeRecord(NamedTuple):
    super_round: int
    node: int
    role: str
    part: int | None
    payload: int


@dataclass
class HandshakeReport:
    violations: list[str] = field(default_factory=list)
    flagged: list[str] = field(default_factory=list)
    super_rounds: int = 0
    decode_events: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class C2BResult:
    received: dict[int, dict[int, tuple[int, ...]]]
    raw_received: dict[int, dict[int, tuple[int, ...]]]
    rounds: int
    schedule: C2BSchedule
    realization_log: list[RealizationRecord]
    decode_log: list[DecodeRecord]
    link_history: list[dict[int, int]]
    handshake: HandshakeReport | None
    failed: bool
    residual: dict[int, frozenset[int]]
    trace: Trace | None
    digest: str | None
    beeps_total: int

    @property
    def delivered_pairs(self) -> dict[int, set[tuple[int, tuple[int, ...]]]]:
        return {v: {(u, m) for u, m in table.items()} for v, table in self.received.items()}


def _reversal_table(w: int) -> np.ndarray:
    if w > REVERSAL_TABLE_LIMIT:
        raise ParameterError(f"word width {w} beyond the population route's table limit")
    table = np.zeros(1 << w, dtype=np.uint64)
    for x in range(1 << w):
        r = 0
        for j in range(w):
            r |= (x >> j & 1) << (w - 1 - j)
        table[x] = r
    return table


def _message_words(bits: tuple[int, ...], w: int, nwords: int) -> list[int]:
    padded = tuple(bits) + (0,) * (nwords * w - len(bits))
    out = []
    for k in range(nwords):
        chunk = padded[k * w:(k + 1) * w]
        payload = 0
        for j, b in enumerate(chunk):
            payload |= b << (w - 1 - j)
        out.append(encode_extended(payload, w))
    return out


def _words_to_bits(payloads: list[int], w: int, length: int) -> tuple[int, ...]:
    bits: list[int] = []
    for p in payloads:
        bits.extend((p >> (w - 1 - j)) & 1 for j in range(w))
    return tuple(bits[:length])


class _TraceFeed:
    """Streams per-super-round patterns into a Trace, a bare digest, or /dev/null.

    Digest mode hashes the same canonical byte stream Trace.digest would
    produce, without retaining anything; the header needs the round total,
    which the schedule supplies before the run starts.
    """

    def __init__(self, graph: Graph, mode: str, sr_rounds: int, total_rounds: int,
                 chunk: int = 512):
        if mode not in ("none", "digest", "full"):
            raise ParameterError(f"unknown record mode {mode!r}")
        self.graph = graph
        self.mode = mode
        self.sr_rounds = sr_rounds
        self.chunk = chunk
        self.trace = Trace(graph) if mode == "full" else None
        self._hash = None
        if mode == "digest":
            import hashlib

            self._hash = hashlib.sha256()
            self._hash.update(f"beep-trace n={graph.n} rounds={total_rounds}\n".encode())
        self._beeps: list[np.ndarray] = []
        self._noise: list[np.ndarray] = []

    def push(self, patterns: np.ndarray, noise: np.ndarray) -> None:
        if self.mode == "none":
            return
        self._beeps.append(patterns)
        self._noise.append(noise)
        if len(self._beeps) >= self.chunk:
            self.flush()

    def _to_cols(self, bunch: list[np.ndarray]) -> np.ndarray:
        stack = np.stack(bunch)                      # (S, n)
        shifts = np.arange(self.sr_rounds, dtype=np.uint64)
        bits = (stack[:, :, None] >> shifts) & np.uint64(1)
        return np.ascontiguousarray(
            bits.transpose(1, 0, 2).reshape(self.graph.n, -1).astype(bool))

    def flush(self) -> None:
        if self.mode == "none" or not self._beeps:
            return
        nrounds = self.sr_rounds * len(self._beeps)
        beeps = pack_bool_rows(self._to_cols(self._beeps))
        noise = pack_bool_rows(self._to_cols(self._noise))
        if self.trace is not None:
            self.trace.append_block(beeps, nrounds, noise=noise)
        else:
            w = (self.graph.n + 63) // 64
            both = np.empty((nrounds, 2, w), dtype=np.uint64)
            both[:, 0] = kernel.expand_patterns(beeps, nrounds)[:, :w]
            both[:, 1] = kernel.expand_patterns(noise, nrounds)[:, :w]
            self._hash.update(both.tobytes())
        self._beeps = []
        self._noise = []

    def finish(self) -> tuple[Trace | None, str | None]:
        self.flush()
        if self.mode == "full":
            return self.trace, self.trace.digest()
        if self.mode == "digest":
            return None, self._hash.hexdigest()
        return None, None


def _validate_input(graph: Graph, inp: CongestRoundInput) -> None:
    for u, v in inp.messages:
        if u not in graph.index_of or v not in graph.index_of or not graph.has_edge(u, v):
            raise ParameterError(f"message {u}->{v} does not ride an edge")


def _pack_index_bits(mask: np.ndarray) -> int:
    """Bool vector over node indices -> one int, bit j = node j."""
    out = 0
    for j in np.nonzero(mask)[0]:
        out |= 1 << int(j)
    return out


class _Auditor:
    """Checks decode events and realizations against the raw channel.

    Fed one super-round at a time (either live from the population runner
    or replayed from a saved trace): verifies that a lone full-word beeper
    is always decoded by every obligated listener, that every logged
    decode had a lone beeper behind it (identical-word pile-ups in the
    second responding word are flagged, not failed), and that every
    realization's window carries exactly the handshake words it claims.
    """

    def __init__(self, graph: Graph, schedule: C2BSchedule,
                 id_word: np.ndarray, msg_words: np.ndarray):
        self.graph = graph
        self.schedule = schedule
        self.id_word = id_word
        self.msg_words = msg_words
        self.adj = graph.adj_words[:, 0]
        self.report = HandshakeReport()

    def _spot(self, meta: ScheduleIndex) -> str:
        return (f"epoch {meta.epoch} phase {meta.phase} "
                f"subphase {meta.subphase} window {meta.window} sr {meta.super_round}")

    def on_super_round(self, meta: ScheduleIndex, patterns: np.ndarray,
                       noise: np.ndarray, obligated: np.ndarray,
                       decoded: np.ndarray, payloads: np.ndarray) -> None:
        self.report.super_rounds += 1
        ids = self.graph.ids
        beeper_bits = np.uint64(_pack_index_bits(patterns != 0))
        cnt = np.bitwise_count(self.adj & beeper_bits)

        lone = obligated & (patterns == 0) & (cnt == 1)
        if lone.any():
            partner_word = self.adj & beeper_bits
            partner = np.zeros(self.graph.n, dtype=np.int64)
            rows = np.nonzero(lone)[0]
            partner[rows] = np.round(
                np.log2(partner_word[rows].astype(np.float64))).astype(np.int64)
            for u in rows:
                p = int(patterns[partner[u]])
                value = decode_extended(p, self.schedule.w)
                if value is None:
                    continue
                if not decoded[u] or int(payloads[u]) != value:
                    self.report.violations.append(
                        f"{ids[u]} missed the lone word {value} from "
                        f"{ids[partner[u]]} at {self._spot(meta)}")

        for u in np.nonzero(decoded)[0]:
            self.report.decode_events += 1
            heard = int(noise[u])
            if decode_extended(heard, self.schedule.w) != int(payloads[u]):
                self.report.violations.append(
                    f"{ids[u]} logged payload {int(payloads[u])} that its channel "
                    f"word does not decode to, at {self._spot(meta)}")
                continue
            c = int(cnt[u])
            if c == 1:
                continue
            if c == 0:
                self.report.violations.append(
                    f"{ids[u]} decoded with no beeping neighbor at {self._spot(meta)}")
                continue
            beeping = [j for j in range(self.graph.n)
                       if (int(self.adj[u]) >> j & 1) and int(patterns[j])]
            words = {int(patterns[j]) for j in beeping}
            if (meta.role == "responding" and meta.part is not None
                    and meta.part >= 1 and len(words) == 1):
                self.report.flagged.append(
                    f"{ids[u]} heard {c} identical responding words "
                    f"(part {meta.part}) at {self._spot(meta)}")
            else:
                self.report.violations.append(
                    f"{ids[u]} decoded a {c}-beeper pile-up at {self._spot(meta)}")

    def on_window(self, meta: ScheduleIndex, pairs: list[tuple[int, int]],
                  respond: list[np.ndarray], confirm: list[np.ndarray]) -> None:
        ids = self.graph.ids
        w = self.schedule.w
        m = self.schedule.words_per_message
        for v, r in pairs:
            expect_resp = [int(self.id_word[r]), int(self.id_word[v])] + [
                int(self.msg_words[r, v, t]) for t in range(m)]
            expect_conf = [int(self.id_word[v]), int(self.id_word[r])] + [
                int(self.msg_words[v, r, t]) for t in range(m)]
            sent_resp = [int(half[r]) for half in respond]
            sent_conf = [int(half[v]) for half in confirm]
            if sent_resp != expect_resp or any(int(half[v]) for half in respond):
                self.report.violations.append(
                    f"realization {ids[v]}-{ids[r]} lacks its responding triple "
                    f"at {self._spot(meta)}")
            if sent_conf != expect_conf or any(int(half[r]) for half in confirm):
                self.report.violations.append(
                    f"realization {ids[v]}-{ids[r]} lacks its confirming triple "
                    f"at {self._spot(meta)}")

    def finish(self, realization_log: list[RealizationRecord]) -> HandshakeReport:
        seen = {}
        for rec in realization_log:
            seen.setdefault(frozenset((rec.node, rec.peer)), []).append(rec)
        for link, recs in seen.items():
            if len(recs) != 2 or recs[0][2:] != recs[1][2:]:
                a, b = sorted(link)
                self.report.violations.append(
                    f"link {a}-{b} realized asymmetrically: {recs}")
        return self.report


def _clear_link(unrealized: np.ndarray, i: int, j: int) -> None:
    keep = np.uint64(~(1 << j) & 0xFFFFFFFFFFFFFFFF)
    unrealized[i] = unrealized[i] & keep


def run_c2b(graph: Graph, inp: CongestRoundInput, delta_hat: int | None = None,
            seed: int = DEFAULT_SEED, record: str = "digest",
            audit: bool = True) -> C2BResult:
    """Deliver every directed per-edge message through beeped handshakes.

    The whole population advances one super-round (one extended word) at
    a time; silent stretches of the schedule are pushed through the trace
    feed without touching the decode machinery.
    """
    if graph.n > POPULATION_NODE_LIMIT:
        raise ParameterError(
            f"population route handles up to {POPULATION_NODE_LIMIT} nodes, got {graph.n}")
    delta_hat = resolve_degree_bound(graph, delta_hat, graph.delta)
    _validate_input(graph, inp)
    sched = build_schedule(graph.n, graph.c, delta_hat, inp.width, seed)

    n, w, m = graph.n, sched.w, sched.words_per_message
    ids = graph.ids
    ids_arr = np.array(ids, dtype=np.int64)
    u64 = np.uint64
    one = u64(1)
    wmask = u64((1 << w) - 1)
    wshift = u64(w)
    rev = _reversal_table(w)
    id2idx = np.full(1 << w, -1, dtype=np.int64)
    for j, u in enumerate(ids):
        id2idx[u] = j
    id_word = np.array([encode_extended(u, w) for u in ids], dtype=np.uint64)

    msg_words = np.empty((n, n, m), dtype=np.uint64)
    msg_words[:, :] = np.array(_message_words((), w, m), dtype=np.uint64)
    msg_len = np.zeros((n, n), dtype=np.int64)
    for (u, v), bits in inp.messages.items():
        ui, vi = graph.index_of[u], graph.index_of[v]
        msg_words[ui, vi] = np.array(_message_words(bits, w, m), dtype=np.uint64)
        msg_len[ui, vi] = len(bits)

    indptr, indices = graph.csr
    unrealized = graph.adj_words[:, 0].copy()
    responsive = np.full(n, -1, dtype=np.int64)
    recv_pat = np.zeros((n, n, m), dtype=np.uint64)
    recv_mask = np.zeros((n, n), dtype=bool)

    feed = _TraceFeed(graph, record, 2 * w, sched.total_rounds)
    auditor = _Auditor(graph, sched, id_word, msg_words) if audit else None
    decode_log: list[DecodeRecord] = []
    realization_log: list[RealizationRecord] = []
    link_history: list[dict[int, int]] = []
    beeps_total = 0
    sr = 0
    zeros = np.zeros(n, dtype=np.uint64)
    arange_n = np.arange(n)

    def on_wire(patterns: np.ndarray) -> np.ndarray:
        nonlocal beeps_total, sr
        if patterns.any():
            noise = kernel.or_neighbor_patterns(indptr, indices, patterns[:, None])[:, 0]
            beeps_total += int(np.bitwise_count(patterns).sum())
        else:
            noise = zeros
        feed.push(patterns, noise)
        sr += 1
        return noise

    def idle(count: int) -> None:
        nonlocal sr
        if feed.mode == "none":
            # Nothing listens to silent super-rounds when no trace is kept.
            sr += count
        else:
            for _ in range(count):
                on_wire(zeros)
        if auditor is not None:
            auditor.report.super_rounds += count

    def word_decode(noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        first = noise & wmask
        second = noise >> wshift
        valid = (noise != u64(0)) & (second == (first ^ wmask))
        payload = rev[first.astype(np.int64)].astype(np.int64)
        return valid, payload

    for plan in sched.epochs:
        ann_member = family_membership(graph, plan.announce)
        sub_member = [family_membership(graph, s.family) for s in plan.subphases]
        for j in range(len(plan.announce)):
            deg_open = np.bitwise_count(unrealized).astype(np.int64)
            announcing = ann_member[j] & (deg_open >= plan.k)
            if not announcing.any():
                idle(sched.phase_super_rounds(plan))
                responsive[:] = -1
                continue

            patterns = np.where(announcing, id_word, u64(0))
            sr_here = sr
            noise = on_wire(patterns)
            eligible = (~announcing) & (unrealized != u64(0))
            valid, payload = word_decode(noise)
            decoded = eligible & valid
            for u in np.nonzero(decoded)[0]:
                decode_log.append(
                    DecodeRecord(sr_here, ids[u], "announcing", None, int(payload[u])))
            if auditor is not None:
                auditor.on_super_round(
                    ScheduleIndex(plan.index, j + 1, None, None, "announcing",
                                  None, sr_here, 0),
                    patterns, noise, eligible, decoded, payload)
            pidx = np.where(decoded, id2idx[payload], -1)
            shift = np.clip(pidx, 0, 63).astype(np.uint64)
            has_link = ((unrealized >> shift) & one).astype(bool) & (pidx >= 0)
            responsive = np.where(has_link, pidx, -1).astype(np.int64)

            for a, sub in enumerate(plan.subphases, 1):
                memb = sub_member[a - 1]
                for b in range(len(sub.family)):
                    tgt = np.clip(responsive, 0, n - 1)
                    open_to_tgt = ((unrealized >> tgt.astype(np.uint64)) & one).astype(bool)
                    responding = (responsive >= 0) & open_to_tgt & memb[b]
                    if not responding.any():
                        idle(sched.window_super_rounds)
                        continue

                    resp_sent: list[np.ndarray] = []
                    resp_noise: list[np.ndarray] = []
                    pv: list[tuple[np.ndarray, np.ndarray]] = []
                    for part in range(sched.half_parts):
                        if part == 0:
                            word = id_word
                        elif part == 1:
                            word = id_word[tgt]
                        else:
                            word = msg_words[arange_n, tgt, part - 2]
                        patterns = np.where(responding, word, u64(0))
                        sr_here = sr
                        noise = on_wire(patterns)
                        resp_sent.append(patterns)
                        resp_noise.append(noise)
                        valid, payload = word_decode(noise)
                        decoded = announcing & valid
                        for u in np.nonzero(decoded)[0]:
                            decode_log.append(
                                DecodeRecord(sr_here, ids[u], "responding", part,
                                             int(payload[u])))
                        if auditor is not None:
                            auditor.on_super_round(
                                ScheduleIndex(plan.index, j + 1, a, b + 1,
                                              "responding", part, sr_here, 0),
                                patterns, noise, announcing, decoded, payload)
                        pv.append((valid, payload))

                    all_valid = pv[0][0] & pv[1][0]
                    for t in range(m):
                        all_valid = all_valid & pv[2 + t][0]
                    r_idx = np.where(pv[0][0], id2idx[pv[0][1]], -1)
                    open_to_r = ((unrealized >> np.clip(r_idx, 0, 63).astype(np.uint64))
                                 & one).astype(bool)
                    accept = (announcing & all_valid & (r_idx >= 0)
                              & (pv[1][1] == ids_arr) & open_to_r)
                    acc_rows = np.nonzero(accept)[0]
                    r_of = r_idx[acc_rows]
                    for t in range(m):
                        recv_pat[acc_rows, r_of, t] = resp_noise[2 + t][acc_rows]
                    recv_mask[acc_rows, r_of] = True

                    confirming = accept
                    ctgt = np.clip(r_idx, 0, n - 1)
                    conf_sent: list[np.ndarray] = []
                    conf_noise: list[np.ndarray] = []
                    qv: list[tuple[np.ndarray, np.ndarray]] = []
                    for part in range(sched.half_parts):
                        if part == 0:
                            word = id_word
                        elif part == 1:
                            word = id_word[ctgt]
                        else:
                            word = msg_words[arange_n, ctgt, part - 2]
                        patterns = np.where(confirming, word, u64(0))
                        sr_here = sr
                        noise = on_wire(patterns)
                        conf_sent.append(patterns)
                        conf_noise.append(noise)
                        valid, payload = word_decode(noise)
                        obligated = (responsive >= 0) & ~confirming
                        decoded = obligated & valid
                        for u in np.nonzero(decoded)[0]:
                            decode_log.append(
                                DecodeRecord(sr_here, ids[u], "confirming", part,
                                             int(payload[u])))
                        if auditor is not None:
                            auditor.on_super_round(
                                ScheduleIndex(plan.index, j + 1, a, b + 1,
                                              "confirming", part, sr_here, 0),
                                patterns, noise, obligated, decoded, payload)
                        qv.append((valid, payload))

                    w_all = qv[0][0] & qv[1][0]
                    for t in range(m):
                        w_all = w_all & qv[2 + t][0]
                    w_accept = ((responsive >= 0) & ~confirming & w_all
                                & (id2idx[qv[0][1]] == responsive)
                                & (qv[1][1] == ids_arr))
                    pairs_v = {(int(i), int(r_idx[i])) for i in acc_rows}
                    pairs_w = {(int(responsive[i]), int(i))
                               for i in np.nonzero(w_accept)[0]}
                    if pairs_v != pairs_w:
                        raise RuntimeError(
                            f"window closed asymmetrically: {pairs_v} vs {pairs_w}")
                    for vi, ri in sorted(pairs_v):
                        _clear_link(unrealized, vi, ri)
                        _clear_link(unrealized, ri, vi)
                        for t in range(m):
                            recv_pat[ri, vi, t] = conf_noise[2 + t][ri]
                        recv_mask[ri, vi] = True
                        realization_log.append(RealizationRecord(
                            ids[vi], ids[ri], plan.index, j + 1, a, b + 1))
                        realization_log.append(RealizationRecord(
                            ids[ri], ids[vi], plan.index, j + 1, a, b + 1))
                    if auditor is not None and pairs_v:
                        auditor.on_window(
                            ScheduleIndex(plan.index, j + 1, a, b + 1, "confirming",
                                          sched.half_parts - 1, sr - 1, 0),
                            sorted(pairs_v), resp_sent, conf_sent)

            responsive[:] = -1
        link_history.append(
            {ids[i]: int(c) for i, c in enumerate(np.bitwise_count(unrealized))})

    if sr != sched.total_super_rounds:
        raise AssertionError(f"ran {sr} super-rounds, schedule says {sched.total_super_rounds}")
    trace, dig = feed.finish()
    handshake = auditor.finish(realization_log) if auditor is not None else None
    failed = bool((unrealized != u64(0)).any())
    residual = {ids[i]: frozenset(ids[j] for j in range(n) if int(unrealized[i]) >> j & 1)
                for i in range(n) if int(unrealized[i])}

    received: dict[int, dict[int, tuple[int, ...]]] = {}
    raw_received: dict[int, dict[int, tuple[int, ...]]] = {}
    for vi in range(n):
        for ui in np.nonzero(recv_mask[vi])[0]:
            payloads = []
            for t in range(m):
                val = decode_extended(int(recv_pat[vi, ui, t]), w)
                if val is None:
                    raise RuntimeError("a committed handshake word fails to decode")
                payloads.append(val)
            bits = _words_to_bits(payloads, w, inp.width)
            raw_received.setdefault(ids[vi], {})[ids[int(ui)]] = bits
            received.setdefault(ids[vi], {})[ids[int(ui)]] = bits[:int(msg_len[ui, vi])]
    if not failed:
        want = 2 * len(graph.edges)
        got = int(recv_mask.sum())
        if got != want:
            raise RuntimeError(f"clean finish but {got} of {want} directions recorded")

    return C2BResult(received, raw_received, sched.total_rounds, sched,
                     realization_log, decode_log, link_history, handshake,
                     failed, residual, trace, dig, beeps_total)


class C2BNode(NodeProtocol):
    """One node of the handshake protocol, driven round by round.

    Knows only public parameters (through the shared schedule), its own
    neighbor set and its outgoing per-neighbor payloads; exists to
    cross-check the vectorized population runner on small instances.
    """

    def __init__(self, node_id: int, neighbors: frozenset[int] | set[int],
                 schedule: C2BSchedule,
                 outgoing: dict[int, tuple[int, ...]] | None = None):
        self.node_id = node_id
        self.schedule = schedule
        self.unrealized = set(neighbors)
        outgoing = outgoing or {}
        for peer in outgoing:
            if peer not in self.unrealized:
                raise ParameterError(f"{node_id} holds a message for non-neighbor {peer}")
        w, m = schedule.w, schedule.words_per_message
        self._id_word = encode_extended(node_id, w)
        self._peer_word = {p: encode_extended(p, w) for p in self.unrealized}
        self._out_words = {p: _message_words(outgoing.get(p, ()), w, m)
                           for p in self.unrealized}
        self._ann_mine = [[node_id in s for s in plan.announce.sets]
                          for plan in schedule.epochs]
        self._sub_mine = [[[node_id in s for s in sub.family.sets]
                           for sub in plan.subphases]
                          for plan in schedule.epochs]

        self.responsive: int | None = None
        self.announcing = False
        self._responding = False
        self._word: int | None = None
        self._triple: list[int] | None = None
        self._ctriple: list[int] | None = None
        self._confirm_target: int | None = None
        self._pending: tuple[int, ...] | None = None
        self._heard = 0
        self._resp_heard = [0] * schedule.half_parts
        self._conf_heard = [0] * schedule.half_parts
        self._idx: ScheduleIndex | None = None
        self._done = schedule.total_rounds == 0

        self.raw_received: dict[int, tuple[int, ...]] = {}
        self.realizations: list[RealizationRecord] = []

    def _start_super_round(self, idx: ScheduleIndex) -> None:
        self._heard = 0
        plan = self.schedule.epochs[idx.epoch - 1]
        if idx.role == "announcing":
            self.responsive = None
            self.announcing = (self._ann_mine[idx.epoch - 1][idx.phase - 1]
                               and len(self.unrealized) >= plan.k)
            self._word = self._id_word if self.announcing else None
            self._responding = False
            self._confirm_target = None
        elif idx.role == "responding":
            if idx.part == 0:
                self._confirm_target = None
                self._pending = None
                self._resp_heard = [0] * self.schedule.half_parts
                self._responding = (
                    self.responsive is not None
                    and self.responsive in self.unrealized
                    and self._sub_mine[idx.epoch - 1][idx.subphase - 1][idx.window - 1])
                if self._responding:
                    r = self.responsive
                    self._triple = ([self._id_word, self._peer_word[r]]
                                    + self._out_words[r])
                else:
                    self._triple = None
            self._word = self._triple[idx.part] if self._responding else None
        else:
            if idx.part == 0:
                self._conf_heard = [0] * self.schedule.half_parts
                if self._confirm_target is not None:
                    t = self._confirm_target
                    self._ctriple = ([self._id_word, self._peer_word[t]]
                                     + self._out_words[t])
                else:
                    self._ctriple = None
            self._word = None if self._ctriple is None else self._ctriple[idx.part]

    def act(self, round_index: int) -> NodeAction:
        idx = self.schedule.describe(round_index)
        self._idx = idx
        if idx.offset == 0:
            self._start_super_round(idx)
        if self._word is not None and (self._word >> idx.offset) & 1:
            return NodeAction.BEEP
        return NodeAction.LISTEN

    def observe(self, round_index: int, feedback: Feedback) -> None:
        idx = self._idx
        if feedback == Feedback.NOISE:
            self._heard |= 1 << idx.offset
        if round_index == self.schedule.total_rounds - 1:
            self._done = True
        if idx.offset != 2 * self.schedule.w - 1:
            return
        w = self.schedule.w
        last_part = idx.part == self.schedule.half_parts - 1
        if idx.role == "announcing":
            if not self.announcing and self.unrealized:
                val = decode_extended(self._heard, w)
                if val is not None and val in self.unrealized:
                    self.responsive = val
        elif idx.role == "responding":
            if self.announcing:
                self._resp_heard[idx.part] = self._heard
                if last_part:
                    self._try_accept()
        else:
            if self._confirm_target is not None:
                if last_part:
                    self._realize(self._confirm_target, self._pending, idx)
                    self._confirm_target = None
                    self._pending = None
            elif self.responsive is not None:
                self._conf_heard[idx.part] = self._heard
                if last_part:
                    self._commit_confirmed(idx)

    def _try_accept(self) -> None:
        w = self.schedule.w
        p0 = decode_extended(self._resp_heard[0], w)
        p1 = decode_extended(self._resp_heard[1], w)
        if p0 is None or p0 not in self.unrealized or p1 != self.node_id:
            return
        payloads = []
        for t in range(2, self.schedule.half_parts):
            val = decode_extended(self._resp_heard[t], w)
            if val is None:
                return
            payloads.append(val)
        self._confirm_target = p0
        self._pending = _words_to_bits(payloads, w, self.schedule.width)

    def _commit_confirmed(self, idx: ScheduleIndex) -> None:
        w = self.schedule.w
        q0 = decode_extended(self._conf_heard[0], w)
        q1 = decode_extended(self._conf_heard[1], w)
        if q0 != self.responsive or q1 != self.node_id:
            return
        payloads = []
        for t in range(2, self.schedule.half_parts):
            val = decode_extended(self._conf_heard[t], w)
            if val is None:
                return
            payloads.append(val)
        self._realize(q0, _words_to_bits(payloads, w, self.schedule.width), idx)

    def _realize(self, peer: int, bits: tuple[int, ...], idx: ScheduleIndex) -> None:
        self.unrealized.discard(peer)
        self.raw_received[peer] = bits
        self.realizations.append(RealizationRecord(
            self.node_id, peer, idx.epoch, idx.phase, idx.subphase, idx.window))

    def finished(self) -> bool:
        return self._done

    def output(self):
        return {
            "received": dict(self.raw_received),
            "realizations": tuple(self.realizations),
            "open": frozenset(self.unrealized),
        }


def check_epoch_invariant(link_history: list[dict[int, int]], delta_hat: int) -> bool:
    """Open-link counts must halve epoch over epoch and end at zero.

    link_history[i - 1] maps node ID to its open-link count after epoch i;
    the bound there is delta_hat / 2^i, which drops to at most one for the
    final epoch, forcing every link closed.
    """
    if len(link_history) != epoch_count(delta_hat):
        return False
    for i, snapshot in enumerate(link_history, 1):
        bound = delta_hat / 2 ** i
        if any(count >= bound for count in snapshot.values()):
            return False
    return True


def _trace_super_round_words(trace: Trace, schedule: C2BSchedule) -> tuple[np.ndarray, np.ndarray]:
    """(n, S) pattern and noise ints per super-round, from a recorded trace."""
    n = trace.graph.n
    sr_rounds = 2 * schedule.w
    parts_b = []
    parts_n = []
    for block in trace.blocks:
        parts_b.append(kernel.expand_patterns(block.patterns, block.nrounds)[:, 0])
        parts_n.append(kernel.expand_patterns(block.noise, block.nrounds)[:, 0])
    beep_rounds = np.concatenate(parts_b)       # (R,) node masks per round
    noise_rounds = np.concatenate(parts_n)
    shifts = np.arange(n, dtype=np.uint64)[:, None]
    bool_b = ((beep_rounds[None, :] >> shifts) & np.uint64(1)).astype(bool)
    bool_n = ((noise_rounds[None, :] >> shifts) & np.uint64(1)).astype(bool)
    S = trace.total_rounds // sr_rounds
    pow2 = (np.uint64(1) << np.arange(sr_rounds, dtype=np.uint64))
    pat = (bool_b.reshape(n, S, sr_rounds) * pow2).sum(axis=2, dtype=np.uint64)
    noi = (bool_n.reshape(n, S, sr_rounds) * pow2).sum(axis=2, dtype=np.uint64)
    return pat, noi


def check_handshake_lemmas(trace: Trace, graph: Graph, result: C2BResult,
                           inp: CongestRoundInput) -> HandshakeReport:
    """Replay a recorded run against its logs, from the wire upward.

    Reconstructs listener state (open links, responsiveness) independently
    from the trace, then holds every logged decode and realization to the
    single-beeper rules; identical-word pile-ups in the responding half
    are reported as flags, everything else lands in violations.
    """
    schedule = result.schedule
    if trace.graph is not graph and trace.graph.ids != graph.ids:
        raise ParameterError("trace and graph disagree on the node set")
    if trace.total_rounds != schedule.total_rounds:
        raise ParameterError(
            f"trace has {trace.total_rounds} rounds, schedule wants {schedule.total_rounds}")
    n, w, m = graph.n, schedule.w, schedule.words_per_message
    ids = graph.ids
    idx_of = graph.index_of
    u64 = np.uint64
    one = u64(1)
    wmask = u64((1 << w) - 1)
    rev = _reversal_table(w)
    id2idx = np.full(1 << w, -1, dtype=np.int64)
    for j, u in enumerate(ids):
        id2idx[u] = j

    id_word = np.array([encode_extended(u, w) for u in ids], dtype=np.uint64)
    msg_words = np.empty((n, n, m), dtype=np.uint64)
    msg_words[:, :] = np.array(_message_words((), w, m), dtype=np.uint64)
    for (u, v), bits in inp.messages.items():
        msg_words[idx_of[u], idx_of[v]] = np.array(
            _message_words(bits, w, m), dtype=np.uint64)

    pat, noi = _trace_super_round_words(trace, schedule)
    auditor = _Auditor(graph, schedule, id_word, msg_words)

    events: dict[int, list[DecodeRecord]] = {}
    for rec in result.decode_log:
        events.setdefault(rec.super_round, []).append(rec)

    windows: dict[tuple[int, int, int, int], list[tuple[int, int]]] = {}
    for rec in result.realization_log:
        key = (rec.epoch, rec.phase, rec.subphase, rec.window)
        pair = tuple(sorted((idx_of[rec.node], idx_of[rec.peer])))
        if pair not in windows.setdefault(key, []):
            windows[key].append(pair)
    commits: dict[int, list[tuple[tuple[int, int, int, int], int, int]]] = {}
    for key, pairs in windows.items():
        first = schedule.window_first_super_round(*key)
        last = first + schedule.window_super_rounds - 1
        for x, y in pairs:
            # the responder beeped the window's opening super-round
            if int(pat[x, first]):
                v_idx, r_idx = y, x
            else:
                v_idx, r_idx = x, y
            commits.setdefault(last, []).append((key, v_idx, r_idx))

    unrealized = graph.adj_words[:, 0].copy()
    responsive = np.full(n, -1, dtype=np.int64)
    total_s = schedule.total_super_rounds
    for s in range(total_s):
        column = pat[:, s]
        noise = noi[:, s]
        here = events.get(s, ())
        if not column.any() and not here and s not in commits:
            auditor.report.super_rounds += 1
            continue
        meta = schedule.describe(s * 2 * w)
        beeping = column != u64(0)
        decoded = np.zeros(n, dtype=bool)
        payload = np.zeros(n, dtype=np.int64)
        for rec in here:
            i = idx_of.get(rec.node)
            if i is None:
                auditor.report.violations.append(
                    f"decode log names unknown node {rec.node} at sr {s}")
                continue
            decoded[i] = True
            payload[i] = rec.payload
        if meta.role == "announcing":
            obligated = (~beeping) & (unrealized != u64(0))
        elif meta.role == "responding":
            first_sr = s - meta.part
            obligated = pat[:, first_sr - _announce_distance(schedule, meta)] != u64(0)
        else:
            obligated = (responsive >= 0) & ~_window_confirmers(
                pat, schedule, meta, s)
        auditor.on_super_round(meta, column, noise, obligated, decoded, payload)
        if meta.role == "announcing":
            first = noise & wmask
            valid = (noise != u64(0)) & ((noise >> u64(w)) == (first ^ wmask))
            heard = rev[first.astype(np.int64)].astype(np.int64)
            pidx = np.where(valid & ~beeping, id2idx[heard], -1)
            shift = np.clip(pidx, 0, 63).astype(np.uint64)
            has_link = ((unrealized >> shift) & one).astype(bool) & (pidx >= 0)
            responsive = np.where(has_link, pidx, -1).astype(np.int64)
        for key, v_idx, r_idx in commits.get(s, ()):
            if responsive[r_idx] != v_idx:
                auditor.report.violations.append(
                    f"realization {ids[v_idx]}-{ids[r_idx]} at {key} but "
                    f"{ids[r_idx]} was not responsive to {ids[v_idx]}")
            first = schedule.window_first_super_round(*key)
            hp = schedule.half_parts
            respond = [pat[:, first + p] for p in range(hp)]
            confirm = [pat[:, first + hp + p] for p in range(hp)]
            auditor.on_window(meta, [(v_idx, r_idx)], respond, confirm)
            _clear_link(unrealized, v_idx, r_idx)
            _clear_link(unrealized, r_idx, v_idx)
    return auditor.finish(result.realization_log)


def _announce_distance(schedule: C2BSchedule, meta: ScheduleIndex) -> int:
    """Super-rounds between a window's first responding super-round and
    its phase's announcing super-round."""
    plan = schedule.epochs[meta.epoch - 1]
    dist = 0
    for a, sub in enumerate(plan.subphases, 1):
        if a == meta.subphase:
            return dist + (meta.window - 1) * schedule.window_super_rounds + 1
        dist += len(sub.family) * schedule.window_super_rounds
    raise ParameterError(f"no subphase {meta.subphase} in epoch {meta.epoch}")


def _window_confirmers(pat: np.ndarray, schedule: C2BSchedule,
                       meta: ScheduleIndex, s: int) -> np.ndarray:
    first_confirm = s - meta.part
    return pat[:, first_confirm] != np.uint64(0)


def flatten_received(received: dict[int, dict[int, tuple[int, ...]]]
                     ) -> dict[tuple[int, int], tuple[int, ...]]:
    """received[v][u] tables into the directed {(u, v): bits} form."""
    out = {}
    for v, table in received.items():
        for u, bits in table.items():
            out[(u, v)] = tuple(bits)
    return out


def save_message_table(messages: dict[tuple[int, int], tuple[int, ...]],
                       path) -> None:
    """One directed message per line: sender, receiver, hex payload, bit count."""
    lines = [f"{u} {v} {bits_to_hex(bits)} {len(bits)}"
             for (u, v), bits in sorted(messages.items())]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines))
        if lines:
            fh.write("\n")


def load_message_table(path) -> dict[tuple[int, int], tuple[int, ...]]:
    out: dict[tuple[int, int], tuple[int, ...]] = {}
    with open(path, encoding="ascii") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParameterError(
                    f"{path} line {ln}: expected 'sender receiver payload bits'")
            try:
                u, v, length = int(parts[0]), int(parts[1]), int(parts[3])
                bits = hex_to_bits(parts[2], length)
            except ValueError as exc:
                raise ParameterError(f"{path} line {ln}: {exc}") from exc
            if (u, v) in out:
                raise ParameterError(f"{path} line {ln}: duplicate direction {u}->{v}")
            out[(u, v)] = bits
    return out


def save_realization_log(log: list[RealizationRecord], path) -> None:
    """One realization per line: node, peer, epoch, phase, subphase."""
    with open(path, "w", encoding="ascii") as fh:
        for rec in log:
            fh.write(f"{rec.node} {rec.peer} {rec.epoch} {rec.phase} {rec.subphase}\n")


def load_realization_log(path) -> list[tuple[int, int, int, int, int]]:
    out = []
    with open(path, encoding="ascii") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ParameterError(
                    f"{path} line {ln}: expected 'node peer epoch phase subphase'")
            try:
                out.append(tuple(int(p) for p in parts))
            except ValueError as exc:
                raise ParameterError(f"{path} line {ln}: {exc}") from exc
    return out
