"""Local broadcast: every node hands a short bit string to each neighbor.

The schedule walks a strong selector family bit-major: for message bit t
and family block i, exactly the block members whose bit t is 1 beep.  A
receiver credits round (t, i) to neighbor u when u is the only one of
its neighbors in block i, reading noise as 1 and silence as 0.  The
family is built for subsets one larger than the degree bound so that
every neighbor gets a block where the receiver itself stays silent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..engine import Feedback, NodeAction, NodeProtocol, Trace, trace_from_beeps
from ..graphs import Graph, ParameterError
from ..selectors import DEFAULT_SEED, SelectorFamily, get_strong_selector
from ._common import family_membership, noise_matrix, resolve_degree_bound

Bits = tuple[int, ...]


@dataclass
class LocalBroadcastInput:
    messages: dict[int, Bits]  # node id -> bit string, length <= width
    width: int
    known_neighborhoods: dict[int, frozenset[int]]

    def __post_init__(self) -> None:
        if self.width < 0:
            raise ParameterError("message width must be nonnegative")
        for u, bits in self.messages.items():
            if len(bits) > self.width:
                raise ParameterError(f"message of node {u} longer than width {self.width}")
            if any(b not in (0, 1) for b in bits):
                raise ParameterError(f"message of node {u} is not a bit string")


def broadcast_family(n: int, c: int, delta_hat: int, seed: int = DEFAULT_SEED) -> SelectorFamily:
    """The strong family shared by every node for these public parameters."""
    universe = n**c
    k = min(delta_hat + 1, universe)
    return get_strong_selector(universe, k, seed)


def local_broadcast_schedule_length(
    n: int, c: int, delta_hat: int, width: int, seed: int = DEFAULT_SEED
) -> int:
    if n < 1 or c < 1 or delta_hat < 0 or width < 0:
        raise ParameterError("schedule length needs nonnegative parameters, n and c positive")
    if width == 0:
        return 0
    return width * len(broadcast_family(n, c, delta_hat, seed))


@dataclass
class LocalBroadcastResult:
    output: dict[int, dict[int, Bits]]  # receiver -> sender -> message
    raw_output: dict[int, dict[int, Bits]]  # same, before length truncation
    rounds: int
    family: SelectorFamily | None
    trace: Trace | None
    beeps_total: int = 0


def _validate_input(graph: Graph, inp: LocalBroadcastInput) -> None:
    for u in inp.messages:
        if u not in graph.index_of:
            raise ParameterError(f"message for unknown node {u}")
    for u in graph.ids:
        claimed = inp.known_neighborhoods.get(u)
        if claimed is None or set(claimed) != set(graph.neighbors_of(u)):
            raise ParameterError(f"node {u} lacks exact neighborhood knowledge")


def full_knowledge(graph: Graph) -> dict[int, frozenset[int]]:
    return {u: frozenset(graph.neighbors_of(u)) for u in graph.ids}


def run_local_broadcast(
    graph: Graph,
    inp: LocalBroadcastInput,
    delta_hat: int | None = None,
    seed: int = DEFAULT_SEED,
    record: bool = True,
) -> LocalBroadcastResult:
    _validate_input(graph, inp)
    delta_hat = resolve_degree_bound(graph, delta_hat, graph.delta)
    width = inp.width
    if width == 0:
        empty = {u: {v: () for v in graph.neighbors_of(u)} for u in graph.ids}
        return LocalBroadcastResult(empty, empty, 0, None, Trace(graph) if record else None)

    fam = broadcast_family(graph.n, graph.c, delta_hat, seed)
    length = len(fam)
    n = graph.n
    member = family_membership(graph, fam)

    bits = np.zeros((n, width), dtype=bool)
    lengths = {}
    for u, m in inp.messages.items():
        j = graph.index_of[u]
        lengths[j] = len(m)
        if m:
            bits[j, : len(m)] = np.array(m, dtype=bool)

    beeps = np.zeros((n, width * length), dtype=bool)
    for t in range(width):
        beeps[:, t * length : (t + 1) * length] = member.T & bits[:, t][:, None]

    noise = noise_matrix(graph, beeps)
    trace = trace_from_beeps(graph, beeps, label="local-broadcast") if record else None

    # Blocks where a receiver sees exactly one neighbor.
    adj = np.zeros((n, n), dtype=bool)
    indptr, indices = graph.csr
    for v in range(n):
        adj[v, indices[indptr[v] : indptr[v + 1]]] = True
    counts = member.astype(np.uint8) @ adj.astype(np.uint8)  # (L, n)

    raw: dict[int, dict[int, list[int | None]]] = {u: {} for u in graph.ids}
    ids = graph.ids
    for i in range(length):
        present = np.nonzero(member[i])[0]
        for r in np.nonzero(counts[i] == 1)[0]:
            u_idx = next(j for j in present if adj[j, r])
            got = raw[ids[r]].setdefault(ids[u_idx], [None] * width)
            for t in range(width):
                rnd = t * length + i
                if beeps[r, rnd]:
                    continue  # own beep that round, nothing heard
                bit = int(noise[r, rnd])
                assert bit == int(beeps[u_idx, rnd])
                if got[t] is None:
                    got[t] = bit
                else:
                    assert got[t] == bit

    raw_output: dict[int, dict[int, Bits]] = {}
    output: dict[int, dict[int, Bits]] = {}
    for u in graph.ids:
        raw_output[u] = {}
        output[u] = {}
        for v in graph.neighbors_of(u):
            got = raw[u].get(v)
            if got is None or any(b is None for b in got):
                raise RuntimeError(f"channel never isolated neighbor {v} for receiver {u}")
            full = tuple(got)
            raw_output[u][v] = full
            output[u][v] = full[: lengths.get(graph.index_of[v], 0)]

    return LocalBroadcastResult(
        output, raw_output, width * length, fam, trace, int(beeps.sum())
    )


class LocalBroadcastNode(NodeProtocol):
    """Per-node machine equivalent of the vectorized runner.

    Uses only what a node legitimately knows: the public family, its own
    message, and its exact neighborhood.
    """

    def __init__(
        self,
        node_id: int,
        neighbors,
        message: Bits,
        width: int,
        fam: SelectorFamily,
    ):
        self.node_id = node_id
        self.width = width
        self.length = len(fam)
        self.bits = tuple(message) + (0,) * (width - len(message))
        nbrs = set(neighbors)
        self.mine = [node_id in f for f in fam.sets]
        self.lone: list[int | None] = []
        for f in fam.sets:
            present = [u for u in f if u in nbrs]
            self.lone.append(present[0] if len(present) == 1 else None)
        self.heard: dict[int, list[int | None]] = {}
        self._rounds_seen = 0

    def _split(self, round_index: int) -> tuple[int, int]:
        return divmod(round_index, self.length)

    def act(self, round_index: int) -> NodeAction:
        t, i = self._split(round_index)
        if self.mine[i] and self.bits[t]:
            return NodeAction.BEEP
        return NodeAction.LISTEN

    def observe(self, round_index, feedback) -> None:
        t, i = self._split(round_index)
        u = self.lone[i]
        if u is not None and feedback != Feedback.NOT_LISTENING:
            got = self.heard.setdefault(u, [None] * self.width)
            bit = 1 if feedback == Feedback.NOISE else 0
            if got[t] is None:
                got[t] = bit
        self._rounds_seen = round_index + 1

    def finished(self) -> bool:
        return self._rounds_seen >= self.width * self.length

    def output(self) -> dict[int, Bits]:
        return {u: tuple(b for b in got) for u, got in self.heard.items()}
