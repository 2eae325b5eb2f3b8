"""The five communication rounds a clustering phase needs, and nothing else.

Each phase of the surrounding clustering scheme exchanges, in order:
cluster label and level with all neighbors, join proposals, a per-cluster
tally of proposals carried to the leader, accept bits, and stall bits.
Four of the five are plain local broadcasts; the tally rides the cluster
gathering machinery.  What to DO with the received values is the
caller's business entirely: this module moves bits, fills in the heard_*
fields, and leaves every decision alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .._bits import bits_to_int, int_to_bits
from ..graphs import Graph, ParameterError
from ..selectors import DEFAULT_SEED
from .broadcast import LocalBroadcastInput, full_knowledge, run_local_broadcast
from .gathering import ClusterLayout, run_cluster_gathering, sum_aggregation


@dataclass
class PhaseState:
    """Caller-supplied per-node inputs plus the received values, once filled.

    proposals, responses and stalls may omit nodes; an omitted node stays
    silent in that sub-round and simply does not appear in anyone's heard
    map.  cluster_ids and levels must cover every node.
    """

    layout: ClusterLayout
    cluster_ids: dict[int, int]
    levels: dict[int, int]
    proposals: dict[int, int]
    proposal_counts: dict[int, int]
    responses: dict[int, int]
    stalls: dict[int, int]
    heard_cluster_info: dict[int, dict[int, tuple[int, int]]] | None = None
    heard_proposals: dict[int, dict[int, int]] | None = None
    gathered_counts: dict[int, int] | None = None
    heard_responses: dict[int, dict[int, int]] | None = None
    heard_stalls: dict[int, dict[int, int]] | None = None
    rounds: int = 0


def payload_cap(n: int) -> int:
    return 4 * math.ceil(math.log2(n + 1))


def _field_width(values, what: str, cap: int) -> int:
    bad = [v for v in values if v < 0]
    if bad:
        raise ParameterError(f"negative {what} value")
    width = max(1, max((v.bit_length() for v in values), default=1))
    if width > cap:
        raise ParameterError(f"{what} needs {width} bits, above the {cap}-bit cap")
    return width


def _broadcast_values(graph: Graph, values: dict[int, int], width: int,
                      delta_hat, seed) -> tuple[dict[int, dict[int, int]], int]:
    messages = {v: int_to_bits(x, width) for v, x in values.items()}
    res = run_local_broadcast(
        graph,
        LocalBroadcastInput(messages, width, full_knowledge(graph)),
        delta_hat=delta_hat, seed=seed, record=False,
    )
    heard = {
        v: {u: bits_to_int(bits) for u, bits in res.output[v].items() if len(bits) == width}
        for v in graph.ids
    }
    return heard, res.rounds


def decomposition_primitives(
    graph: Graph,
    state: PhaseState,
    delta_hat: int | None = None,
    seed: int = DEFAULT_SEED,
) -> PhaseState:
    cap = payload_cap(graph.n)
    everyone = set(graph.ids)
    for what, table in (("cluster id", state.cluster_ids), ("level", state.levels)):
        if set(table) < everyone:
            raise ParameterError(f"{what} missing for some nodes")
    for what, table in (("response", state.responses), ("stall", state.stalls)):
        if any(b not in (0, 1) for b in table.values()):
            raise ParameterError(f"{what} bits must be 0 or 1")

    rounds = 0

    cbits = _field_width(state.cluster_ids.values(), "cluster id", cap)
    lbits = _field_width(state.levels.values(), "level", cap)
    if cbits + lbits > cap:
        raise ParameterError(f"cluster id + level needs {cbits + lbits} bits, above {cap}")
    pairs = {
        v: bits_to_int(int_to_bits(state.cluster_ids[v], cbits)
                       + int_to_bits(state.levels[v], lbits))
        for v in graph.ids
    }
    heard, spent = _broadcast_values(graph, pairs, cbits + lbits, delta_hat, seed)
    rounds += spent
    heard_info = {
        v: {
            u: (x & (1 << cbits) - 1, x >> cbits)
            for u, x in heard[v].items()
        }
        for v in graph.ids
    }

    if state.proposals:
        pbits = _field_width(state.proposals.values(), "proposal", cap)
        heard_props, spent = _broadcast_values(graph, state.proposals, pbits, delta_hat, seed)
    else:
        heard_props, spent = {v: {} for v in graph.ids}, 0
    rounds += spent

    agg = sum_aggregation(graph.n)
    counts = {v: state.proposal_counts.get(v, 0) for v in graph.ids}
    gathered = run_cluster_gathering(graph, state.layout, counts, agg,
                                     delta_hat=delta_hat, seed=seed)
    rounds += gathered.rounds

    heard_resp, spent = _broadcast_values(graph, state.responses, 1, delta_hat, seed) \
        if state.responses else ({v: {} for v in graph.ids}, 0)
    rounds += spent
    heard_stall, spent = _broadcast_values(graph, state.stalls, 1, delta_hat, seed) \
        if state.stalls else ({v: {} for v in graph.ids}, 0)
    rounds += spent

    return replace(
        state,
        heard_cluster_info=heard_info,
        heard_proposals=heard_props,
        gathered_counts=gathered.values,
        heard_responses=heard_resp,
        heard_stalls=heard_stall,
        rounds=state.rounds + rounds,
    )
