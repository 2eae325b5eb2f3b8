import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beepnet.c2b import (
    C2BNode,
    CongestRoundInput,
    DecodeRecord,
    RealizationRecord,
    build_schedule,
    c2b_schedule_length,
    check_epoch_invariant,
    check_handshake_lemmas,
    epoch_count,
    flatten_received,
    load_message_table,
    load_realization_log,
    run_c2b,
    save_message_table,
    save_realization_log,
    subphase_parameters,
)
from beepnet.engine import run
from beepnet.graphs import Graph, ParameterError, generate_random_graph, graph_from_edges

STAR = graph_from_edges([(1, 3), (2, 3), (3, 4), (3, 5)])


def _directed_messages(graph, width, seed):
    rng = np.random.default_rng(seed)
    out = {}
    for u, v in graph.edges:
        out[(u, v)] = tuple(int(b) for b in rng.integers(0, 2, size=width))
        out[(v, u)] = tuple(int(b) for b in rng.integers(0, 2, size=width))
    return out


def _run_machines(graph, msgs, width, delta_hat):
    sched = build_schedule(graph.n, graph.c, delta_hat, width)
    machines = {
        u: C2BNode(
            u,
            set(graph.neighbors_of(u)),
            sched,
            {v: m for (s, v), m in msgs.items() if s == u},
        )
        for u in graph.ids
    }
    res = run(graph, machines, max_rounds=sched.total_rounds)
    assert res.status == "ok"
    return res


# ---------------------------------------------------------------- schedule


def test_epoch_count_small_values():
    assert [epoch_count(d) for d in (1, 2, 3, 4, 8, 9)] == [1, 1, 2, 2, 3, 4]


def test_subphase_parameters_halve():
    assert subphase_parameters(4, 8, 1) == [(8, 4), (4, 2)]
    assert subphase_parameters(2, 8, 2) == [(4, 2)]
    assert subphase_parameters(1, 2, 1) == [(2, 1)]


def test_degree_four_gets_a_closing_subphase():
    # with a degree bound of 4 the first epoch's last regular sub-phase
    # tolerates up to 3 contenders while 4 can still be standing
    assert subphase_parameters(2, 4, 1) == [(4, 2), (2, 1)]
    assert subphase_parameters(2, 4, 2) == [(4, 2)]
    assert subphase_parameters(1, 4, 2) == [(2, 1)]


def test_describe_walks_the_whole_schedule():
    sched = build_schedule(5, 1, 4, width=3)
    announce_srs = 0
    seen_windows = set()
    prev = (0, 0)
    for r in range(sched.total_rounds):
        idx = sched.describe(r)
        assert idx.super_round == r // (2 * sched.w)
        assert idx.offset == r % (2 * sched.w)
        assert (idx.epoch, idx.phase) >= prev
        prev = (idx.epoch, idx.phase)
        if idx.offset:
            continue
        if idx.role == "announcing":
            announce_srs += 1
            assert idx.subphase is None and idx.window is None and idx.part is None
        else:
            assert idx.role in ("responding", "confirming")
            assert 0 <= idx.part < sched.half_parts
            seen_windows.add((idx.epoch, idx.phase, idx.subphase, idx.window))
    assert announce_srs == sum(len(e.announce) for e in sched.epochs)
    expected = sum(
        len(e.announce) * len(s.family) for e in sched.epochs for s in e.subphases
    )
    assert len(seen_windows) == expected


def test_window_lookup_agrees_with_describe():
    sched = build_schedule(5, 1, 4, width=3)
    for r in range(0, sched.total_rounds, 2 * sched.w):
        idx = sched.describe(r)
        if idx.role == "responding" and idx.part == 0:
            back = sched.window_first_super_round(
                idx.epoch, idx.phase, idx.subphase, idx.window
            )
            assert back == idx.super_round


def test_describe_rejects_out_of_range():
    sched = build_schedule(2, 2, 1, width=1)
    with pytest.raises(ParameterError):
        sched.describe(-1)
    with pytest.raises(ParameterError):
        sched.describe(sched.total_rounds)


@settings(max_examples=40, deadline=None)
@given(r=st.integers(0, 7799))
def test_describe_round_offset_identity(r):
    sched = build_schedule(5, 1, 4, width=3)
    idx = sched.describe(r)
    assert idx.super_round * 2 * sched.w + idx.offset == r


def test_schedule_lengths_are_stable():
    # frozen — computed once from the deterministic selector families
    assert c2b_schedule_length(2, 2, 1, width=4) == 4860
    assert c2b_schedule_length(5, 1, 4, width=3) == 7800


def test_schedule_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        build_schedule(5, 1, 0)
    with pytest.raises(ParameterError):
        build_schedule(2, 1, 2)  # needs IDs beyond the space
    with pytest.raises(ParameterError):
        build_schedule(5, 1, 4, width=-1)


def test_input_validation():
    with pytest.raises(ParameterError):
        CongestRoundInput({(1, 3): (1, 1)}, width=1)
    g = STAR
    with pytest.raises(ParameterError):
        run_c2b(g, CongestRoundInput({(1, 2): (1,)}, 1))  # not an edge
    with pytest.raises(ParameterError):
        run_c2b(g, CongestRoundInput({}, 0), delta_hat=2)  # below true degree


# ---------------------------------------------------------------- delivery


def test_single_edge_delivers_both_directions():
    g = Graph(n=2, c=2, ids=(1, 3), edges=((1, 3),))
    inp = CongestRoundInput({(1, 3): (1, 0, 1), (3, 1): (0, 1)}, width=4)
    res = run_c2b(g, inp, record="full")
    assert not res.failed
    assert res.received == {1: {3: (0, 1)}, 3: {1: (1, 0, 1)}}
    assert res.raw_received[3][1] == (1, 0, 1, 0)
    assert res.rounds == c2b_schedule_length(2, 2, 1, width=4)
    # one realization per side, same window
    assert len(res.realization_log) == 2
    a, b = res.realization_log
    assert {a.node, a.peer} == {1, 3} and a[2:] == b[2:]
    assert res.handshake.ok
    assert check_epoch_invariant(res.link_history, 1)


def test_star_delivery_and_null_payloads():
    msgs = {(3, leaf): (1, leaf & 1) for leaf in (1, 2, 4, 5)}
    msgs[(1, 3)] = (0, 1, 1)
    inp = CongestRoundInput(msgs, width=3)
    res = run_c2b(STAR, inp, delta_hat=4)
    assert not res.failed
    for leaf in (1, 2, 4, 5):
        assert res.received[leaf][3] == (1, leaf & 1)
    assert res.received[3][1] == (0, 1, 1)
    # directions without an entry still realize and carry the empty payload
    assert res.received[3][2] == ()
    assert res.raw_received[3][2] == (0, 0, 0)
    assert check_epoch_invariant(res.link_history, 4)


def test_zero_width_messages():
    g = graph_from_edges([(1, 2), (2, 3)])
    res = run_c2b(g, CongestRoundInput({}, 0), delta_hat=2)
    assert not res.failed
    assert res.received[1] == {2: ()}
    assert res.received[2] == {1: (), 3: ()}


@pytest.mark.parametrize("n,delta,seed", [(8, 2, 3), (10, 3, 9), (12, 3, 4), (16, 4, 5)])
def test_random_graphs_deliver_exactly(n, delta, seed):
    g = generate_random_graph(n, delta, seed=seed, c=1)
    msgs = _directed_messages(g, 6, seed + 100)
    res = run_c2b(g, CongestRoundInput(msgs, 6))
    assert not res.failed and not res.residual
    assert flatten_received(res.received) == msgs
    assert res.handshake.ok, res.handshake.violations[:3]
    assert check_epoch_invariant(res.link_history, g.delta)


def test_larger_degree_bound_than_true_degree():
    g = generate_random_graph(10, 3, seed=2, c=1)
    msgs = _directed_messages(g, 4, 7)
    res = run_c2b(g, CongestRoundInput(msgs, 4), delta_hat=5)
    assert not res.failed
    assert flatten_received(res.received) == msgs
    assert check_epoch_invariant(res.link_history, 5)


def test_population_node_limit():
    g = generate_random_graph(65, 2, seed=1, c=1)
    with pytest.raises(ParameterError):
        run_c2b(g, CongestRoundInput({}, 0))


# ------------------------------------------------------- machine cross-check


def test_machines_match_population_on_the_star():
    msgs = _directed_messages(STAR, 3, 17)
    pop = run_c2b(STAR, CongestRoundInput(msgs, 3), delta_hat=4, record="full")
    res = _run_machines(STAR, msgs, 3, 4)
    assert res.rounds == pop.rounds
    assert res.trace.digest() == pop.digest
    got = {u: res.outputs[u]["received"] for u in STAR.ids if res.outputs[u]["received"]}
    assert got == pop.raw_received
    mach_real = set().union(*(res.outputs[u]["realizations"] for u in STAR.ids))
    assert mach_real == set(pop.realization_log)
    assert all(not res.outputs[u]["open"] for u in STAR.ids)


def test_machines_match_population_on_a_random_graph():
    g = generate_random_graph(8, 2, seed=7, c=1)
    msgs = _directed_messages(g, 2, 23)
    pop = run_c2b(g, CongestRoundInput(msgs, 2), record="full")
    res = _run_machines(g, msgs, 2, g.delta)
    assert res.trace.digest() == pop.digest
    got = {u: res.outputs[u]["received"] for u in g.ids if res.outputs[u]["received"]}
    assert got == pop.raw_received


# ------------------------------------------------------------------ checks


def _star_run():
    msgs = _directed_messages(STAR, 3, 31)
    inp = CongestRoundInput(msgs, 3)
    return inp, run_c2b(STAR, inp, delta_hat=4, record="full")


def test_honest_trace_passes_the_audit():
    inp, res = _star_run()
    rep = check_handshake_lemmas(res.trace, STAR, res, inp)
    assert rep.ok
    assert rep.super_rounds == res.schedule.total_super_rounds
    assert rep.decode_events == len(res.decode_log)


def test_forged_decode_is_a_violation():
    inp, res = _star_run()
    bad = dataclasses.replace(res)
    bad.decode_log = res.decode_log + [DecodeRecord(0, 1, "announcing", None, 4)]
    rep = check_handshake_lemmas(res.trace, STAR, bad, inp)
    assert not rep.ok


def test_forged_realization_is_a_violation():
    inp, res = _star_run()
    bad = dataclasses.replace(res)
    bad.realization_log = res.realization_log + [
        RealizationRecord(1, 3, 1, 2, 1, 1),
        RealizationRecord(3, 1, 1, 2, 1, 1),
    ]
    rep = check_handshake_lemmas(res.trace, STAR, bad, inp)
    assert not rep.ok


def test_dropped_direction_breaks_symmetry():
    inp, res = _star_run()
    bad = dataclasses.replace(res)
    bad.realization_log = res.realization_log[:-1]
    rep = check_handshake_lemmas(res.trace, STAR, bad, inp)
    assert any("asymmetr" in v for v in rep.violations)


def test_epoch_invariant_rejects_bad_histories():
    assert not check_epoch_invariant([{1: 2, 2: 0}, {1: 0, 2: 0}], 4)  # 2 >= 4/2
    assert not check_epoch_invariant([{1: 1, 2: 0}, {1: 1, 2: 0}], 4)  # last not 0
    assert not check_epoch_invariant([{1: 0}], 4)  # wrong epoch count
    assert check_epoch_invariant([{1: 1, 2: 0}, {1: 0, 2: 0}], 4)


# -------------------------------------------------------------------- files


def test_message_table_roundtrip(tmp_path):
    msgs = _directed_messages(STAR, 5, 3)
    msgs[(2, 3)] = ()
    path = tmp_path / "messages.txt"
    save_message_table(msgs, path)
    assert load_message_table(path) == msgs


def test_received_table_matches_input(tmp_path):
    msgs = _directed_messages(STAR, 3, 41)
    res = run_c2b(STAR, CongestRoundInput(msgs, 3), delta_hat=4)
    path = tmp_path / "received.txt"
    save_message_table(flatten_received(res.received), path)
    assert load_message_table(path) == msgs


def test_message_table_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 ff\n")
    with pytest.raises(ParameterError):
        load_message_table(path)
    path.write_text("1 2 ff 8\n1 2 aa 8\n")
    with pytest.raises(ParameterError):
        load_message_table(path)
    path.write_text("1 2 zz 8\n")
    with pytest.raises(ParameterError):
        load_message_table(path)


def test_realization_log_roundtrip(tmp_path):
    _, res = _star_run()
    path = tmp_path / "real.txt"
    save_realization_log(res.realization_log, path)
    back = load_realization_log(path)
    assert back == [tuple(r)[:5] for r in res.realization_log]


# ------------------------------------------------------------- determinism


def test_repeat_runs_are_identical():
    msgs = _directed_messages(STAR, 3, 59)
    inp = CongestRoundInput(msgs, 3)
    a = run_c2b(STAR, inp, delta_hat=4)
    b = run_c2b(STAR, inp, delta_hat=4)
    assert a.digest == b.digest
    assert a.realization_log == b.realization_log
    assert a.received == b.received
    assert a.beeps_total == b.beeps_total


def test_record_modes_share_the_digest():
    g = Graph(n=2, c=2, ids=(1, 3), edges=((1, 3),))
    inp = CongestRoundInput({(1, 3): (1,)}, width=1)
    full = run_c2b(g, inp, record="full")
    digest = run_c2b(g, inp, record="digest")
    bare = run_c2b(g, inp, record="none", audit=False)
    assert full.trace.digest() == full.digest == digest.digest
    assert digest.trace is None
    assert bare.digest is None and bare.handshake is None
