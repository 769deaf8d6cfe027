import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zodist.agent import QueryRecord
from zodist.errors import ConfigError, ProtocolError
from zodist.network import (
    Graph,
    TransportState,
    build_block_overlap_graph,
    check_connected,
    deliver_due,
    diameter,
    load_adjacency,
    neighbor_counts,
    save_adjacency,
    send,
)
from zodist.numerics import Purpose, RandomStream


def test_block_overlap_ring():
    g = build_block_overlap_graph(4, 2)
    for i in range(4):
        assert g.out_neighbors(i) == sorted({(i - 1) % 4, (i + 1) % 4})


def test_block_overlap_full():
    g = build_block_overlap_graph(6, 6)
    assert g.adjacency.sum() == 6 * 5


def test_block_overlap_kappa4_m8():
    g = build_block_overlap_graph(8, 4)
    # blocks {0..3}, {2..5}, {4..7}, {6,7,0,1}: agent 0 sits in the first and last
    assert g.out_neighbors(0) == [1, 2, 3, 6, 7]
    assert g.out_neighbors(1) == [0, 2, 3, 6, 7]
    # kappa + kappa/2 = 6 matches when the agent counts itself
    assert neighbor_counts(g) == {"excluding_self": [5] * 8, "including_self": [6] * 8}


@pytest.mark.parametrize("m,kappa", [(5, 4), (4, 3), (4, 6), (4, 0)])
def test_block_overlap_rejects(m, kappa):
    with pytest.raises(ConfigError):
        build_block_overlap_graph(m, kappa)


@given(st.integers(1, 6).flatmap(lambda h: st.tuples(st.just(2 * h), st.integers(2, 6).map(lambda k: k * h))))
@settings(max_examples=40, deadline=None)
def test_block_overlap_connected_symmetric_uniform(args):
    kappa, m = args
    if m < kappa:
        return
    g = build_block_overlap_graph(m, kappa)
    a = g.adjacency
    assert check_connected(g)
    assert (a == a.T).all()
    assert len(set(a.sum(axis=1))) == 1


def test_connected_examples():
    assert not check_connected(Graph(np.array([[0, 1], [0, 0]])))
    ring = np.zeros((5, 5), dtype=bool)
    for i in range(5):
        ring[i, (i + 1) % 5] = True
    assert check_connected(Graph(ring))
    assert diameter(Graph(ring)) == 4
    cliques = np.zeros((6, 6), dtype=bool)
    cliques[:3, :3] = cliques[3:, 3:] = True
    assert not check_connected(Graph(cliques))
    with pytest.raises(ConfigError):
        diameter(Graph(cliques))


def test_graph_is_read_only_without_self_loops():
    g = Graph(np.ones((3, 3)))
    assert not g.adjacency.diagonal().any()
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = False


def test_adjacency_roundtrip(tmp_path):
    g = build_block_overlap_graph(6, 2)
    save_adjacency(g, tmp_path / "g.txt")
    assert (load_adjacency(tmp_path / "g.txt").adjacency == g.adjacency).all()


@pytest.mark.parametrize("text", ["0 1\n1\n", "0 2\n1 0\n", "a b\nc d\n", ""])
def test_adjacency_load_errors(tmp_path, text):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_adjacency(p)


def rec(src, t=0):
    return (QueryRecord(src, t, 1.0),)


def test_unit_delay_delivers_next_tick():
    ts = TransportState(Graph.complete(3), d_comm=1)
    send(ts, [(0, 1, rec(0)), (2, 1, rec(2))], 5, None)
    assert deliver_due(ts, 5) == []
    got = deliver_due(ts, 6)
    assert [(m.src, m.dst, m.deliver_time) for m in got] == [(0, 1, 6), (2, 1, 6)]


def test_delays_deterministic_and_bounded():
    def delays(seed):
        ts = TransportState(Graph.complete(4), d_comm=4)
        stream = RandomStream(seed, 0, Purpose.DELAY)
        for k in range(25):
            send(ts, [(i, (i + 1) % 4, rec(i, k)) for i in range(4)], k, stream)
        return [m.deliver_time - m.send_time for m in ts.pending()]

    d = delays(3)
    assert len(d) == 100
    assert set(d) <= {1, 2, 3, 4}
    assert set(d) == {1, 2, 3, 4}
    assert d == delays(3)


def test_fixed_delay_mode():
    ts = TransportState(Graph.complete(2), d_comm=10, fixed_delay=True)
    send(ts, [(0, 1, rec(0))], 0, None)
    assert ts.pending()[0].deliver_time == 10


def test_send_non_edge():
    ts = TransportState(build_block_overlap_graph(6, 2))
    with pytest.raises(ProtocolError):
        send(ts, [(0, 3, rec(0))], 0, None)


def test_deliver_order_and_no_early_delivery():
    ts = TransportState(Graph.complete(4), d_comm=1)
    send(ts, [(3, 0, rec(3)), (1, 2, rec(1)), (1, 0, rec(1))], 0, None)
    send(ts, [(2, 0, rec(2))], 1, None)
    assert deliver_due(ts, 0) == []
    got = deliver_due(ts, 1)
    assert [(m.src, m.dst) for m in got] == [(1, 0), (1, 2), (3, 0)]
    assert ts.in_flight == 1
    assert deliver_due(TransportState(Graph.complete(2)), 0) == []


def test_missed_delivery_is_protocol_error():
    ts = TransportState(Graph.complete(2), d_comm=1)
    send(ts, [(0, 1, rec(0))], 0, None)
    with pytest.raises(ProtocolError):
        deliver_due(ts, 3)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=30), st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_conservation(pairs, d_comm):
    ts = TransportState(Graph.complete(4), d_comm=d_comm)
    stream = RandomStream(0, 0, Purpose.DELAY)
    msgs = [(s, d, rec(s)) for s, d in pairs if s != d]
    for t in range(8):
        send(ts, msgs[t::8], t, stream)
        deliver_due(ts, t)
        assert ts.delivered + ts.in_flight == ts.sent


def test_bad_dcomm():
    with pytest.raises(ConfigError):
        TransportState(Graph.complete(2), d_comm=0)
