import csv

import numpy as np
import pytest

from polycert import parallel, polya, sdp
from polycert.polycore import MatrixPolynomial, count

try:
    from hypothesis import given, strategies as st
except ImportError:      # hypothesis is optional
    given = None


def _system(seed=1):
    r = np.random.default_rng(seed)
    return MatrixPolynomial.single(3, {(1, 0, 0): -np.eye(3) + 0.3 * r.normal(size=(3, 3)),
                                       (0, 1, 0): -np.eye(3) + 0.3 * r.normal(size=(3, 3)),
                                       (0, 0, 1): -2 * np.eye(3)})


def _check_partition(total, N):
    p = parallel.partition_blocks(total, N)
    assert sum(p.sizes) == total
    assert max(p.sizes) - min(p.sizes) <= 1
    assert sorted(p.sizes, reverse=True) == p.sizes
    flat = [b for r in p.ranges for b in r]
    assert flat == list(range(total))
    for b in range(0, total, max(1, total // 7)):
        assert b in p.ranges[p.owner(b)]


@pytest.mark.parametrize("total,N", [(0, 3), (5, 1), (24, 18), (7, 7), (100, 8)])
def test_partition(total, N):
    _check_partition(total, N)


if given is not None:
    @given(st.integers(0, 500), st.integers(1, 40))
    def test_partition_property(total, N):
        _check_partition(total, N)


def test_partition_example():
    assert parallel.partition(12, 12, 18).sizes == [2] * 6 + [1] * 12


def test_partition_errors():
    with pytest.raises(ValueError):
        parallel.partition_blocks(3, 0)
    with pytest.raises(ValueError):
        parallel.partition_blocks(-1, 2)


def test_determinism_and_messages():
    A = _system()
    out = []
    for N in (1, 8):
        with parallel.WorkerPool(N) as pool:
            prob, data = polya.assemble_sdp(A, 2, 2, 2, pool=pool)
            sol = sdp.solve(prob, pool=pool)
            out.append((prob, sol, data, pool.messages["setup"]))
    (p1, s1, d1, m1), (p8, s8, _, m8) = out
    np.testing.assert_array_equal(p1.C, p8.C)
    assert (p1.Bmat != p8.Bmat).nnz == 0
    np.testing.assert_array_equal(s1.y, s8.y)
    assert s1.iterations == s8.iterations

    n = 3
    assert m1 == [d1.L0 * (d1.L + d1.M * n * n)]
    assert m8 == polya.setup_messages(d1, n, 8)
    # each worker holds floor or ceil of L/N and M/N blocks, so it is within one block of the formula
    lw = parallel.partition_blocks(d1.L, 8).sizes
    mw = parallel.partition_blocks(d1.M, 8).sizes
    for got, a, b in zip(m8, lw, mw):
        assert got == d1.L0 * (a + b * n * n)
        assert a - d1.L // 8 in (0, 1) and b - d1.M // 8 in (0, 1)
    formula = parallel.setup_message_formula(d1.L0, d1.L, d1.M, n, 8)
    assert min(m8) >= formula


def test_setup_graph_chain():
    T = parallel.setup_comm_graph(2, 1, 1).adjacency.astype(int)
    np.testing.assert_array_equal(T, np.eye(4, k=1, dtype=int))


def test_setup_graph_reduced():
    l, d_p, d1 = 3, 1, 2
    full = parallel.setup_monomial_graph(l, d_p, d1)
    assert full.N == count(l, d_p + d1 + 1)
    assert parallel.setup_comm_graph(l, d_p, d1, 1).edges() == []
    g4 = parallel.setup_comm_graph(l, d_p, d1, 4)
    assert g4.N == 4 and not np.any(np.diag(g4.adjacency))


def test_solver_graph():
    g = parallel.solver_graph(4)
    assert sorted(g.edges()) == [(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0)]


def test_speedup_limit():
    assert parallel.speedup_model(10, 3, 1, 1, 1, 1, 1) == 1.0
    vals = [parallel.speedup_model(n, 10, 2, 3, 4, 4, 100) for n in (10, 100, 1000, 10 ** 5)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(100, rel=1e-3)
    with pytest.raises(ValueError):
        parallel.speedup_model(10, 3, 1, 1, 1, 1, 0)


def test_workers_from_env(monkeypatch):
    monkeypatch.delenv("POLYCERT_WORKERS", raising=False)
    assert parallel.workers_from_env(3) == 3
    monkeypatch.setenv("POLYCERT_WORKERS", "5")
    assert parallel.workers_from_env() == 5
    for bad in ("0", "two"):
        monkeypatch.setenv("POLYCERT_WORKERS", bad)
        with pytest.raises(ValueError):
            parallel.workers_from_env()


def test_pool_order_and_timing(tmp_path):
    with parallel.WorkerPool(4) as pool:
        out = pool.map_blocks(lambda r: [b * b for b in r], 10, phase="sq")
        pool.count_messages("sq", [1, 2, 3, 4])
        path = tmp_path / "t.csv"
        pool.write_timing_csv(str(path))
    assert out == [b * b for b in range(10)]
    rows = list(csv.DictReader(open(path)))
    assert [int(r["ops"]) for r in rows] == [3, 3, 2, 2]
    assert pool.messages["sq"] == [1, 2, 3, 4]
