import numpy as np
import pytest

from semflow.mrf import (
    L1,
    POTTS,
    TABLE,
    PairwiseGraph,
    brute_force_map,
    dt_message_l1,
    energy,
    l1_envelope,
    maxproduct_bp,
    min_convolution_l1_bruteforce,
    trw_map,
)


def random_tree(rng, n_max=10, l_max=5, kinds=(TABLE, POTTS)):
    n = int(rng.integers(1, n_max + 1))
    L = int(rng.integers(2, l_max + 1))
    g = PairwiseGraph(rng.normal(size=(n, L)))
    for k in range(1, n):
        parent = int(rng.integers(0, k))
        kind = kinds[int(rng.integers(0, len(kinds)))]
        if kind == TABLE:
            g.add_edge(parent, k, TABLE, rng.normal(size=(L, L)))
        else:
            g.add_edge(parent, k, POTTS, float(rng.uniform(0, 2)))
    return g


def random_grid(rng, side=4, L=2):
    n = side * side
    g = PairwiseGraph(rng.normal(size=(n, L)))
    for y in range(side):
        for x in range(side):
            i = y * side + x
            if x + 1 < side:
                g.add_edge(i, i + 1, TABLE, rng.normal(size=(L, L)))
            if y + 1 < side:
                g.add_edge(i, i + side, TABLE, rng.normal(size=(L, L)))
    return g


def _slow_energy(g, x):
    total = sum(g.unary[i, x[i]] for i in range(g.n_nodes))
    ii, jj, tabs = g.edge_cost_tables()
    return total + sum(t[x[i], x[j]] for i, j, t in zip(ii, jj, tabs))


# ------------------------------------------------------------------ energy / brute force


def test_energy_without_edges(rng):
    g = PairwiseGraph(rng.normal(size=(5, 3)))
    x = rng.integers(0, 3, 5)
    assert energy(g, x) == pytest.approx(g.unary[np.arange(5), x].sum())


def test_energy_matches_resummation(rng):
    for _ in range(20):
        g = random_grid(rng, 3, 3)
        x = rng.integers(0, 3, g.n_nodes)
        assert energy(g, x) == pytest.approx(_slow_energy(g, x), abs=1e-12)


def test_energy_rejects_bad_labeling(rng):
    g = PairwiseGraph(rng.normal(size=(3, 2)))
    with pytest.raises(ValueError):
        energy(g, [0, 1])
    with pytest.raises(ValueError):
        energy(g, [0, 1, 2])


def test_graph_validation(rng):
    g = PairwiseGraph(rng.normal(size=(3, 2)))
    with pytest.raises(ValueError):
        g.add_edge(0, 0, POTTS, 1.0)
    with pytest.raises(ValueError):
        g.add_edge(0, 5, POTTS, 1.0)
    with pytest.raises(ValueError):
        g.add_edge(0, 1, POTTS, -1.0)
    with pytest.raises(ValueError):
        g.add_edge(0, 1, TABLE, np.zeros((1, 1)))
    with pytest.raises(ValueError):
        g.add_edge(0, 1, L1, 1.0)  # no label coordinates
    with pytest.raises(ValueError):
        PairwiseGraph([[0.0, np.inf]])


def test_brute_force_small_cases():
    g = PairwiseGraph([[3.0, 1.0, 2.0]])
    assert brute_force_map(g).labeling.tolist() == [1]
    # 2-node Potts chain: enumerate the four states by hand
    g = PairwiseGraph([[0.0, 1.0], [1.5, 0.0]]).add_edge(0, 1, POTTS, 2.0)
    # (0,0)=1.5 (0,1)=2 (1,0)=4.5 (1,1)=1
    res = brute_force_map(g)
    assert res.labeling.tolist() == [1, 1] and res.energy == pytest.approx(1.0)


def test_brute_force_forced_optimum(rng):
    target = rng.integers(0, 3, 6)
    un = np.full((6, 3), 1e6)
    un[np.arange(6), target] = 0
    g = PairwiseGraph(un)
    for k in range(5):
        g.add_edge(k, k + 1, TABLE, rng.random((3, 3)))
    assert brute_force_map(g).labeling.tolist() == target.tolist()


def test_brute_force_refuses_large():
    with pytest.raises(ValueError):
        brute_force_map(PairwiseGraph(np.zeros((25, 2))))


# ------------------------------------------------------------------ TRW


def test_trw_exact_on_trees(rng):
    for _ in range(200):
        g = random_tree(rng)
        ref = brute_force_map(g)
        res = trw_map(g)
        assert res.energy == pytest.approx(ref.energy, abs=1e-9)
        assert energy(g, res.labeling) == pytest.approx(res.energy, abs=1e-9)


def test_trw_zero_weights_is_argmin(rng):
    un = rng.normal(size=(8, 4))
    g = PairwiseGraph(un).add_edges(np.arange(7), np.arange(1, 8), POTTS, 0.0)
    assert trw_map(g).labeling.tolist() == un.argmin(1).tolist()


def test_trw_grid_quality_and_bound(rng):
    hits = 0
    for _ in range(200):
        g = random_grid(rng)
        ref = brute_force_map(g)
        res = trw_map(g)
        assert res.lower_bound <= ref.energy + 1e-9
        assert res.energy >= res.lower_bound - 1e-9
        hits += abs(res.energy - ref.energy) <= 1e-6
    assert hits >= 190


def test_trw_bound_monotone_and_sound(rng):
    for _ in range(50):
        g = random_grid(rng)
        res = trw_map(g, max_iters=30, tol=0.0)
        hist = np.array(res.bound_history)
        assert np.all(np.diff(hist) >= -1e-9)
        for x in rng.integers(0, 2, (100, g.n_nodes)):
            assert res.lower_bound <= energy(g, x) + 1e-9


def test_trw_ties_break_low():
    g = PairwiseGraph(np.zeros((3, 3))).add_edges([0, 1], [1, 2], POTTS, 1.0)
    assert trw_map(g).labeling.tolist() == [0, 0, 0]


def test_trw_mixed_label_counts(rng):
    g = PairwiseGraph([rng.normal(size=2), rng.normal(size=4), rng.normal(size=3)])
    g.add_edge(0, 1, TABLE, rng.normal(size=(2, 4)))
    g.add_edge(1, 2, TABLE, rng.normal(size=(4, 3)))
    assert trw_map(g).energy == pytest.approx(brute_force_map(g).energy)


# ------------------------------------------------------------------ distance transforms


def test_dt_zero_weight(rng):
    h = rng.normal(size=7)
    np.testing.assert_array_equal(dt_message_l1(h, 0.0, np.arange(7.0)), np.full(7, h.min()))


def test_dt_cone():
    h = np.full(9, 100.0)
    h[3] = 0
    np.testing.assert_array_equal(dt_message_l1(h, 1.0, np.arange(9.0)), np.abs(np.arange(9) - 3))


def test_dt_matches_quadratic_scan(rng):
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 513))
        coords = np.cumsum(rng.uniform(0.01, 3.0, n))
        h = rng.normal(scale=5, size=n)
        w = float(rng.uniform(0, 4))
        m = dt_message_l1(h, w, coords)
        worst = max(worst, np.max(np.abs(m - min_convolution_l1_bruteforce(h, w, coords))))
    assert worst <= 1e-9


def test_dt_rejects_unsorted():
    with pytest.raises(ValueError):
        dt_message_l1(np.zeros(3), 1.0, [0.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        dt_message_l1(np.zeros(3), -1.0, [0.0, 1.0, 2.0])


def test_l1_envelope_other_grid(rng):
    src = np.cumsum(rng.uniform(0.1, 2, 40))
    dst = np.sort(rng.uniform(-5, 90, 60))
    h = rng.normal(size=40)
    np.testing.assert_allclose(l1_envelope(h, 0.7, src, dst),
                               min_convolution_l1_bruteforce(h, 0.7, src, dst), atol=1e-12)


# ------------------------------------------------------------------ max-product BP


def test_bp_exact_on_chains(rng):
    for _ in range(50):
        n, L = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        coords = [np.sort(rng.uniform(0, 10, L)) + np.arange(L) * 1e-3 for _ in range(n)]
        g = PairwiseGraph(rng.normal(size=(n, L)), coords=coords)
        for k in range(n - 1):
            kind = [TABLE, L1, POTTS][k % 3]
            param = rng.normal(size=(L, L)) if kind == TABLE else float(rng.uniform(0, 1))
            g.add_edge(k, k + 1, kind, param)
        assert maxproduct_bp(g).energy == pytest.approx(brute_force_map(g).energy, abs=1e-9)


def test_bp_exact_on_trees(rng):
    for _ in range(100):
        g = random_tree(rng)
        res = maxproduct_bp(g)
        assert res.energy == pytest.approx(brute_force_map(g).energy, abs=1e-9)


def test_bp_zero_weights(rng):
    un = rng.normal(size=(6, 4))
    g = PairwiseGraph(un, coords=[np.arange(4.0)] * 6).add_edges(np.arange(5), np.arange(1, 6), L1, 0.0)
    assert maxproduct_bp(g, schedule="synchronous").labeling.tolist() == un.argmin(1).tolist()


def test_bp_separable_2d_labels_match_table(rng):
    # 3-node chain with 2D flow labels on a 3x3 window
    uu, vv = np.meshgrid(np.arange(-1, 2.0), np.arange(-1, 2.0), indexing="ij")
    lab = np.stack([uu.ravel(), vv.ravel()], 1)
    un = rng.normal(size=(3, 9))
    g1 = PairwiseGraph(un, coords=[lab] * 3).add_edges([0, 1], [1, 2], L1, [0.4, 0.9])
    tab = np.abs(lab[:, None, :] - lab[None, :, :]).sum(-1)
    g2 = PairwiseGraph(un).add_edges([0, 1], [1, 2], TABLE, np.stack([0.4 * tab, 0.9 * tab]))
    r1, r2 = maxproduct_bp(g1), maxproduct_bp(g2)
    assert r1.labeling.tolist() == r2.labeling.tolist()
    assert r1.energy == pytest.approx(r2.energy)
    assert r1.energy == pytest.approx(brute_force_map(g2).energy)


def test_bp_rejects_unknown_schedule(rng):
    with pytest.raises(ValueError):
        maxproduct_bp(PairwiseGraph(np.zeros((2, 2))), schedule="random")
