import pytest

from d2color import congest as cg
from d2color import det_d2 as det
from d2color import graph as gr
from d2color import verify
from oracles import square_edge_conflicts


def sieve_smallest_prime(lo, hi):
    for x in range(lo + 1, hi):
        if x >= 2 and all(x % p for p in range(2, int(x**0.5) + 1)):
            return x
    return None


@pytest.mark.parametrize("delta,expected", [(1, 5), (2, 17), (3, 37)])
def test_find_prime_examples(delta, expected):
    # oracle: direct sieve over the open interval (4*delta^2, 8*delta^2)
    dd = delta * delta
    assert sieve_smallest_prime(4 * dd, 8 * dd) == expected
    assert det.find_prime(delta).q == expected


def test_find_prime_bounds_many():
    for delta in range(1, 40):
        q = det.find_prime(delta).q
        dd = delta * delta
        assert 4 * dd < q < 8 * dd
        assert det.is_prime(q)


def test_line_poly_footnote_example():
    # psi=7 over F_5 -> coefficients (1, 2); value at 0 is 1
    poly = det.line_poly(7, 5)
    assert (poly.a, poly.b) == (1, 2)
    assert poly.eval(0, 5) == 1


def test_distinct_lines_cross_once():
    q = 17
    for p1 in range(40):
        for p2 in range(40):
            if p1 == p2:
                continue
            a, b = det.line_poly(p1, q), det.line_poly(p2, q)
            hits = sum(a.eval(x, q) == b.eval(x, q) for x in range(q))
            assert hits <= 1


def test_linial_plan_bound():
    for n, delta in [(3, 2), (512, 2), (4096, 2), (512, 4), (4096, 16), (64, 7)]:
        plan = det.linial_plan(n, delta)
        m = n
        for d, p, m_in in plan:
            assert m_in == m
            assert p > delta * delta * d
            assert p ** (d + 1) >= m
            m = p * p
        assert m <= det.LINIAL_COLOR_FACTOR * delta**4 or m <= n


def run_det(g, seed=0, execution="serial"):
    cfg = cg.SimConfig(seed=seed, execution=execution)
    return det.d2_color_det(g, cfg)


def test_single_node():
    g = gr.Graph(((),))
    res = run_det(g)
    assert res.coloring == [0]


def test_path3_all_distinct():
    g = gr.generate("path", n=3)
    res = run_det(g)
    assert len(set(res.coloring)) == 3
    assert verify.check_d2(g, res.coloring, bound=g.delta**2 + 1).valid


def test_star_k13():
    g = gr.generate("star", n=4)
    res = run_det(g)
    assert len(set(res.coloring)) == 4
    assert max(res.coloring) <= 9
    assert verify.check_d2(g, res.coloring, bound=10).valid


@pytest.mark.parametrize(
    "kind,params",
    [
        ("path", {"n": 40}),
        ("cycle", {"n": 41}),
        ("star", {"n": 33}),
        ("petersen", {"copies": 3}),
        ("clique_chain", {"n": 24, "k": 4}),
        ("random_regular", {"n": 64, "d": 4}),
        ("gnp", {"n": 60, "p": 0.08}),
    ],
)
def test_pipeline_valid_and_conflict_free(kind, params):
    g = gr.generate(kind, seed=3, **params)
    res = run_det(g)
    rep = verify.check_d2(g, res.coloring, bound=g.delta**2 + 1)
    assert rep.valid, rep.violations[:5]
    assert square_edge_conflicts(g, res.coloring) == []
    assert max(res.coloring) < det.max_d2_degree(g) + 1


def test_blocked_phase_bound():
    for seed in range(3):
        g = gr.generate("random_regular", n=64, d=4, seed=seed)
        res = run_det(g, seed=seed)
        cap = 2 * g.delta * g.delta
        assert all(b <= cap for b in res.blocked)


def test_deterministic_across_runs_and_schedules():
    g = gr.generate("random_regular", n=64, d=4, seed=9)
    base = run_det(g, seed=1).coloring
    for _ in range(4):
        assert run_det(g, seed=1).coloring == base
    assert run_det(g, seed=2).coloring == base  # no randomness consumed at all
    assert run_det(g, seed=1, execution="threads").coloring == base


def test_zero_randomness_audit():
    g = gr.generate("gnp", n=48, p=0.1, seed=4)
    cfg = cg.SimConfig(seed=7)
    runner = cg.PhaseRunner(g, cfg)
    det.d2_color_det(g, cfg, runner=runner)
    assert runner.trace.counters.get("rng_streams_used", 0) == 0


def test_intermediate_colorings_proper():
    g = gr.generate("gnp", n=40, p=0.12, seed=2)
    cfg = cg.SimConfig()
    runner = cg.PhaseRunner(g, cfg)
    n, delta = g.n, g.delta
    bw = cfg.bandwidth_bits(n)
    for mem, v in zip(runner.memories, range(n)):
        mem["psi"] = v
    for d, p, m in det.linial_plan(n, delta):
        runner.run(det._LinialStage(d, p, m, n, delta, bw), "linial")
        psi = [runner.memories[v]["psi"] for v in range(n)]
        assert square_edge_conflicts(g, psi) == []
        assert max(psi) < p * p
    q = det.find_prime(delta).q
    runner.run(det._LocIterStage(q), "loc_iter", budget=2 * q + 2)
    colors = [runner.memories[v]["color2"] for v in range(n)]
    assert square_edge_conflicts(g, colors) == []
    assert max(colors) < q


def test_color_reduction_triangle_example():
    # triangle: square is K3, target palette {0,1,2}; color 3 recolors to 2
    g = gr.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    cfg = cg.SimConfig()
    runner = cg.PhaseRunner(g, cfg)
    for mem, c in zip(runner.memories, (3, 1, 0)):
        mem["color2"] = c
        mem["nbr_colors2"] = {}
    for v in range(3):
        for u in g.adjacency[v]:
            runner.memories[v]["nbr_colors2"][u] = (3, 1, 0)[u]
    c = det.max_d2_degree(g) + 1
    width = cg.bits_for(8)
    runner.run(det._ReduceGather(c, width, 3, g.delta, cfg.bandwidth_bits(3)), "reduce_k")
    runner.run(det._ReducePhases(c, width), "reduce_k", budget=30)
    assert [m["color2"] for m in runner.memories] == [2, 1, 0]


def test_color_reduction_already_low_noop():
    g = gr.generate("cycle", n=9)
    cfg = cg.SimConfig()
    runner = cg.PhaseRunner(g, cfg)
    start = [v % 5 for v in range(9)]
    # proper? cycle squared needs distance-2 distinct: 0..4 repeating on 9 nodes
    assert square_edge_conflicts(g, start) == []
    for v, mem in enumerate(runner.memories):
        mem["color2"] = start[v]
        mem["nbr_colors2"] = {u: start[u] for u in g.adjacency[v]}
    c = det.max_d2_degree(g) + 1
    runner.run(det._ReduceGather(c, 4, 9, g.delta, cfg.bandwidth_bits(9)), "reduce_k")
    runner.run(det._ReducePhases(c, 4), "reduce_k", budget=30)
    assert [m["color2"] for m in runner.memories] == start


def test_rounds_scale_with_delta_squared():
    # round counts should be dominated by the q = Theta(delta^2) phase count
    g_small = gr.generate("random_regular", n=64, d=4, seed=0)
    g_big = gr.generate("random_regular", n=64, d=8, seed=0)
    r_small = run_det(g_small).trace.rounds_total
    r_big = run_det(g_big).trace.rounds_total
    assert r_big > r_small
