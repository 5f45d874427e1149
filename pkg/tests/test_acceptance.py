"""Acceptance suite.

One test per shipped guarantee, each pinned at its stated tolerance and
printing a PASS line on success.  The first two batteries (quadratic
equivalence and dense-reference equivalence) are shared with the certificate
and iteration-budget gates, which must hold for every converged solve.
"""

import math
import time

import numpy as np
import pytest

import plqsmooth.ip_solver as ips
from plqsmooth.analysis import check_coercivity, check_finite, normalization_constant
from plqsmooth.cli import run_bench
from plqsmooth.ip_solver import (
    SolverOptions,
    dense_kkt_jacobian,
    dense_reference_solve,
    initial_iterate,
    ip_solve,
    kkt_residual,
    newton_step,
)
from plqsmooth.linalg import BlockTridiagonal, block_tridiag_factor_solve
from plqsmooth.model import StateSpaceModel, build_problem
from plqsmooth.oracle import rts_smooth
from plqsmooth.penalties import (
    PlqPenalty,
    eval_closed_form,
    eval_dual_sup,
    huber,
    l1,
    l2,
    vapnik,
)
from plqsmooth.sim import NoiseSpec, mse, simulate
from tests.conftest import random_model, spd_matrix


def report(criterion: str, detail: str = ""):
    print(f"PASS {criterion}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="module")
def quadratic_battery():
    """25 random quadratic instances solved by both paths, with wall time."""
    rng = np.random.default_rng(101)
    records = []
    t0 = time.perf_counter()
    for i in range(25):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 3))
        mdl = random_model(rng, N=100, n=n, m=m)
        z = rng.standard_normal((100, m))
        prob = build_problem(mdl, l2(), l2(), z)
        result, iterate = ips._solve_loop(prob, SolverOptions(), dense=False)
        records.append(
            {"problem": prob, "result": result, "iterate": iterate,
             "x_ref": rts_smooth(mdl, z)}
        )
    elapsed = time.perf_counter() - t0
    return records, elapsed


@pytest.fixture(scope="module")
def robust_battery():
    """25 small instances per atom and placement, structured vs dense."""
    rng = np.random.default_rng(202)
    atoms = {"l1": l1, "huber": lambda: huber(1.0), "vapnik": lambda: vapnik(0.1)}
    records = []
    for name, factory in atoms.items():
        for placement in ("process", "measurement"):
            for i in range(25):
                N = int(rng.integers(4, 11))
                n = int(rng.integers(1, 3))
                m = int(rng.integers(1, 3))
                mdl = random_model(rng, N=N, n=n, m=m)
                z = rng.standard_normal((N, m)) * 2.0
                pen = factory()
                pen_w, pen_v = (pen, l2()) if placement == "process" else (l2(), pen)
                prob = build_problem(mdl, pen_w, pen_v, z)
                result, iterate = ips._solve_loop(prob, SolverOptions(), dense=False)
                reference = dense_reference_solve(prob)
                records.append(
                    {"atom": name, "placement": placement, "problem": prob,
                     "result": result, "iterate": iterate, "reference": reference}
                )
    return records


def test_criterion_01_quadratic_matches_classical_smoother(quadratic_battery):
    records, elapsed = quadratic_battery
    worst = 0.0
    for rec in records:
        assert rec["result"].converged
        gap = float(np.abs(rec["result"].x_hat - rec["x_ref"]).max())
        worst = max(worst, gap)
        assert gap <= 1e-6
    assert elapsed < 5.0
    report("criterion 1: quadratic solves match the classical smoother",
           f"25 instances, worst gap {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_matches_dense_reference(robust_battery):
    worst_obj, worst_state = 0.0, 0.0
    for rec in records_of(robust_battery):
        res, ref = rec["result"], rec["reference"]
        assert res.converged and ref.converged
        rel = abs(res.objective_value - ref.objective_value) / (1 + abs(ref.objective_value))
        gap = float(np.abs(res.x_hat - ref.x_hat).max())
        worst_obj, worst_state = max(worst_obj, rel), max(worst_state, gap)
        assert rel <= 1e-6
        assert gap <= 1e-5
    report("criterion 2: structured solver matches the dense reference",
           f"150 instances, worst objective gap {worst_obj:.2e}, state gap {worst_state:.2e}")


def records_of(battery):
    return battery if isinstance(battery, list) else battery[0]


def test_criterion_03_kkt_certificates(quadratic_battery, robust_battery):
    checked = 0
    for rec in records_of(quadratic_battery) + records_of(robust_battery):
        result, iterate = rec["result"], rec["iterate"]
        if not result.converged:
            continue
        it0 = ips.IpIterate(**{**iterate.__dict__, "mu": 0.0})
        residual = kkt_residual(rec["problem"], it0)
        assert np.abs(residual).max() <= 1e-8
        comp = np.concatenate([iterate.s_w * iterate.q_w, iterate.s_v * iterate.q_v])
        if comp.size:
            assert np.abs(comp).max() <= 1e-9
        checked += 1
    assert checked == 175
    report("criterion 3: first-order certificates at every converged solve",
           f"{checked} solves")


def test_criterion_04_iteration_budget(quadratic_battery, robust_battery):
    counts = [rec["result"].iterations
              for rec in records_of(quadratic_battery) + records_of(robust_battery)]
    assert max(counts) <= 30
    report("criterion 4: iteration budget", f"max {max(counts)} iterations")


def test_criterion_05_linear_complexity_in_horizon():
    t0 = time.perf_counter()
    rows = run_bench(2, 1, [500, 4000], huber(1.0), huber(1.0), seed=1, repeats=3)
    elapsed = time.perf_counter() - t0
    times = {row["N"]: row["seconds"] for row in rows}
    iters = {row["N"]: row["iterations"] for row in rows}
    assert all(row["converged"] for row in rows)
    ratio = times[4000] / times[500]
    assert ratio <= 10.0
    assert elapsed < 60.0
    report("criterion 5: wall time linear in the horizon",
           f"ratio {ratio:.2f} (iterations {iters[500]} vs {iters[4000]}), {elapsed:.1f}s")


def test_criterion_06_coercivity_checks():
    for pen in (l2(), l1(), huber(1.0), vapnik(0.5)):
        assert check_coercivity(pen).satisfied
    hinge = PlqPenalty(
        A=np.array([[1.0, -1.0]]), a=np.array([1.0, 0.0]),
        M=np.zeros((1, 1)), b=np.zeros(1), B=np.ones((1, 1)),
    )
    rep = check_coercivity(hinge)
    assert not rep.satisfied and rep.witness is not None
    assert np.abs(rep.witness).max() > 1e-9
    values = [hinge(tau * rep.witness) for tau in (1.0, 10.0, 100.0)]
    assert max(values) <= values[0] + 1e-6  # bounded along the witness ray
    report("criterion 6: coercivity decisions",
           "4 atoms coercive; one-sided loss rejected with certified ray")


def test_criterion_07_finiteness_checks():
    for pen in (l2(), l1(), huber(1.0), vapnik(0.5)):
        assert check_finite(pen).satisfied
    degenerate = PlqPenalty(
        A=np.zeros((1, 0)), a=np.zeros(0),
        M=np.zeros((1, 1)), b=np.zeros(1), B=np.ones((1, 1)),
    )
    rep = check_finite(degenerate)
    assert not rep.satisfied and rep.witness is not None
    report("criterion 7: finiteness decisions",
           "4 atoms finite-valued; flat unconstrained penalty rejected")


def test_criterion_08_evaluator_agreement_on_grid():
    grid = np.linspace(-10.0, 10.0, 1001)
    worst = 0.0
    for pen in (l2(), l1(), huber(1.0), vapnik(0.5)):
        for y in grid:
            gap = abs(eval_closed_form(pen, y) - eval_dual_sup(pen, y))
            worst = max(worst, gap)
            assert gap <= 1e-8
    report("criterion 8: closed forms match the dual supremum",
           f"1001-point grid per atom, worst gap {worst:.2e}")


def test_criterion_09_block_tridiagonal_solver():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        N = int(rng.integers(1, 9))
        n = int(rng.integers(1, 5))
        diag = np.stack([spd_matrix(rng, n, base=n + 2.0) for _ in range(N)])
        sub = rng.standard_normal((max(N - 1, 0), n, n)) * 0.3
        T = BlockTridiagonal(diag=diag, sub=sub)
        rhs = rng.standard_normal(N * n)
        gap = float(np.abs(
            block_tridiag_factor_solve(T, rhs) - np.linalg.solve(T.to_dense(), rhs)
        ).max())
        worst = max(worst, gap)
        assert gap <= 1e-10
    report("criterion 9: block-tridiagonal solver matches dense factorization",
           f"50 instances, worst gap {worst:.2e}")


def test_criterion_10_normalization_constants():
    targets = [
        (l2(), math.sqrt(2 * math.pi)),
        (l1(), 2.0),
        (vapnik(1.0), 4.0),
    ]
    for pen, expected in targets:
        value = normalization_constant(pen)
        assert value == pytest.approx(expected, rel=1e-6)
    report("criterion 10: density normalization constants",
           "sqrt(2*pi), 2, 4 reproduced to 1e-6 relative")


def test_criterion_11_outlier_robustness():
    t0 = time.perf_counter()
    wins = 0
    for seed in range(20):
        model = StateSpaceModel(
            N=300, n=1, m=1, G_seq=np.eye(1), H_seq=np.eye(1),
            Q_seq=np.eye(1) * 0.1, R_seq=np.eye(1), x0=np.zeros(1),
        )
        x_true, z = simulate(
            model,
            NoiseSpec(seed=2 * seed + 1),
            NoiseSpec(outlier_prob=0.1, outlier_scale=10.0, seed=2 * seed + 100),
        )
        quad = ip_solve(build_problem(model, l2(), l2(), z))
        robust = ip_solve(build_problem(model, l2(), l1(), z))
        assert quad.converged and robust.converged
        wins += mse(robust.x_hat, x_true) < mse(quad.x_hat, x_true)
    elapsed = time.perf_counter() - t0
    assert wins >= 18
    assert elapsed < 30.0
    report("criterion 11: absolute loss beats squared loss under outliers",
           f"{wins}/20 trials, {elapsed:.1f}s")


def test_criterion_12_newton_direction_solves_assembled_system():
    rng = np.random.default_rng(404)
    pens = [huber(1.0), l1(), vapnik(0.2), huber(0.5), l1(2.0)]
    worst = 0.0
    for i in range(10):
        mdl = random_model(rng, N=int(rng.integers(3, 7)), n=2, m=1)
        prob = build_problem(
            mdl, pens[i % len(pens)], pens[(i + 1) % len(pens)],
            rng.standard_normal((mdl.N, 1)),
        )
        it = initial_iterate(prob)
        it.x = rng.standard_normal(it.x.size) * 0.5
        F = kkt_residual(prob, it)
        J = dense_kkt_jacobian(prob, it)
        d = newton_step(prob, it)
        dvec = np.concatenate(
            [d["s_w"], d["s_v"], d["q_w"], d["q_v"], d["u_w"], d["u_v"], d["x"]]
        )
        rel = np.linalg.norm(J @ dvec + F) / np.linalg.norm(F)
        worst = max(worst, rel)
        assert rel <= 1e-8
    report("criterion 12: structured Newton direction solves the assembled system",
           f"10 instances, worst relative error {worst:.2e}")
