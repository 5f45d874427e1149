import numpy as np
import pytest

from plqsmooth.errors import DegeneratePenaltyError, NotSpdError
from plqsmooth.model import StateSpaceModel, build_problem, objective
from plqsmooth.penalties import (
    PlqPenalty,
    block_compose,
    eval_dual_sup,
    huber,
    l1,
    l2,
)
from tests.conftest import random_model


def scalar_model(N=1, q=1.0, r=1.0, x0=0.0):
    return StateSpaceModel(
        N=N, n=1, m=1, G_seq=np.eye(1), H_seq=np.eye(1),
        Q_seq=np.eye(1) * q, R_seq=np.eye(1) * r, x0=np.array([x0]),
    )


class TestStateSpaceModel:
    def test_broadcasting_single_matrices(self, rng):
        mdl = StateSpaceModel(
            N=5, n=2, m=1, G_seq=0.5 * np.eye(2), H_seq=np.ones((1, 2)),
            Q_seq=np.eye(2), R_seq=np.eye(1), x0=np.zeros(2),
        )
        assert mdl.G_seq.shape == (5, 2, 2)
        np.testing.assert_allclose(mdl.G_seq[0], np.eye(2))  # first step pinned
        np.testing.assert_allclose(mdl.G_seq[1], 0.5 * np.eye(2))

    def test_non_spd_covariance_rejected(self):
        with pytest.raises(NotSpdError) as excinfo:
            StateSpaceModel(
                N=2, n=1, m=1, G_seq=np.eye(1), H_seq=np.eye(1),
                Q_seq=np.stack([np.eye(1), -np.eye(1)]), R_seq=np.eye(1),
                x0=np.zeros(1),
            )
        assert excinfo.value.block_index == 1

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(NotSpdError):
            StateSpaceModel(
                N=1, n=2, m=1, G_seq=np.eye(2), H_seq=np.ones((1, 2)),
                Q_seq=np.array([[1.0, 0.5], [0.0, 1.0]]), R_seq=np.eye(1),
                x0=np.zeros(2),
            )

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            StateSpaceModel(
                N=2, n=2, m=1, G_seq=np.eye(3), H_seq=np.ones((1, 2)),
                Q_seq=np.eye(2), R_seq=np.eye(1), x0=np.zeros(2),
            )


class TestBuildProblem:
    def test_single_step_quadratic(self):
        prob = build_problem(scalar_model(), l2(), l2(), np.array([[2.0]]))
        # objective is x^2/2 + (x-2)^2/2 with minimizer 1
        assert objective(prob, np.array([1.0])) == pytest.approx(1.0)
        assert objective(prob, np.array([0.0])) == pytest.approx(2.0)
        grid = np.linspace(-1, 3, 401)
        vals = [objective(prob, np.array([g])) for g in grid]
        assert grid[int(np.argmin(vals))] == pytest.approx(1.0, abs=1e-2)

    def test_measurement_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            build_problem(scalar_model(N=3), l2(), l2(), np.zeros((2, 1)))

    def test_degenerate_penalty_rejected(self):
        degenerate = PlqPenalty(
            A=np.zeros((1, 0)), a=np.zeros(0),
            M=np.zeros((1, 1)), b=np.zeros(1), B=np.ones((1, 1)),
        )
        with pytest.raises(DegeneratePenaltyError):
            build_problem(scalar_model(), l2(), degenerate, np.array([[1.0]]))

    def test_penalty_list_recycled_and_counted(self):
        mdl = scalar_model(N=4)
        prob = build_problem(mdl, [huber(1.0)], [l1(), l1(), l1(), l1()], np.zeros((4, 1)))
        assert len(prob.pen_w_steps) == 4 and len(prob.pen_v_steps) == 4
        with pytest.raises(ValueError, match="expected 1 or 4"):
            build_problem(mdl, [huber(1.0)] * 3, l2(), np.zeros((4, 1)))

    def test_scalar_penalty_expands_componentwise(self, rng):
        mdl = random_model(rng, N=3, n=2, m=1)
        prob = build_problem(mdl, huber(1.0), l2(), rng.standard_normal((3, 1)))
        assert prob.pen_w_steps[0].dim_y == 2
        assert prob.pen_w_steps[0].parts is not None

    def test_offsets_fold_initial_state_and_data(self, rng):
        mdl = random_model(rng, N=3, n=2, m=2)
        z = rng.standard_normal((3, 2))
        prob = build_problem(mdl, l2(), l2(), z)
        pw0 = prob.pen_w_steps[0]
        np.testing.assert_allclose(
            prob.b_tilde_w[: pw0.dim_u],
            pw0.b - pw0.B @ (prob.Qinv_sqrt[0] @ mdl.x0),
        )
        # later process offsets carry no shift
        np.testing.assert_allclose(prob.b_tilde_w[pw0.dim_u :],
                                   np.concatenate([p.b for p in prob.pen_w_steps[1:]]))

    def test_x_tilde_0_layout(self, rng):
        mdl = random_model(rng, N=3, n=2, m=1)
        prob = build_problem(mdl, l2(), l2(), np.zeros((3, 1)))
        np.testing.assert_allclose(prob.x_tilde_0[:2], mdl.x0)
        assert not prob.x_tilde_0[2:].any()


class TestObjective:
    def test_quadratic_case_matches_direct_sum(self, rng):
        for _ in range(5):
            mdl = random_model(rng, N=6, n=2, m=2)
            z = rng.standard_normal((6, 2))
            prob = build_problem(mdl, l2(), l2(), z)
            x = rng.standard_normal(12)
            xr = x.reshape(6, 2)
            direct = 0.0
            for k in range(6):
                w = xr[k] - (mdl.x0 if k == 0 else mdl.G_seq[k] @ xr[k - 1])
                v = mdl.H_seq[k] @ xr[k] - z[k]
                direct += 0.5 * w @ np.linalg.solve(mdl.Q_seq[k], w)
                direct += 0.5 * v @ np.linalg.solve(mdl.R_seq[k], v)
            assert objective(prob, x) == pytest.approx(direct, abs=1e-10 * (1 + direct))

    def test_zero_data_zero_state(self):
        prob = build_problem(scalar_model(N=4), l1(), huber(0.5), np.zeros((4, 1)))
        assert objective(prob, np.zeros(4)) == pytest.approx(0.0, abs=1e-12)

    def test_noiseless_trajectory_scores_zero(self, rng):
        mdl = random_model(rng, N=8, n=2, m=1)
        x_true = np.empty((8, 2))
        prev = mdl.x0
        for k in range(8):
            prev = mdl.G_seq[k] @ prev
            x_true[k] = prev
        z = np.einsum("kij,kj->ki", mdl.H_seq, x_true)
        prob = build_problem(mdl, huber(1.0), l1(), z)
        assert objective(prob, x_true.ravel()) == pytest.approx(0.0, abs=1e-12)

    def test_decomposes_as_composed_penalty_of_stacked_residual(self, rng):
        mdl = random_model(rng, N=5, n=2, m=1)
        z = rng.standard_normal((5, 1))
        prob = build_problem(mdl, huber(0.8), l1(1.2), z)
        x = rng.standard_normal(10)
        stacked = prob.pen_w(prob.process_residuals(x).ravel()) + prob.pen_v(
            prob.measurement_residuals(x).ravel()
        )
        assert objective(prob, x) == pytest.approx(stacked, abs=1e-10)
        # also against the defining supremum of the composed penalties
        dual = eval_dual_sup(prob.pen_w, prob.process_residuals(x).ravel()) + eval_dual_sup(
            prob.pen_v, prob.measurement_residuals(x).ravel()
        )
        assert objective(prob, x) == pytest.approx(dual, abs=1e-7)

    def test_robust_penalty_discounts_jumps(self):
        mdl = scalar_model(N=2)
        z = np.array([[0.0], [10.0]])
        x_jump = np.array([0.0, 10.0])
        huber_prob = build_problem(mdl, huber(1.0), l2(), z)
        quad_prob = build_problem(mdl, l2(), l2(), z)
        assert objective(huber_prob, x_jump) < objective(quad_prob, x_jump)

    def test_transition_operator_round_trip(self, rng):
        mdl = random_model(rng, N=6, n=2, m=1)
        prob = build_problem(mdl, l2(), l2(), np.zeros((6, 1)))
        G = prob.dense_G()
        x = rng.standard_normal(12)
        np.testing.assert_allclose(np.linalg.solve(G, G @ x), x, atol=1e-12)

    def test_composed_penalties_pass_finiteness(self, rng):
        mdl = random_model(rng, N=4, n=2, m=1)
        prob = build_problem(mdl, huber(1.0), l1(), rng.standard_normal((4, 1)))
        from plqsmooth.analysis import check_finite

        assert check_finite(prob.pen_w).satisfied
        assert check_finite(prob.pen_v).satisfied
