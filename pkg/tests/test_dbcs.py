import numpy as np
import pytest

from exgraph.corpus import FactKind
from exgraph.dbcs import dbcs_backward, dbcs_forward
from exgraph.errors import ValidationError
from exgraph.graph import WeightMatrix
from exgraph.ilp import solve_bruteforce, solve_counter
from conftest import random_weight_matrix


def manual_matrix(entries, kinds):
    entries = np.asarray(entries, dtype=np.float64)
    n = entries.shape[0]
    ids = ("h",) + tuple(f"f{i}" for i in range(n - 1))
    return WeightMatrix(ids, tuple(kinds), entries, np.zeros((n, n)), np.zeros(n))


class TestForward:
    def test_zero_weights_select_hypothesis_only(self):
        wm = manual_matrix(np.zeros((3, 3)), (FactKind.ABSTRACT, FactKind.GROUNDING))
        y, ctx = dbcs_forward(wm, 2)
        np.testing.assert_array_equal(y[:3], [1, 0, 0])
        assert np.all(y[3:] == 0)
        np.testing.assert_array_equal(ctx.saved_solution, y)

    def test_dominant_fact_selected_with_its_edge(self):
        wm = manual_matrix([[0, 0.9, 0.0], [0.9, 0, 0], [0.0, 0, 0]], (FactKind.ABSTRACT,) * 2)
        y, ctx = dbcs_forward(wm, 2)
        np.testing.assert_array_equal(y[:3], [1, 1, 0])
        assert y[3] == 1  # edge (h, f0)
        brute = solve_bruteforce(ctx.instance)
        np.testing.assert_array_equal(y, brute.assignment)

    def test_idempotent(self, rng):
        wm = random_weight_matrix(rng, 5)
        y1, _ = dbcs_forward(wm, 2)
        y2, _ = dbcs_forward(wm, 2)
        np.testing.assert_array_equal(y1, y2)


class TestBackward:
    def test_zero_upstream_gradient_gives_zero(self, rng):
        wm = random_weight_matrix(rng, 4)
        y, ctx = dbcs_forward(wm, 2)
        grad = dbcs_backward(ctx, np.zeros_like(y), 152.0)
        np.testing.assert_array_equal(grad, np.zeros_like(y))

    def test_tiny_perturbation_keeps_optimum(self, rng):
        # strict optimum: perturbations far below the margin cannot flip it
        wm = manual_matrix([[0, 0.9], [0.9, 0]], (FactKind.ABSTRACT,))
        y, ctx = dbcs_forward(wm, 1)
        dl_dy = np.full_like(y, 1e-9)
        grad = dbcs_backward(ctx, dl_dy, 1e-3)
        np.testing.assert_array_equal(grad, np.zeros_like(y))

    def test_lambda_must_be_positive(self, rng):
        wm = random_weight_matrix(rng, 3)
        _, ctx = dbcs_forward(wm, 2)
        with pytest.raises(ValidationError):
            dbcs_backward(ctx, np.zeros(ctx.saved_cost.shape), 0.0)
        with pytest.raises(ValidationError):
            dbcs_backward(ctx, np.zeros(ctx.saved_cost.shape), -1.0)

    def test_engineered_flip_localizes_gradient(self):
        # f0 selected (w=0.6), f1 just below selection (w=-0.05). The
        # perturbed weights W + lambda*dL/dy flip f1 on (positive dL/dy
        # on its hypothesis edge raises that weight above zero) and f0
        # off (negative dL/dy large enough to sink its edge).
        entries = np.array(
            [
                [0.0, 0.6, -0.05],
                [0.6, 0.0, 0.0],
                [-0.05, 0.0, 0.0],
            ]
        )
        wm = manual_matrix(entries, (FactKind.ABSTRACT, FactKind.ABSTRACT))
        y, ctx = dbcs_forward(wm, 2)
        np.testing.assert_array_equal(y[:3], [1, 1, 0])
        lam = 10.0
        edge_h_f0, edge_h_f1, edge_f0_f1 = 3, 4, 5  # vars: n0 n1 n2, e(0,1) e(0,2) e(1,2)
        dl_dy = np.zeros_like(y)
        dl_dy[edge_h_f1] = 0.02   # selecting this edge would raise the loss
        dl_dy[edge_h_f0] = -0.08  # keeping this edge selected lowers the loss
        grad = dbcs_backward(ctx, dl_dy, lam)
        y_lam = solve_bruteforce(ctx.instance.with_cost(ctx.saved_cost - lam * dl_dy)).assignment
        np.testing.assert_array_equal(y_lam[:3], [1, 0, 1])
        np.testing.assert_array_equal(grad, -(ctx.saved_solution - y_lam) / lam)
        # exactly the flipped node/edge pairs carry gradient, at 1/lambda
        assert grad[1] == pytest.approx(-1 / lam) and grad[edge_h_f0] == pytest.approx(-1 / lam)
        assert grad[2] == pytest.approx(1 / lam) and grad[edge_h_f1] == pytest.approx(1 / lam)
        assert grad[0] == 0.0 and grad[edge_f0_f1] == 0.0
        # sign convention: descent (-grad) raises the weight the loss
        # wants selected and lowers the weight it wants dropped.
        assert -grad[edge_h_f0] > 0
        assert -grad[edge_h_f1] < 0

    def test_definitional_identity_random_triples(self, rng):
        for _ in range(60):
            n_facts = int(rng.integers(1, 7))
            wm = random_weight_matrix(rng, n_facts)
            m = int(rng.integers(0, 3))
            y, ctx = dbcs_forward(wm, m)
            lam = float(rng.uniform(1.0, 300.0))
            dl_dy = rng.standard_normal(len(y)) * rng.choice([0.0, 0.01, 0.1, 1.0])
            grad = dbcs_backward(ctx, dl_dy, lam)
            y_lam = solve_bruteforce(ctx.instance.with_cost(ctx.saved_cost - lam * dl_dy)).assignment
            np.testing.assert_array_equal(grad, -(ctx.saved_solution - y_lam) / lam)
            allowed = {0.0, 1.0 / lam, -1.0 / lam}
            assert set(np.unique(grad)).issubset(allowed)

    def test_lambda_sweep_vanishes_at_strict_optimum(self):
        wm = manual_matrix([[0, 0.8, 0.1], [0.8, 0, 0], [0.1, 0, 0]], (FactKind.ABSTRACT,) * 2)
        y, ctx = dbcs_forward(wm, 2)
        dl_dy = np.full_like(y, 0.05)
        lams = [100.0, 10.0, 1.0, 0.1, 0.01]
        norms = []
        for lam in lams:
            grad = dbcs_backward(ctx, dl_dy, lam)
            norms.append(float(np.abs(grad).sum()))
        assert norms[-1] == 0.0
        assert norms[-2] == 0.0

    def test_exactly_two_solves_per_forward_backward_pair(self, rng):
        wm = random_weight_matrix(rng, 4)
        solve_counter.reset()
        y, ctx = dbcs_forward(wm, 2)
        assert solve_counter.count == 1
        dbcs_backward(ctx, rng.standard_normal(len(y)), 152.0)
        assert solve_counter.count == 2

    def test_shape_mismatch_rejected(self, rng):
        wm = random_weight_matrix(rng, 3)
        _, ctx = dbcs_forward(wm, 2)
        with pytest.raises(ValidationError):
            dbcs_backward(ctx, np.zeros(3), 152.0)
