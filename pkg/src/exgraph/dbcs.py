"""Differentiable blackbox layer around the exact subgraph solver.

The solver is piecewise constant, so its true gradient is zero almost
everywhere. The backward pass instead re-solves a weight-perturbed copy
of the saved instance and returns the scaled solution difference, which
interpolates an informative descent direction. The interpolation
strength lambda trades gradient informativeness against faithfulness:
small lambda rarely flips the optimum (gradient mostly zero), large
lambda flips it readily.

Sign convention: the public gradient is dL/dW for the weights being
maximized. Internally costs are c = -W, so a perturbation of
W' = W + lambda * dL/dy is solved as c' = c - lambda * dL/dy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import WeightMatrix
from .ilp import IlpInstance, build_subgraph_ilp, solve_exact


@dataclass(frozen=True)
class DbcsContext:
    """State saved by the forward pass for one backward invocation."""

    instance: IlpInstance
    saved_cost: np.ndarray
    saved_solution: np.ndarray


def dbcs_forward(w: WeightMatrix, max_abstract: int) -> tuple[np.ndarray, DbcsContext]:
    """Solve the subgraph ILP for ``w`` and save state for the backward pass.

    Returns the full 0/1 assignment (node variables, then edge variables
    in pair order) and the context.
    """
    inst = build_subgraph_ilp(w, max_abstract)
    sol = solve_exact(inst)
    y = sol.assignment.astype(np.float64)
    y.flags.writeable = False
    return y, DbcsContext(instance=inst, saved_cost=inst.cost, saved_solution=y)


def dbcs_backward(ctx: DbcsContext, dl_dy: np.ndarray, lam: float) -> np.ndarray:
    """Interpolated gradient of the loss with respect to the weights.

    Re-solves the instance with costs c - lambda * dl_dy (constraints
    unchanged) and returns -(y_hat - y_lambda) / lambda per variable;
    entries therefore lie in {-1/lambda, 0, +1/lambda}.
    """
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if dl_dy.shape != ctx.saved_cost.shape:
        raise ValidationError(
            f"dl_dy has shape {dl_dy.shape}, expected {ctx.saved_cost.shape}"
        )
    perturbed = ctx.instance.with_cost(ctx.saved_cost - lam * dl_dy)
    y_lam = solve_exact(perturbed).assignment.astype(np.float64)
    return -(ctx.saved_solution - y_lam) / lam
