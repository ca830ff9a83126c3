"""Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def levenberg_marquardt(residual, jacobian, x0, max_iter=200, xtol=1e-10, ftol=1e-15,
                        damping=1e-3) -> FitResult:
    """Minimize ||residual(x)||^2 starting at ``x0``.

    Converged means the relative step fell below ``xtol``, the cost fell
    below ``ftol`` times its starting value, or an accepted step reduced the
    cost by a relative amount under ``ftol``. Marquardt scaling by diag(J^T J)
    is used, floored so that columns with a vanishing gradient still get a
    finite step.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    cost = float(r @ r)
    start_cost = cost
    lam = damping
    for it in range(1, max_iter + 1):
        if cost <= ftol * start_cost or cost == 0.0:
            return FitResult(x, float(np.sqrt(cost)), it - 1, True)
        jac = jacobian(x)
        jtj = jac.T @ jac
        grad = jac.T @ r
        scale = np.diag(jtj).copy()
        scale = np.maximum(scale, 1e-12 * max(scale.max(), 1e-300))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = x + step
            r_trial = residual(trial)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left: a stationary point of the damped model
            return FitResult(x, float(np.sqrt(cost)), it, True)
        rel_step = np.linalg.norm(step) / (np.linalg.norm(x) + 1e-12)
        rel_gain = (cost - cost_trial) / max(cost, 1e-300)
        x, r, cost = trial, r_trial, cost_trial
        lam = max(lam / 10.0, 1e-12)
        if rel_step <= xtol or rel_gain <= ftol:
            return FitResult(x, float(np.sqrt(cost)), it, True)
    return FitResult(x, float(np.sqrt(cost)), max_iter, False)
