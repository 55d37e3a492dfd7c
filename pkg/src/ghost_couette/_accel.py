"""Anderson-accelerated fixed-point iteration shared by the sweep solvers."""

from __future__ import annotations

import numpy as np

__all__ = ["anderson_solve", "FixedPointError"]


class FixedPointError(RuntimeError):
    """Fixed-point iteration failed; carries ``residual_history``."""

    def __init__(self, message, history):
        super().__init__(message)
        self.residual_history = list(history)


def anderson_solve(apply_map, x0, depth=5, tol_abs=1e-12, max_iters=1000,
                   monitor=None):
    """Solve x = G(x) by Anderson mixing on the residual history.

    ``monitor(it, x, res)``, when given, decides convergence instead of
    the plain residual test (it still receives the residual).  Returns
    ``(x, iterations, history)``; raises FixedPointError on stall.
    """
    x = np.asarray(x0, dtype=float).copy()
    dx_hist, dr_hist = [], []
    gx_prev = None
    r_prev = None
    history = []
    for it in range(1, max_iters + 1):
        gx = apply_map(x)
        r = gx - x
        res = float(np.abs(r).max())
        history.append(res)
        stop = monitor(it, gx, res) if monitor is not None else res <= tol_abs
        if stop:
            return gx, it, history
        if r_prev is not None:
            dx_hist.append(gx - gx_prev)
            dr_hist.append(r - r_prev)
            if len(dx_hist) > depth:
                dx_hist.pop(0)
                dr_hist.pop(0)
        gx_prev = gx
        r_prev = r
        if dr_hist:
            R = np.stack(dr_hist, axis=1)
            gam, *_ = np.linalg.lstsq(R, r, rcond=1e-12)
            x = gx - np.stack(dx_hist, axis=1) @ gam
        else:
            x = gx
        if len(history) > 25 and history[-1] > 100.0 * min(history):
            # diverging mixture: restart the history from the last plain map
            dx_hist.clear()
            dr_hist.clear()
            x = gx_prev
    raise FixedPointError(
        f"fixed point stalled after {max_iters} iterations "
        f"(last residual {history[-1]:.3e})",
        history,
    )
