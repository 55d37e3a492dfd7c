"""Stationary 1-D ghost-effect hydrodynamics between the two walls.

The tangential velocity U and temperature correction tau solve the
coupled two-point boundary-value system on y in [-pi, pi]

    d/dy ( eta(1+delta tau) dU/dy ) = 0,
    d/dy ( kappa(1+delta tau) d tau/dy ) + delta eta (dU/dy)^2 = 0,

with U(+-pi) = U_+-, tau(+-pi) = 0, u_y identically zero, and the
density correction r closed by the constancy of (1+delta r)(1+delta tau)
with unit wall value, i.e. r = -tau/(1+delta tau) exactly.  The
second-order pressure follows by integrating

    dP2/dy = (1/C^2) rho U^2 + (delta/P) d/dy( sigma1 (d tau/dy)^2 ),

gauged to P2(-pi) = 0; the (1/C^2) rho U^2 source is the curvature
term that survives the planar limit.

Discretization is second-order conservative finite differences on a
uniform grid with half-node fluxes and tridiagonal solves; the coupled
system is iterated to a fixed point with optional under-relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .transport import TransportTable
from .velocity_space import (
    MaxwellianState,
    VelocityGrid,
    WeightedNorm,
    evaluate_maxwellian,
    weighted_norm,
)

__all__ = [
    "HydroParams",
    "HydroSolution",
    "DeviationReport",
    "laminar",
    "solve_coupled",
    "recover_pressure",
    "compare_to_limit",
]

TOL_HYDRO = 1.0e-10


@dataclass(frozen=True)
class HydroParams:
    delta: float
    C: float
    U_minus: float
    U_plus: float
    transport: TransportTable
    ny: int = 201
    tol: float = TOL_HYDRO
    max_iters: int = 200

    def __post_init__(self):
        if not self.C > 0.0:
            raise ValueError(f"curvature constant C must be positive, got {self.C}")
        if self.ny < 33:
            raise ValueError(f"spatial resolution ny must be >= 33, got {self.ny}")
        if not 0.0 <= self.delta <= 0.5:
            raise ValueError(f"delta must lie in [0, 0.5], got {self.delta}")

    @property
    def beta(self) -> float:
        return (self.U_plus - self.U_minus) / (2.0 * np.pi)


@dataclass
class HydroSolution:
    y: np.ndarray
    U: np.ndarray
    U_tilde: np.ndarray
    tau: np.ndarray
    r: np.ndarray
    P2: np.ndarray
    beta: float
    iterations: int
    residual: float
    params: HydroParams = field(repr=False, default=None)

    @property
    def u_y(self) -> np.ndarray:
        # no radial flow in the stationary 1-D problem; stored so that
        # regressions catch accidental coupling
        return np.zeros_like(self.y)

    def boussinesq_defect(self) -> float:
        d = self.params.delta
        prod = (1.0 + d * self.r) * (1.0 + d * self.tau)
        return float(np.abs(prod - prod[0]).max())


def _flux_solve(coef_half: np.ndarray, rhs: np.ndarray, h: float) -> np.ndarray:
    """Solve d/dy(coef d u/dy) = rhs with u = 0 at both walls.

    ``coef_half`` holds the ny-1 half-node coefficients; ``rhs`` the
    interior source values (ny-2,).  Returns the full ny-vector.
    """
    n = rhs.size
    lower = coef_half[:-1].copy()
    upper = coef_half[1:].copy()
    diag = -(coef_half[:-1] + coef_half[1:])
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    sol = solve_banded((1, 1), ab, rhs * h * h)
    return np.concatenate([[0.0], sol, [0.0]])


def laminar(params: HydroParams) -> HydroSolution:
    """Zero-shear-heating baseline: linear U, flat temperature."""
    y = np.linspace(-np.pi, np.pi, params.ny)
    U = params.U_minus + params.beta * (y + np.pi)
    zeros = np.zeros_like(y)
    sol = HydroSolution(y, U, zeros.copy(), zeros.copy(), zeros.copy(),
                        zeros.copy(), params.beta, 0, 0.0, params)
    sol.P2 = recover_pressure(sol, params)
    return sol


def _interior_residual(params, y, U_tilde, tau):
    """Discrete residuals of both equations at the current fields."""
    h = y[1] - y[0]
    beta = params.beta
    delta = params.delta
    T_half = 1.0 + delta * 0.5 * (tau[:-1] + tau[1:])
    eta_half = params.transport.eta(T_half)
    kappa_half = params.transport.kappa(T_half)
    flux_u = eta_half * (np.diff(U_tilde) / h + beta)
    res_u = np.diff(flux_u) / h
    grad_total = np.diff(U_tilde) / h + beta
    heating = delta * eta_half * grad_total**2
    flux_t = kappa_half * np.diff(tau) / h
    res_t = np.diff(flux_t) / h + 0.5 * (heating[:-1] + heating[1:])
    return res_u, res_t


def solve_coupled(params: HydroParams) -> HydroSolution:
    """Fixed-point solve of the coupled (U_tilde, tau) system.

    Each pass freezes the coefficients at the current temperature,
    solves the linear momentum equation for U_tilde, then the heat
    equation (with the fresh shear) for tau.  Under-relaxation (0.8)
    engages when the residual stalls.  Convergence failure raises with
    the residual history attached.
    """
    if params.delta > 0.3:
        import warnings

        warnings.warn(
            f"delta = {params.delta} is beyond the contraction regime (> 0.3); "
            "the iteration may not converge",
            stacklevel=2,
        )
    y = np.linspace(-np.pi, np.pi, params.ny)
    h = y[1] - y[0]
    beta = params.beta
    delta = params.delta
    table = params.transport

    U_tilde = np.zeros_like(y)
    tau = np.zeros_like(y)
    history = []
    relax = 1.0
    for it in range(1, params.max_iters + 1):
        T_half = 1.0 + delta * 0.5 * (tau[:-1] + tau[1:])
        eta_half = table.eta(T_half)
        kappa_half = table.kappa(T_half)

        # momentum: flux form d/dy(eta (dU_tilde/dy + beta)) = 0
        rhs_u = -beta * np.diff(eta_half)  # moves the beta part of the flux
        U_new = _flux_solve(eta_half, rhs_u / h, h)

        grad_total = np.diff(U_new) / h + beta
        heating = delta * eta_half * grad_total**2
        rhs_t = -0.5 * (heating[:-1] + heating[1:])
        tau_new = _flux_solve(kappa_half, rhs_t, h)

        U_tilde = relax * U_new + (1.0 - relax) * U_tilde
        tau = relax * tau_new + (1.0 - relax) * tau

        res_u, res_t = _interior_residual(params, y, U_tilde, tau)
        scale = max(1.0, abs(beta))
        residual = max(np.abs(res_u).max(), np.abs(res_t).max()) / scale
        history.append(residual)
        if residual <= params.tol:
            break
        if len(history) > 3 and history[-1] > 0.99 * history[-3]:
            relax = 0.8
    else:
        err = RuntimeError(
            f"hydro fixed point did not reach tol={params.tol:.1e} in "
            f"{params.max_iters} iterations (last residual {history[-1]:.3e})"
        )
        err.residual_history = history
        raise err

    r = -tau / (1.0 + delta * tau)
    sol = HydroSolution(y, params.U_minus + beta * (y + np.pi) + U_tilde,
                        U_tilde, tau, r, np.zeros_like(y), beta, it,
                        history[-1], params)
    sol.P2 = recover_pressure(sol, params)
    return sol


def recover_pressure(sol: HydroSolution, params: HydroParams) -> np.ndarray:
    """Second-order pressure, gauged to P2(-pi) = 0.

    Integrates the curvature source (1/C^2) rho U^2 by cumulative
    trapezoid; the sigma1 stress term integrates exactly since it is a
    derivative.  The leading pressure rho T equals 1 exactly under the
    adopted density closure, so the 1/P prefactor is 1.
    """
    y = sol.y
    rho = 1.0 + params.delta * sol.r
    source = rho * sol.U**2 / params.C**2
    h = y[1] - y[0]
    P2 = np.concatenate([[0.0], np.cumsum(0.5 * (source[:-1] + source[1:])) * h])
    sigma1 = params.transport.sigma1
    if sigma1 != 0.0 and params.delta > 0.0:
        grad_tau = np.gradient(sol.tau, y, edge_order=2)
        stress = sigma1 * grad_tau**2
        P2 = P2 + params.delta * (stress - stress[0])
    return P2


@dataclass
class DeviationReport:
    """Distances between a finite-delta solution and the limit fields."""

    sup: dict
    l2: dict
    state_sup: float
    maxwellian_l2: dict = field(default_factory=dict)
    maxwellian_sup: dict = field(default_factory=dict)


def compare_to_limit(
    sol_delta: HydroSolution,
    sol_zero: HydroSolution,
    grid: VelocityGrid | None = None,
) -> DeviationReport:
    """Deviation of a delta > 0 solution from the laminar limit.

    Reports per-field sup and L2 distances, the combined hydro-state
    sup-distance max(|U - U_bar|, |tau|, |r|), and (when a velocity grid
    is supplied) the Maxwellian-level distances

        || (M_delta - M_delta0) / M ||_{q,2}   (expected O(delta^2)),
        || (M_delta0 - M) / M ||_{q,2}         (expected O(delta)),

    where M_delta carries the solved fields, M_delta0 the laminar drift
    only, and M is the global Maxwellian.
    """
    if sol_delta.y.shape != sol_zero.y.shape or not np.allclose(sol_delta.y, sol_zero.y):
        raise ValueError("solutions must share the spatial grid")
    if not np.isclose(sol_delta.beta, sol_zero.beta):
        raise ValueError("solutions must share the wall data")
    y = sol_delta.y
    h = y[1] - y[0]
    fields = {
        "U": sol_delta.U - sol_zero.U,
        "tau": sol_delta.tau - sol_zero.tau,
        "r": sol_delta.r - sol_zero.r,
    }
    sup = {k: float(np.abs(v).max()) for k, v in fields.items()}
    l2 = {k: float(np.sqrt(np.trapezoid(v**2, dx=h))) for k, v in fields.items()}
    report = DeviationReport(sup=sup, l2=l2, state_sup=max(sup.values()))

    if grid is not None:
        delta = sol_delta.params.delta
        mstd = grid.standard_maxwellian()
        rows_delta, rows_zero = [], []
        for i in range(y.size):
            m_delta = evaluate_maxwellian(
                MaxwellianState(
                    rho=1.0 + delta * sol_delta.r[i],
                    temp=1.0 + delta * sol_delta.tau[i],
                    u=(delta * sol_delta.U[i], 0.0, 0.0),
                ),
                grid,
            )
            m_zero = evaluate_maxwellian(
                MaxwellianState(u=(delta * sol_zero.U[i], 0.0, 0.0)), grid
            )
            rows_delta.append((m_delta - m_zero) / mstd)
            rows_zero.append((m_zero - mstd) / mstd)
        rows_delta = np.array(rows_delta)
        rows_zero = np.array(rows_zero)
        for q, tag in ((2, "2,2"), (np.inf, "inf,2")):
            norm = WeightedNorm(0, q)
            report.maxwellian_l2.setdefault(tag, {})
            report.maxwellian_l2[tag] = {
                "delta_vs_limit": weighted_norm(rows_delta, norm, grid, y_grid=y),
                "limit_vs_global": weighted_norm(rows_zero, norm, grid, y_grid=y),
            }
    return report
