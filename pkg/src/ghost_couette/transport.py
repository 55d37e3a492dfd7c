"""Transport coefficients from the auxiliary shear/heat-flux functions.

The first-order bulk correction is driven by two source shapes in the
invariant complement,

    B_tilde = (v_x - u_x) v_y M          (shear),
    A_tilde = ((|v-u|^2 - 5T) / 2T^2) v_y M   (heat flux),

whose Fredholm solutions B_sol = L^{-1} B_tilde and A_sol = L^{-1} A_tilde
determine the viscosity and heat conductivity.  The coefficients
returned here are the ones multiplying the velocity and temperature
gradients in the hydrodynamic compatibility equations,

    eta(T)   = -(1/T)  <B_sol, B_tilde>,
    kappa(T) = -(T^2)  <A_sol, A_tilde>,

which for the constant-rate BGK surrogate evaluate to the
pressure-linear pair eta = rho T / rate, kappa = (5/2) rho T / rate.
At T = 1 they coincide with the plain pair products.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .collision_ops import DiscreteOperator, solve_on_complement
from .velocity_space import MaxwellianState, VelocityGrid, evaluate_maxwellian

__all__ = [
    "AuxiliaryFunctions",
    "TransportTable",
    "build_auxiliary",
    "coefficients",
    "build_table",
    "bgk_pipeline_factory",
]


@dataclass
class AuxiliaryFunctions:
    """Source shapes and their Fredholm solutions, in coefficient form."""

    a_tilde: np.ndarray
    b_tilde: np.ndarray
    a_sol: np.ndarray
    b_sol: np.ndarray
    state: MaxwellianState
    residuals: dict = field(default_factory=dict)


def source_shapes(state: MaxwellianState, grid: VelocityGrid) -> tuple[np.ndarray, np.ndarray]:
    """(A_tilde, B_tilde) as coefficient vectors relative to M_state."""
    ux, uy, uz = state.u
    cx = grid.vx - ux
    cy = grid.vy - uy
    cz = grid.vz - uz
    csq = cx**2 + cy**2 + cz**2
    T = state.temp
    a_tilde = (csq - 5.0 * T) / (2.0 * T**2) * grid.vy
    b_tilde = cx * grid.vy
    return a_tilde, b_tilde


def build_auxiliary(
    op: DiscreteOperator, state: MaxwellianState, grid: VelocityGrid
) -> AuxiliaryFunctions:
    """Assemble the sources and solve L A_sol = A_tilde, L B_sol = B_tilde."""
    if op.state != state:
        raise ValueError("operator was built for a different Maxwellian state")
    a_tilde, b_tilde = source_shapes(state, grid)
    # the analytic sources live in the invariant complement; the discrete
    # quadrature leaks ~1e-6 relative into it (Gaussian tail truncation),
    # so project first and record the removed fraction
    leaks = {}
    for name, vec in (("a", a_tilde), ("b", b_tilde)):
        p = op.project(vec)
        leaks[name + "_null_leak"] = float(
            np.sqrt(op.inner(p, p) / max(op.inner(vec, vec), 1e-300))
        )
    a_tilde = a_tilde - op.project(a_tilde)
    b_tilde = b_tilde - op.project(b_tilde)
    a_sol = solve_on_complement(op, a_tilde)
    res_a = dict(op._last_solve_info)
    b_sol = solve_on_complement(op, b_tilde)
    res_b = dict(op._last_solve_info)
    return AuxiliaryFunctions(
        a_tilde, b_tilde, a_sol, b_sol, state,
        residuals={"a": res_a, "b": res_b, **leaks},
    )


def coefficients(aux: AuxiliaryFunctions, grid: VelocityGrid) -> tuple[float, float]:
    """(eta, kappa) from the auxiliary functions; both must be positive."""
    mref = evaluate_maxwellian(aux.state, grid)
    metric = grid.weights * mref
    T = aux.state.temp
    eta = -float(np.dot(metric, aux.b_sol * aux.b_tilde)) / T
    kappa = -float(np.dot(metric, aux.a_sol * aux.a_tilde)) * T**2
    if eta <= 0.0 or kappa <= 0.0:
        raise RuntimeError(
            f"nonpositive transport coefficient (eta={eta:.3e}, kappa={kappa:.3e}); "
            "operator construction is broken"
        )
    return eta, kappa


@dataclass
class TransportTable:
    """Tabulated eta(T), kappa(T) with spline interpolants.

    ``sigma1``/``sigma2`` are the higher-order stress coefficients; they
    enter only the second-order pressure recovery and default to 0.
    """

    temps: np.ndarray
    eta_values: np.ndarray
    kappa_values: np.ndarray
    eta0: float
    kappa0: float
    sigma1: float = 0.0
    sigma2: float = 0.0
    meta: dict = field(default_factory=dict)
    _eta_spline: CubicSpline = field(default=None, repr=False)
    _kappa_spline: CubicSpline = field(default=None, repr=False)

    def __post_init__(self):
        order = np.argsort(self.temps)
        self.temps = np.asarray(self.temps, dtype=float)[order]
        self.eta_values = np.asarray(self.eta_values, dtype=float)[order]
        self.kappa_values = np.asarray(self.kappa_values, dtype=float)[order]
        if np.any(self.eta_values <= 0.0) or np.any(self.kappa_values <= 0.0):
            raise ValueError("tabulated transport coefficients must be positive")
        self._eta_spline = CubicSpline(self.temps, self.eta_values)
        self._kappa_spline = CubicSpline(self.temps, self.kappa_values)

    def eta(self, T):
        return self._eta_spline(T)

    def kappa(self, T):
        return self._kappa_spline(T)

    def eta_prime(self, T, dT: float = 1.0e-4):
        """d eta / d T by centered differences on the tabulated curve."""
        return (self._eta_spline(T + dT) - self._eta_spline(T - dT)) / (2.0 * dT)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["T", "eta", "kappa"])
            for row in zip(self.temps, self.eta_values, self.kappa_values):
                writer.writerow([f"{x:.17g}" for x in row])

    def save_meta(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)


def build_table(op_factory, temps, sigma1: float = 0.0, sigma2: float = 0.0) -> TransportTable:
    """Tabulate eta(T), kappa(T) by repeating the pipeline per temperature.

    ``op_factory(T)`` must return ``(op, grid, state)`` for the shifted
    Maxwellian at temperature T; see :func:`bgk_pipeline_factory`.  The
    value at T = 1 is always computed so ``eta0``/``kappa0`` are exact
    table members.
    """
    temps = np.asarray(sorted(set(float(t) for t in temps) | {1.0}))
    if temps.min() < 0.5 or temps.max() > 2.0:
        raise ValueError("temperatures must lie within [0.5, 2.0]")
    etas, kappas = [], []
    for T in temps:
        op, grid, state = op_factory(T)
        aux = build_auxiliary(op, state, grid)
        eta, kappa = coefficients(aux, grid)
        etas.append(eta)
        kappas.append(kappa)
    i1 = int(np.argmin(np.abs(temps - 1.0)))
    monotone = bool(np.all(np.diff(etas) > 0)) and bool(np.all(np.diff(kappas) > 0))
    return TransportTable(
        temps=temps,
        eta_values=np.array(etas),
        kappa_values=np.array(kappas),
        eta0=float(etas[i1]),
        kappa0=float(kappas[i1]),
        sigma1=sigma1,
        sigma2=sigma2,
        meta={"monotone_increasing": monotone, "n_temps": len(temps)},
    )


def bgk_pipeline_factory(
    collision_rate: float,
    extent: float = 6.0,
    points_per_axis: int = 21,
    variable_nu: bool = False,
    tol_grid: float = 1.0e-8,
):
    """Per-temperature (op, grid, state) factory for the BGK surrogate.

    For T > 1 the grid extent scales with sqrt(T), so hot Maxwellians
    keep the same number of thermal speeds inside the box and the
    relative quadrature error stays constant across the table (colder
    states only gain margin).  This keeps tabulated ratios, and with
    them the pressure-linearity slope, exact to well below 1e-6.
    """
    from .collision_ops import build_bgk
    from .velocity_space import build_grid

    def factory(T: float):
        state = MaxwellianState(rho=1.0, temp=float(T))
        grid = build_grid(extent=extent * max(1.0, np.sqrt(T)),
                          points_per_axis=points_per_axis, tol_grid=tol_grid)
        op = build_bgk(grid, collision_rate, state=state, variable_nu=variable_nu)
        return op, grid, state

    return factory
