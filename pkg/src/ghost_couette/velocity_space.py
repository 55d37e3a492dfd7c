"""Discrete velocity space: grids, Maxwellians, moments and weighted norms.

Every kinetic object in this package lives on a truncated 3-D velocity
lattice.  The default lattice is a uniform tensor grid on
[-v_max, v_max]^3 with trapezoid quadrature weights; a Gauss-Hermite
variant is available for quadrature studies.  Uniform grids are the
default because they are exactly symmetric under each axis reflection
v_i -> -v_i, which the wall-reflection closure and the conservative
force discretization rely on.

Distribution functions are handled in two equivalent forms:

* density form F(v), the plain number density in velocity space;
* coefficient form f = F / M_state relative to a reference Maxwellian,
  with the weighted inner product <f, g> = sum_i w_i M_state(v_i) f_i g_i.

All quantities are dimensionless (reference density and temperature 1,
velocities in thermal-speed units).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "VelocityGrid",
    "MaxwellianState",
    "WeightedNorm",
    "build_grid",
    "evaluate_maxwellian",
    "collision_invariants",
    "shifted_invariants",
    "moments",
    "wall_maxwellian",
    "weighted_norm",
    "save_field_csv",
    "load_field_csv",
    "save_field_binary",
    "load_field_binary",
]


@dataclass(frozen=True)
class MaxwellianState:
    """Density, temperature and mean velocity of a local Maxwellian."""

    rho: float = 1.0
    temp: float = 1.0
    u: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ValueError(f"Maxwellian density must be positive, got rho={self.rho}")
        if not self.temp > 0.0:
            raise ValueError(f"Maxwellian temperature must be positive, got temp={self.temp}")
        object.__setattr__(self, "u", tuple(float(c) for c in self.u))
        if len(self.u) != 3:
            raise ValueError("mean velocity must be a 3-vector")


@dataclass(frozen=True)
class VelocityGrid:
    """Truncated velocity lattice with quadrature weights.

    ``nodes`` holds the n = points_per_axis**3 lattice points in C order
    over (ix, iy, iz); ``weights`` the matching positive quadrature
    weights.  ``mass_error`` records the standard-Maxwellian quadrature
    defect against the truncated-box reference integral (per-axis
    adaptive quadrature of the Gaussian); ``tail_deficit`` the analytic
    mass beyond the cutoff, which no quadrature rule on the box can
    recover.
    """

    extent: float
    points_per_axis: int
    quadrature: str
    axis: np.ndarray
    axis_weights: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    mass_error: float
    tail_deficit: float
    tol_grid: float

    # velocity components as flat views, cached for the hot paths
    vx: np.ndarray = field(repr=False, default=None)
    vy: np.ndarray = field(repr=False, default=None)
    vz: np.ndarray = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        p = self.points_per_axis
        return (p, p, p)

    @property
    def speed(self) -> np.ndarray:
        return np.sqrt(self.vx**2 + self.vy**2 + self.vz**2)

    def standard_maxwellian(self) -> np.ndarray:
        return evaluate_maxwellian(MaxwellianState(), self)

    def reflect_index(self, axis: int) -> np.ndarray:
        """Node permutation realizing v_axis -> -v_axis.

        Exact on symmetric grids: node sets map onto themselves and the
        weights are preserved.
        """
        p = self.points_per_axis
        idx = np.arange(p**3).reshape(p, p, p)
        return np.flip(idx, axis=axis).ravel()

    def half_space(self, axis: int = 1, positive: bool = True) -> np.ndarray:
        """Boolean mask of nodes with v_axis > 0 (or < 0)."""
        comp = (self.vx, self.vy, self.vz)[axis]
        return comp > 0 if positive else comp < 0

    def inner(self, f: np.ndarray, g: np.ndarray, mref: np.ndarray) -> float:
        """Weighted inner product of coefficient vectors."""
        return float(np.dot(self.weights * mref, f * g))


def _uniform_axis(extent: float, points: int) -> tuple[np.ndarray, np.ndarray]:
    axis = np.linspace(-extent, extent, points)
    h = axis[1] - axis[0]
    w = np.full(points, h)
    w[0] = w[-1] = h / 2.0
    return axis, w


def _gauss_hermite_axis(extent: float, points: int) -> tuple[np.ndarray, np.ndarray]:
    # Physicists' Gauss-Hermite, rescaled so the weight absorbs exp(-v^2/2);
    # the returned weights integrate plain dv against smooth integrands.
    x, w = np.polynomial.hermite.hermgauss(points)
    axis = x * np.sqrt(2.0)
    weights = w * np.sqrt(2.0) * np.exp(x**2)
    del extent  # node span is set by the rule itself
    return axis, weights


def build_grid(
    extent: float = 6.0,
    points_per_axis: int = 21,
    quadrature: str = "trapezoid",
    tol_grid: float = 1.0e-8,
) -> VelocityGrid:
    """Build a reflection-symmetric tensor velocity grid.

    ``points_per_axis`` must be odd (>= 9) so that every axis contains 0
    and the reflection v_i -> -v_i is an exact node permutation.  The
    recorded Maxwellian mass error must come out below ``tol_grid``;
    coarse grids need a correspondingly looser tolerance passed in.
    """
    if not extent > 0.0:
        raise ValueError(f"grid extent must be positive, got {extent}")
    if points_per_axis % 2 == 0:
        raise ValueError(
            f"points_per_axis must be odd to keep reflection symmetry, got {points_per_axis}"
        )
    if points_per_axis < 9:
        raise ValueError(f"points_per_axis must be >= 9, got {points_per_axis}")
    if quadrature == "trapezoid":
        axis, axis_w = _uniform_axis(extent, points_per_axis)
    elif quadrature == "gauss_hermite":
        axis, axis_w = _gauss_hermite_axis(extent, points_per_axis)
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")

    vx, vy, vz = np.meshgrid(axis, axis, axis, indexing="ij")
    nodes = np.column_stack([vx.ravel(), vy.ravel(), vz.ravel()])
    wx, wy, wz = np.meshgrid(axis_w, axis_w, axis_w, indexing="ij")
    weights = (wx * wy * wz).ravel()

    grid = VelocityGrid(
        extent=float(extent),
        points_per_axis=int(points_per_axis),
        quadrature=quadrature,
        axis=axis,
        axis_weights=axis_w,
        nodes=nodes,
        weights=weights,
        mass_error=0.0,
        tail_deficit=0.0,
        tol_grid=float(tol_grid),
        vx=nodes[:, 0].copy(),
        vy=nodes[:, 1].copy(),
        vz=nodes[:, 2].copy(),
    )
    mass = float(np.dot(weights, grid.standard_maxwellian()))
    if quadrature == "trapezoid":
        box_mass = erf(extent / np.sqrt(2.0)) ** 3
    else:
        box_mass = 1.0  # Gauss-Hermite integrates over the whole line
    object.__setattr__(grid, "mass_error", abs(mass - box_mass))
    object.__setattr__(grid, "tail_deficit", abs(1.0 - box_mass))
    if grid.mass_error > tol_grid:
        raise ValueError(
            f"Maxwellian mass error {grid.mass_error:.3e} exceeds tol_grid={tol_grid:.1e}; "
            "increase extent/points or pass a looser tolerance for coarse grids"
        )
    for arr in (grid.axis, grid.axis_weights, grid.nodes, grid.weights,
                grid.vx, grid.vy, grid.vz):
        arr.setflags(write=False)
    return grid


def evaluate_maxwellian(state: MaxwellianState, grid: VelocityGrid) -> np.ndarray:
    """Pointwise values of M(rho, T, u; v) on the grid nodes."""
    ux, uy, uz = state.u
    arg = (grid.vx - ux) ** 2 + (grid.vy - uy) ** 2 + (grid.vz - uz) ** 2
    return state.rho * (2.0 * np.pi * state.temp) ** -1.5 * np.exp(-arg / (2.0 * state.temp))


def collision_invariants(grid: VelocityGrid) -> np.ndarray:
    """The five collision invariants (1, v_x, v_y, v_z, |v|^2/2), shape (5, n)."""
    return np.stack([
        np.ones(grid.n_nodes),
        grid.vx,
        grid.vy,
        grid.vz,
        0.5 * (grid.vx**2 + grid.vy**2 + grid.vz**2),
    ])


def shifted_invariants(grid: VelocityGrid, drift: float) -> np.ndarray:
    """Invariants centred on a tangential wall drift (U, 0, 0)."""
    cx = grid.vx - drift
    return np.stack([
        np.ones(grid.n_nodes),
        cx,
        grid.vy,
        grid.vz,
        0.5 * (cx**2 + grid.vy**2 + grid.vz**2),
    ])


def wall_maxwellian(
    grid: VelocityGrid,
    drift: float = 0.0,
    incoming: str = "up",
    normalization: str = "continuum",
) -> np.ndarray:
    """Wall-emission Maxwellian with unit incoming half-flux.

    ``incoming='up'`` normalizes over v_y > 0 (a bottom wall), ``'down'``
    over v_y < 0.  With ``normalization='continuum'`` the density factor
    is the analytic sqrt(2 pi); with ``'discrete'`` the discrete
    half-flux quadrature is used instead, making sum(w |v_y| M) = 1 exact
    on the grid (the two differ at the grid's quadrature error).
    """
    m = evaluate_maxwellian(MaxwellianState(u=(drift, 0.0, 0.0)), grid)
    if normalization == "continuum":
        return np.sqrt(2.0 * np.pi) * m
    if normalization != "discrete":
        raise ValueError(f"unknown normalization {normalization!r}")
    mask = grid.half_space(1, positive=(incoming == "up"))
    half_flux = float(np.dot(grid.weights[mask] * np.abs(grid.vy[mask]), m[mask]))
    return m / half_flux


def moments(f: np.ndarray, grid: VelocityGrid) -> tuple[float, np.ndarray, float]:
    """Discrete (mass, momentum, energy) of a density-form distribution."""
    wf = grid.weights * np.asarray(f)
    mass = float(wf.sum())
    momentum = np.array([
        float(np.dot(wf, grid.vx)),
        float(np.dot(wf, grid.vy)),
        float(np.dot(wf, grid.vz)),
    ])
    energy = 0.5 * float(np.dot(wf, grid.vx**2 + grid.vy**2 + grid.vz**2))
    return mass, momentum, energy


@dataclass(frozen=True)
class WeightedNorm:
    """Norm spec: polynomial velocity weight (1+|v|)^j and spatial exponent q."""

    weight_power: int = 0
    spatial_exponent: float = 2  # 2 or inf

    def __post_init__(self):
        q = self.spatial_exponent
        if not (q == 2 or q == np.inf or q == float("inf")):
            raise ValueError(f"spatial exponent must be 2 or inf, got {q}")


def weighted_norm(
    f: np.ndarray,
    norm: WeightedNorm,
    grid: VelocityGrid,
    y_grid: np.ndarray | None = None,
    y_weights: np.ndarray | None = None,
) -> float:
    """||zeta_j f||_{q,2} for a coefficient-form field.

    ``f`` has shape (ny, n) for a space-velocity field or (n,) for a
    single velocity profile.  The q-norm acts in y inside the
    M-weighted L2 velocity integral:

        ( int dv M(v) zeta_j(v)^2 ( int dy |f|^q )^{2/q} )^{1/2}

    with sup_y replacing the y-integral for q = inf.  ``y_weights``
    overrides the default trapezoid weights on ``y_grid``.
    """
    f = np.atleast_2d(np.asarray(f, dtype=float))
    zeta = (1.0 + grid.speed) ** norm.weight_power
    mw = grid.weights * grid.standard_maxwellian() * zeta**2
    q = norm.spatial_exponent
    if q == 2:
        if y_weights is None:
            if y_grid is None:
                raise ValueError("q=2 norm needs y_grid or y_weights")
            y_weights = _trapezoid_weights(np.asarray(y_grid))
        inner_y = y_weights @ (f**2)
    else:
        inner_y = np.max(f**2, axis=0)
    return float(np.sqrt(np.dot(mw, inner_y)))


def _trapezoid_weights(y: np.ndarray) -> np.ndarray:
    w = np.zeros_like(y)
    w[1:] += 0.5 * np.diff(y)
    w[:-1] += 0.5 * np.diff(y)
    return w


# ---------------------------------------------------------------------------
# Field snapshots: CSV (vx,vy,vz,weight,value rows) and flat binary.

_CSV_HEADER = "vx,vy,vz,weight,value"


def save_field_csv(path, grid: VelocityGrid, values: np.ndarray) -> None:
    values = np.asarray(values).ravel()
    if values.size != grid.n_nodes:
        raise ValueError("field length does not match grid")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# extent={grid.extent!r} points_per_axis={grid.points_per_axis}\n")
        fh.write(_CSV_HEADER + "\n")
        data = np.column_stack([grid.nodes, grid.weights, values])
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def load_field_csv(path) -> tuple[float, int, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (extent, points_per_axis, nodes, weights, values)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing snapshot header line")
        fields = dict(tok.split("=") for tok in header[1:].split())
        extent = float(fields["extent"])
        points = int(fields["points_per_axis"])
        fh.readline()  # column names
        data = np.loadtxt(fh, delimiter=",")
    return extent, points, data[:, :3], data[:, 3], data[:, 4]


def save_field_binary(path, grid: VelocityGrid, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != grid.n_nodes:
        raise ValueError("field length does not match grid")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<dq", grid.extent, grid.points_per_axis))
        fh.write(values.tobytes())


def load_field_binary(path) -> tuple[float, int, np.ndarray]:
    with open(path, "rb") as fh:
        extent, points = struct.unpack("<dq", fh.read(16))
        values = np.frombuffer(fh.read(), dtype=np.float64)
    if values.size != points**3:
        raise ValueError("binary snapshot length does not match header")
    return extent, int(points), values
