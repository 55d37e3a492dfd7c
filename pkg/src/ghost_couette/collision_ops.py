"""Discrete linearized collision operators and their spectral machinery.

Operators act on Maxwellian-relative coefficient vectors f = F/M_state
and are symmetric in the weighted inner product <f, g> = sum w M f g.
Three models are provided:

* a BGK projection surrogate (default): L f = rate (P f - f) with the
  orthogonal projection P onto the five collision invariants, or the
  variable collision-frequency variant L f = -nu(v)(f - P_nu f);
* an optional Monte-Carlo sampled hard-sphere kernel, symmetrized and
  conservation-cleaned after assembly;
* a quadratically-growing augmentation L + L_theta used by the
  half-space boundary-layer solver, with nu_tilde(v) = theta (1+|v|)^2.

Every operator carries its multiplication part nu, its compact part
K = L + nu, and the null-space projector.  The surrogates satisfy the
standard structural properties (symmetry, nonpositivity, 5-dim null
space, range orthogonality, nu bounds, spectral gap) by construction;
the sampled kernel is cleaned to satisfy them and the cleanup
magnitudes are recorded.

Internally, "root coordinates" x_hat = sqrt(w M) x turn the weighted
inner product into the Euclidean one, so symmetric operators have
symmetric matrices; dense eigenvalue work happens there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .velocity_space import (
    MaxwellianState,
    VelocityGrid,
    collision_invariants,
    evaluate_maxwellian,
)

__all__ = [
    "DiscreteOperator",
    "PerturbedOperator",
    "LJGapResult",
    "NullSpaceError",
    "build_bgk",
    "build_hard_sphere",
    "build_augmented_theta",
    "solve_on_complement",
    "spectral_gap",
    "build_LJ",
    "verify_LJ_gap",
]

TOL_OP = 1.0e-10
TOL_SOLVE = 1.0e-10
DENSE_BYTES_CAP = 2 << 30


class NullSpaceError(ValueError):
    """Right-hand side carries a null-space component beyond tolerance."""


def _orthonormalize(vectors: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Column-orthonormalize (k, n) rows under diag(metric) via Cholesky."""
    V = vectors.T  # (n, k)
    gram = V.T @ (metric[:, None] * V)
    chol = np.linalg.cholesky(gram)
    return sla.solve_triangular(chol, V.T, lower=True).T  # (n, k)


class DiscreteOperator:
    """Matrix-free linearized collision operator with nu/K split.

    Attributes
    ----------
    nu : collision frequency values on the grid (the multiplication part)
    lowrank : list of (n, k) factors B with K f += B (B^T (D f))
    dense_root_K : optional dense symmetric kernel part in root coordinates
    projector_basis : (n, 5) weighted-orthonormal null-space basis
    nu_bounds : fitted (nu0, nu1) with nu0 (1+|v|) <= nu <= nu1 (1+|v|)
    cleanup : dict of recorded post-assembly correction magnitudes
    """

    def __init__(self, grid, state, model_tag, nu, lowrank, dense_root_K=None,
                 extra=None):
        self.grid = grid
        self.state = state
        self.model_tag = model_tag
        self.nu = np.asarray(nu, dtype=float)
        self.lowrank = list(lowrank)
        self.dense_root_K = dense_root_K
        self.mref = evaluate_maxwellian(state, grid)
        self.metric = grid.weights * self.mref
        self.root = np.sqrt(self.metric)
        self.chi = collision_invariants(grid)
        self.projector_basis = _orthonormalize(self.chi, self.metric)
        ratio = self.nu / (1.0 + grid.speed)
        self.nu_bounds = (float(ratio.min()), float(ratio.max()))
        self.cleanup = dict(extra or {})
        self._solve_cache = {}

    # -- linear algebra ----------------------------------------------------

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    def inner(self, f, g) -> float:
        return float(np.dot(self.metric, np.asarray(f) * np.asarray(g)))

    def project(self, f: np.ndarray) -> np.ndarray:
        """Orthogonal projection P onto the collision invariants."""
        Phi = self.projector_basis
        return Phi @ (Phi.T @ (self.metric * f))

    def apply(self, f: np.ndarray) -> np.ndarray:
        """L f = -nu f + K f."""
        out = -self.nu * f
        df = self.metric * f
        for B in self.lowrank:
            out += B @ (B.T @ df)
        if self.dense_root_K is not None:
            out += (self.dense_root_K @ (self.root * f)) / self.root
        return out

    def apply_kernel(self, f: np.ndarray) -> np.ndarray:
        """Compact part K f = L f + nu f."""
        return self.apply(f) + self.nu * f

    def as_root_matrix(self, max_bytes: int = DENSE_BYTES_CAP) -> np.ndarray:
        """Dense symmetric matrix of L in root coordinates."""
        need = 8 * self.n * self.n
        if need > max_bytes:
            raise MemoryError(
                f"dense operator needs {need / 1e9:.2f} GB > cap {max_bytes / 1e9:.2f} GB; "
                "use a coarser grid for dense work"
            )
        L = np.diag(-self.nu).astype(float)
        for B in self.lowrank:
            Br = self.root[:, None] * B
            L += Br @ Br.T
        if self.dense_root_K is not None:
            L += self.dense_root_K
        return L

    @property
    def matrix(self) -> np.ndarray:
        """Dense operator on coefficient vectors (row i: action on e_i)."""
        Lr = self.as_root_matrix()
        return (Lr / self.root[:, None]) * self.root[None, :]

    def solve_ingredients(self):
        """Cached Woodbury or Cholesky factorization of -L + P (SPD)."""
        if "factor" in self._solve_cache:
            return self._solve_cache["factor"]
        Phi_r = self.root[:, None] * self.projector_basis
        if self.dense_root_K is None:
            # -L + P = diag(nu) - sum B B^T + Phi Phi^T, solved by Woodbury
            cols = [self.root[:, None] * B for B in self.lowrank] + [Phi_r]
            signs = np.concatenate(
                [-np.ones(B.shape[1]) for B in self.lowrank] + [np.ones(5)]
            )
            U = np.hstack(cols)
            core = np.diag(1.0 / signs) + U.T @ (U / self.nu[:, None])
            factor = ("woodbury", U, sla.lu_factor(core))
        else:
            A = -self.as_root_matrix() + Phi_r @ Phi_r.T
            factor = ("cholesky", sla.cho_factor(A, lower=True))
        self._solve_cache["factor"] = factor
        return factor

    def _solve_root(self, rhs_root: np.ndarray) -> np.ndarray:
        """x with (-L + P) x = rhs in root coordinates."""
        factor = self.solve_ingredients()
        if factor[0] == "woodbury":
            _, U, core_lu = factor
            y = rhs_root / self.nu
            return y - (U / self.nu[:, None]) @ sla.lu_solve(core_lu, U.T @ y)
        return sla.cho_solve(factor[1], rhs_root)


def build_bgk(
    grid: VelocityGrid,
    collision_rate: float,
    state: MaxwellianState | None = None,
    variable_nu: bool = False,
) -> DiscreteOperator:
    """BGK projection surrogate L f = rate (P f - f).

    With ``variable_nu`` the collision frequency is reshaped to
    nu(v) = rate (1+|v|)/(1+<|v|>) and the relaxation targets the
    nu-weighted projection of the invariants, which keeps symmetry,
    conservation and nonpositivity intact.
    """
    if not collision_rate > 0.0:
        raise ValueError(f"collision rate must be positive, got {collision_rate}")
    state = state or MaxwellianState()
    mref = evaluate_maxwellian(state, grid)
    metric = grid.weights * mref
    chi = collision_invariants(grid)
    if not variable_nu:
        nu = np.full(grid.n_nodes, float(collision_rate))
        B = np.sqrt(collision_rate) * _orthonormalize(chi, metric)
        return DiscreteOperator(grid, state, "bgk", nu, [B])
    mean_speed = float(np.dot(metric, grid.speed)) / float(np.dot(metric, np.ones(grid.n_nodes)))
    nu = collision_rate * (1.0 + grid.speed) / (1.0 + mean_speed)
    Phi_nu = _orthonormalize(chi, metric * nu)
    return DiscreteOperator(grid, state, "bgk", nu, [nu[:, None] * Phi_nu],
                            extra={"variable_nu": True})


def build_augmented_theta(
    base: DiscreteOperator, theta: float, grid: VelocityGrid
) -> DiscreteOperator:
    """Add a relaxation term with quadratically growing frequency.

    The augmentation drives the non-hydrodynamic part toward the
    invariants at rate nu_tilde(v) = theta (1+|v|)^2, mimicking the
    squared-cross-section operator used to stiffen the half-space
    problem; theta = 0 returns the base operator unchanged.
    """
    if theta < 0.0:
        raise ValueError(f"theta must be nonnegative, got {theta}")
    if grid is not base.grid:
        raise ValueError("augmentation must reuse the base operator grid")
    if theta == 0.0:
        return base
    nu_t = theta * (1.0 + grid.speed) ** 2
    Phi_t = _orthonormalize(base.chi, base.metric * nu_t)
    op = DiscreteOperator(
        grid,
        base.state,
        "augmented_theta",
        base.nu + nu_t,
        base.lowrank + [nu_t[:, None] * Phi_t],
        dense_root_K=base.dense_root_K,
        extra=dict(base.cleanup),
    )
    op.theta = float(theta)
    op.base_model = base.model_tag
    return op


# ---------------------------------------------------------------------------
# Sampled hard-sphere kernel


def _trilinear_deposit(acc, grid, points, weights, lost):
    """Scatter weights onto the 8 cell corners around each point."""
    p = grid.points_per_axis
    axis = grid.axis
    h = axis[1] - axis[0]
    t = (points - axis[0]) / h
    inside = np.all((t >= 0.0) & (t <= p - 1), axis=1)
    lost[0] += float(weights[~inside].sum())
    t = t[inside]
    w = weights[inside]
    i0 = np.minimum(t.astype(int), p - 2)
    frac = t - i0
    for corner in range(8):
        bits = ((corner >> 2) & 1, (corner >> 1) & 1, corner & 1)
        cw = w.copy()
        idx = np.zeros(len(w), dtype=np.int64)
        for ax, b in enumerate(bits):
            cw *= frac[:, ax] if b else (1.0 - frac[:, ax])
            idx = idx * p + (i0[:, ax] + b)
        np.add.at(acc, idx, cw)


def build_hard_sphere(
    grid: VelocityGrid,
    samples: int = 10_000,
    seed: int = 0,
    state: MaxwellianState | None = None,
    memory_cap_bytes: int = DENSE_BYTES_CAP,
) -> DiscreteOperator:
    """Monte-Carlo sampled linearized hard-sphere operator.

    The loss terms (the exact collision frequency nu(v) = pi <|v - v'|>_M
    and the kernel -pi |v - v'| M') are assembled by quadrature; only the
    post-collisional gain term is sampled, with trilinear deposition of
    the outgoing velocities.  The result is then symmetrized in the
    weighted metric, the invariant subspace is projected out of both
    sides, and any noise-positive eigenvalues are clipped to zero; all
    three correction magnitudes are recorded in ``op.cleanup``.
    """
    n = grid.n_nodes
    if 3 * 8 * n * n > memory_cap_bytes:
        raise MemoryError(
            f"sampled kernel at {grid.points_per_axis}^3 needs "
            f"{3 * 8 * n * n / 1e9:.2f} GB > cap; use <= 15 points per axis"
        )
    if samples < 10_000:
        raise ValueError("use at least 10^4 samples per matrix row-block")
    state = state or MaxwellianState()
    mref = evaluate_maxwellian(state, grid)
    metric = grid.weights * mref
    rng = np.random.default_rng(seed)

    # exact pieces: nu(v) and the loss kernel K1[i,j] = pi w_j M_j |v_i - v_j|
    dist = np.linalg.norm(grid.nodes[:, None, :] - grid.nodes[None, :, :], axis=2)
    K1 = np.pi * dist * metric[None, :]
    nu = K1.sum(axis=1)

    # sampled gain term, importance-sampled from the Maxwellian mass
    prob = metric / metric.sum()
    m0 = metric.sum()
    gain = np.zeros((n, n))
    lost = [0.0]
    chunk = samples
    for i in range(n):
        j_star = rng.choice(n, size=chunk, p=prob)
        normal = rng.normal(size=(chunk, 3))
        normal /= np.linalg.norm(normal, axis=1)[:, None]
        rel = grid.nodes[i] - grid.nodes[j_star]
        proj = np.einsum("ij,ij->i", rel, normal)
        bsec = 0.5 * np.abs(proj)  # hard-sphere cross section B(n, V)
        w = m0 * 4.0 * np.pi * bsec / chunk
        v_post = grid.nodes[i] - normal * proj[:, None]
        vstar_post = grid.nodes[j_star] + normal * proj[:, None]
        row = np.zeros(n)
        _trilinear_deposit(row, grid, v_post, w, lost)
        _trilinear_deposit(row, grid, vstar_post, w, lost)
        gain[i] = row

    # assemble in root coordinates and clean up
    root = np.sqrt(metric)
    L_root = (root[:, None] * (gain - K1)) / root[None, :] - np.diag(nu)
    asym = float(np.abs(L_root - L_root.T).max())
    L_root = 0.5 * (L_root + L_root.T)

    Phi_r = root[:, None] * _orthonormalize(collision_invariants(grid), metric)
    null_res = float(np.linalg.norm(L_root @ Phi_r))
    Qp = np.eye(n) - Phi_r @ Phi_r.T
    L_root = Qp @ L_root @ Qp

    eigval, eigvec = np.linalg.eigh(L_root)
    clip = float(max(eigval.max(), 0.0))
    eigval = np.minimum(eigval, 0.0)
    L_root = (eigvec * eigval) @ eigvec.T

    op = DiscreteOperator(
        grid,
        state,
        "hard_sphere_sampled",
        nu,
        [],
        dense_root_K=L_root + np.diag(nu),
        extra={
            "asymmetry": asym,
            "null_residual_pre_cleanup": null_res,
            "eigenvalue_clip": clip,
            "deposit_weight_lost": lost[0],
            "samples": samples,
            "seed": seed,
        },
    )
    return op


# ---------------------------------------------------------------------------
# Fredholm solve and spectral diagnostics


def solve_on_complement(
    op: DiscreteOperator, rhs: np.ndarray, tol_solve: float = TOL_SOLVE
) -> np.ndarray:
    """Solve L f = rhs with P f = 0 for rhs in the invariant complement.

    The right-hand side is re-projected defensively; a null-space
    component above 1e-6 relative signals a caller bug and raises.  The
    relative residual is checked against ``tol_solve``.
    """
    rhs = np.asarray(rhs, dtype=float)
    scale = np.sqrt(op.inner(rhs, rhs))
    if scale == 0.0:
        return np.zeros_like(rhs)
    p_rhs = op.project(rhs)
    discarded = np.sqrt(op.inner(p_rhs, p_rhs)) / scale
    if discarded > 1.0e-6:
        raise NullSpaceError(
            f"rhs has relative null-space component {discarded:.2e} > 1e-6"
        )
    r0 = rhs - p_rhs
    f = -op._solve_root(op.root * r0) / op.root
    f -= op.project(f)
    res = op.apply(f) - r0
    rel = np.sqrt(op.inner(res, res)) / scale
    if rel > tol_solve:
        raise RuntimeError(f"complement solve residual {rel:.2e} > {tol_solve:.1e}")
    op._last_solve_info = {"discarded_null_fraction": float(discarded), "residual": float(rel)}
    return f


def spectral_gap(
    op: DiscreteOperator, max_bytes: int = DENSE_BYTES_CAP
) -> tuple[float, float]:
    """Spectral gap of -L on the complement and the coercivity constant.

    Returns ``(gap, c_spectral)`` where gap is the smallest nonzero
    eigenvalue of -L restricted to the invariant complement and
    c_spectral the largest c with <f, L f> <= -c <P'f, nu P'f> over that
    complement (a generalized symmetric eigenvalue problem).
    """
    L_root = op.as_root_matrix(max_bytes=max_bytes)
    Phi_r = op.root[:, None] * op.projector_basis
    Q = sla.null_space(Phi_r.T)
    A = Q.T @ (-L_root) @ Q
    A = 0.5 * (A + A.T)
    gap = float(sla.eigh(A, eigvals_only=True, subset_by_index=[0, 0])[0])
    Bn = Q.T @ (op.nu[:, None] * Q)
    Bn = 0.5 * (Bn + Bn.T)
    c_spectral = float(sla.eigh(A, Bn, eigvals_only=True, subset_by_index=[0, 0])[0])
    return gap, c_spectral


# ---------------------------------------------------------------------------
# Perturbed operator L_J = L + L(a P .)


@dataclass
class LJGapResult:
    holds: bool
    c: float
    min_eigenvalue: float
    violating: np.ndarray | None = None


class PerturbedOperator:
    """L_J f = L f + L(a P f) for a small multiplier field a(v).

    The null space is spanned by chi_j - L^{-1} L(a chi_j); the matching
    (generally oblique) projector onto it along the invariant complement
    is P_J = P - (I - P) a P.
    """

    def __init__(self, base: DiscreteOperator, a_field: np.ndarray):
        a = np.asarray(a_field, dtype=float)
        if a.shape != (base.n,):
            raise ValueError("multiplier field must be a per-node vector")
        amax = float(np.abs(a).max())
        if amax > 0.3:
            warnings.warn(
                f"multiplier |a|_inf = {amax:.3f} > 0.3; the perturbative gap "
                "certificate may fail",
                stacklevel=3,
            )
        self.base = base
        self.a = a
        self.kernel_basis = np.stack([
            chi - solve_on_complement(base, base.apply(a * chi)) for chi in base.chi
        ])
        gram = base.chi @ (base.metric[:, None] * base.chi.T)
        self._gram_lu = sla.lu_factor(gram)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.base.apply(f + self.a * self.base.project(f))

    def apply_symmetrized(self, f: np.ndarray) -> np.ndarray:
        """(I + Pa) L_J f, self-adjoint in the weighted product."""
        g = self.apply(f)
        return g + self.base.project(self.a * g)

    def null_projector(self, f: np.ndarray) -> np.ndarray:
        """P_J f = P f - (I - P)(a P f)."""
        pf = self.base.project(f)
        apf = self.a * pf
        return pf - (apf - self.base.project(apf))

    def null_projector_direct(self, f: np.ndarray) -> np.ndarray:
        """Projection onto the computed kernel basis along the complement."""
        coeff = sla.lu_solve(self._gram_lu, self.base.chi @ (self.base.metric * f))
        return coeff @ self.kernel_basis


def build_LJ(base: DiscreteOperator, a_field: np.ndarray) -> PerturbedOperator:
    return PerturbedOperator(base, a_field)


def verify_LJ_gap(
    pert: PerturbedOperator, max_bytes: int = DENSE_BYTES_CAP
) -> LJGapResult:
    """Certify the perturbed coercivity over an eigenbasis sweep.

    Numerically certifies -<(I+Pa) L_J f, f> >= c <nu (I-P)(I+aP) f,
    (I-P)(I+aP) f> on the complement of Kern L_J and returns the largest
    certified c (the smallest generalized eigenvalue).  When the
    multiplier is too large for positivity, ``holds`` is False and the
    violating direction is returned.
    """
    base = pert.base
    n = base.n
    L_root = base.as_root_matrix(max_bytes=max_bytes)
    Phi_r = base.root[:, None] * base.projector_basis
    P_hat = Phi_r @ Phi_r.T
    Bop = np.eye(n) + pert.a[:, None] * P_hat
    H = Bop.T @ (-L_root) @ Bop
    H = 0.5 * (H + H.T)
    W = (np.eye(n) - P_hat) @ Bop
    Wq = W.T @ (base.nu[:, None] * W)
    Wq = 0.5 * (Wq + Wq.T)

    kernel_root = pert.kernel_basis * base.root[None, :]
    Z = sla.null_space(kernel_root)
    A = Z.T @ H @ Z
    B = Z.T @ Wq @ Z
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    try:
        w, vecs = sla.eigh(A, B)
    except sla.LinAlgError:
        # (I + aP) lost invertibility: the weight form is singular
        w0, v0 = sla.eigh(B, subset_by_index=[0, 0])
        return LJGapResult(False, 0.0, float(w0[0]), violating=(Z @ v0[:, 0]) / base.root)
    c = float(w[0])
    if c <= 0.0:
        return LJGapResult(False, c, c, violating=(Z @ vecs[:, 0]) / base.root)
    return LJGapResult(True, c, c)
