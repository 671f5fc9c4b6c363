"""Implicit differentiation of the QP solution map.

The saddle point xi = (z, w) solves the QP iff the fixed-point residual

    F(xi, p) = [z - clip(z+, lo, hi); Hz - b],   z+ = z - Pz - q - H'w

vanishes.  Away from the kinks of the box projection, F is differentiable
and the solution map inherits the Jacobian -J^{-1}K with

    J = [[I - D(I - P), D H'], [H, 0]],   K = [[D dq_dp], [0]],

where D is the diagonal 0/1 Jacobian of the projection at z+.  Singular or
near-singular J is handled by truncated least squares throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .deepc import CompactQp
from .solver import SaddlePoint, default_tolerance

#: Relative cutoff for small singular values in the adjoint/forward solves.
LSQ_RCOND = 1e-10

#: Half-width of the band around a bound treated as nondifferentiable.
BOUNDARY_EPS = 1e-9


class DegenerateSolutionError(RuntimeError):
    """Refused to differentiate at a point whose residual is too large."""


@dataclass(frozen=True)
class Residual:
    """Optimality residual F and the pre-projection point it was built from."""

    value: np.ndarray
    z_plus: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.value))


@dataclass
class SensitivityOperators:
    """Dense Jacobians of F at a saddle point.

    `proj_diag` holds the 0/1 diagonal of the projection Jacobian;
    `boundary_flags` lists coordinates within `BOUNDARY_EPS` of a bound,
    where the clamped (zero-derivative) convention was applied.
    """

    J: np.ndarray
    K: np.ndarray
    proj_diag: np.ndarray
    boundary_flags: np.ndarray
    u_dim: int
    _row_scale: np.ndarray | None = None
    _col_scale: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.J.shape[0]

    def equilibration(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached row/column scalings of J.

        The QP data mix unit-size rows with regularization-weighted ones,
        so a relative singular-value cutoff is only meaningful after
        balancing; all least-squares solves against J go through these.
        """
        if self._row_scale is None:
            self._row_scale, self._col_scale = _ruiz_scales(self.J)
        return self._row_scale, self._col_scale


@dataclass(frozen=True)
class Adjoint:
    """Minimum-norm solution of the adjoint least-squares problem."""

    eta: np.ndarray
    lsq_residual: float
    lsq_dimension: int


def residual(qp: CompactQp, z: np.ndarray, w: np.ndarray) -> Residual:
    """Evaluate the fixed-point residual at a primal-dual pair."""
    z_plus = z - (qp.P @ z + qp.q + qp.H.T @ w)
    f1 = z - np.clip(z_plus, qp.lo, qp.hi)
    f2 = qp.H @ z - qp.b
    return Residual(value=np.concatenate([f1, f2]), z_plus=z_plus)


def projection_jacobian(
    z_plus: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    eps: float = BOUNDARY_EPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal of the box-projection Jacobian at z_plus, with boundary flags.

    Entries are 1 strictly inside the box (by a margin of `eps`) and 0
    outside.  Coordinates within `eps` of a bound sit at a kink of the
    projection; they take the clamped value 0 and are reported so callers
    can exclude them from finite-difference comparisons.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    near_lo = np.abs(z_plus - lo) <= eps
    near_hi = np.abs(z_plus - hi) <= eps
    flagged = near_lo | near_hi
    inside = (z_plus > lo + eps) & (z_plus < hi - eps)
    diag = np.where(inside & ~flagged, 1.0, 0.0)
    return diag, np.flatnonzero(flagged)


def assemble_sensitivity(
    qp: CompactQp,
    xi: SaddlePoint,
    *,
    residual_tol: float | None = None,
    eps: float = BOUNDARY_EPS,
) -> SensitivityOperators:
    """Build J and K at a solved point.

    Raises `DegenerateSolutionError` when the residual at `xi` exceeds
    `residual_tol` (default 1e-6 * (1 + |q|)): differentiating a
    non-solution would silently produce garbage sensitivities.
    """
    res = residual(qp, xi.z_star, xi.w_star)
    if residual_tol is None:
        residual_tol = default_tolerance(qp.q, rtol=1e-6)
    if res.norm > residual_tol:
        raise DegenerateSolutionError(
            f"residual {res.norm:.3e} exceeds {residual_tol:.3e}; refusing to differentiate"
        )
    n, m = qp.n, qp.m
    d, flags = projection_jacobian(res.z_plus, qp.lo, qp.hi, eps)
    J = np.zeros((n + m, n + m))
    # I - D(I - P) written as D P with (1 - d) added on the diagonal
    J[:n, :n] = d[:, None] * qp.P
    J[np.arange(n), np.arange(n)] += 1.0 - d
    J[:n, n:] = d[:, None] * qp.H.T
    J[n:, :n] = qp.H
    K = np.zeros((n + m, qp.dq_dp.shape[1]))
    K[:n] = d[:, None] * qp.dq_dp
    return SensitivityOperators(
        J=J,
        K=K,
        proj_diag=d,
        boundary_flags=flags,
        u_dim=qp.u_slice.stop - qp.u_slice.start,
    )


def _ruiz_scales(A: np.ndarray, iters: int = 30) -> tuple[np.ndarray, np.ndarray]:
    """Row/column scalings driving dl[:, None] * A * dr toward unit entries."""
    dl = np.ones(A.shape[0])
    dr = np.ones(A.shape[1])
    W = A.copy()
    for _ in range(iters):
        rn = np.abs(W).max(axis=1, initial=0.0)
        cn = np.abs(W).max(axis=0, initial=0.0)
        sl = 1.0 / np.sqrt(np.where(rn > 0, rn, 1.0))
        sr = 1.0 / np.sqrt(np.where(cn > 0, cn, 1.0))
        W *= sl[:, None] * sr[None, :]
        dl *= sl
        dr *= sr
        if max(np.abs(1.0 - sl).max(initial=0.0), np.abs(1.0 - sr).max(initial=0.0)) < 1e-3:
            break
    return dl, dr


def solve_adjoint(ops: SensitivityOperators, grad_psi_u: np.ndarray) -> Adjoint:
    """Minimum-norm least-squares solution of J'x = -T'grad.

    T selects the input block of xi, so the right-hand side embeds the
    negated attacker-objective gradient in the first u-coordinates.  The
    solve runs on the equilibrated operator with singular values below
    `LSQ_RCOND` times the largest treated as zero; the system dimension
    n + m is reported for size accounting.
    """
    dim = ops.dim
    grad = np.asarray(grad_psi_u, float)
    if grad.shape != (ops.u_dim,):
        raise ValueError(f"gradient must have shape ({ops.u_dim},), got {grad.shape}")
    rhs = np.zeros(dim)
    rhs[: ops.u_dim] = -grad
    if not np.any(rhs):
        return Adjoint(eta=np.zeros(dim), lsq_residual=0.0, lsq_dimension=dim)
    # J = Dl^-1 Js Dr^-1, so J' eta = rhs becomes Js' (Dl^-1 eta) = Dr rhs.
    dl, dr = ops.equilibration()
    Js = dl[:, None] * ops.J * dr[None, :]
    y, *_ = scipy.linalg.lstsq(Js.T, dr * rhs, cond=LSQ_RCOND, lapack_driver="gelsy")
    eta = dl * y
    return Adjoint(
        eta=eta,
        lsq_residual=float(np.linalg.norm(ops.J.T @ eta - rhs)),
        lsq_dimension=dim,
    )


def directional_sensitivity(ops: SensitivityOperators, dp: np.ndarray) -> np.ndarray:
    """Forward-mode directional derivative of the saddle point: solves J dxi = -K dp."""
    dp = np.asarray(dp, float)
    rhs = -(ops.K @ dp)
    if not np.any(rhs):
        return np.zeros(ops.dim)
    dl, dr = ops.equilibration()
    Js = dl[:, None] * ops.J * dr[None, :]
    y, *_ = scipy.linalg.lstsq(Js, dl * rhs, cond=LSQ_RCOND, lapack_driver="gelsy")
    return dr * y
