"""Trajectory-optimization problem of the data-driven predictive controller.

Builds the regularized tracking problem over (u, y, g) and its compact
box-constrained form  min 1/2 z'Pz + q'z  s.t. Hz = b, z in D  with
z = [u; y; g] and D a product of intervals (the g block is unbounded).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .plant import HankelPair


def compute_regularizer(hankel: HankelPair) -> np.ndarray:
    """Projector onto the orthogonal complement of the row space of [U_p; Y_p; U_f].

    Computed as I - pinv(S) S with the pseudo-inverse truncating singular
    values below 1e-12 * max(rows, cols) * sigma_max.
    """
    S = np.vstack([hankel.U_p, hankel.Y_p, hankel.U_f])
    rcond = 1e-12 * max(S.shape)
    M = np.eye(hankel.n_g) - np.linalg.pinv(S, rcond=rcond) @ S
    return 0.5 * (M + M.T)


def project_box(z: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the interval product [lo, hi] (infinite bounds pass through)."""
    return np.clip(z, lo, hi)


@dataclass(frozen=True)
class DpcProblem:
    """All data of one predictive-control solve.

    Weights Q (over the stacked output horizon) and R (over the input horizon)
    must be symmetric PSD.  `u_lo`/`u_hi` and `y_lo`/`y_hi` are per-coordinate
    bounds over the horizon; `u_ini`/`y_ini` hold the most recent sigma steps.
    """

    hankel: HankelPair
    Q: np.ndarray
    R: np.ndarray
    lambda_g: float
    lambda_s: float
    M: np.ndarray
    y_ref: np.ndarray
    u_ref: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    u_ini: np.ndarray
    y_ini: np.ndarray

    def __post_init__(self):
        h = self.hankel
        lu, ly = h.ell * h.n_u, h.ell * h.n_y
        if self.Q.shape != (ly, ly):
            raise ValueError(f"Q must be {ly}x{ly}, got {self.Q.shape}")
        if self.R.shape != (lu, lu):
            raise ValueError(f"R must be {lu}x{lu}, got {self.R.shape}")
        for name, want in (
            ("y_ref", ly),
            ("u_ref", lu),
            ("u_lo", lu),
            ("u_hi", lu),
            ("y_lo", ly),
            ("y_hi", ly),
            ("u_ini", h.sigma * h.n_u),
            ("y_ini", h.sigma * h.n_y),
        ):
            got = getattr(self, name).shape
            if got != (want,):
                raise ValueError(f"{name} must have shape ({want},), got {got}")
        if self.lambda_g < 0 or self.lambda_s < 0:
            raise ValueError("regularization weights must be nonnegative")
        _check_psd(self.Q, "Q")
        _check_psd(self.R, "R")
        _check_projector(self.M, h.n_g)
        if np.any(self.u_lo > self.u_hi) or np.any(self.y_lo > self.y_hi):
            raise ValueError("box lower bounds must not exceed upper bounds")

    @property
    def sigma(self) -> int:
        return self.hankel.sigma

    @property
    def ell(self) -> int:
        return self.hankel.ell

    def with_window(self, u_ini: np.ndarray, y_ini: np.ndarray) -> "DpcProblem":
        """Same problem with a fresh online window (for receding-horizon reuse)."""
        return dataclasses.replace(
            self, u_ini=np.asarray(u_ini, float), y_ini=np.asarray(y_ini, float)
        )


def _check_psd(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, atol=1e-10, rtol=0.0):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")


def _check_projector(M: np.ndarray, n_g: int, seed: int = 0) -> None:
    if M.shape != (n_g, n_g):
        raise ValueError(f"M must be {n_g}x{n_g}, got {M.shape}")
    if np.abs(M - M.T).max() > 1e-9:
        raise ValueError("M must be symmetric")
    # Idempotence probed on a few vectors; the full matrix check is O(n_g^3).
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n_g, 3))
    mv = M @ v
    if np.abs(M @ mv - mv).max() > 1e-7 * max(1.0, np.abs(v).max()):
        raise ValueError("M must be idempotent")


def build_problem(
    hankel: HankelPair,
    *,
    q_weights: np.ndarray,
    r_weights: np.ndarray,
    lambda_g: float,
    lambda_s: float,
    y_ref: np.ndarray,
    u_ref: np.ndarray,
    u_bounds: tuple[float, float],
    y_bounds: tuple[float, float],
    u_ini: np.ndarray,
    y_ini: np.ndarray,
    M: np.ndarray | None = None,
) -> DpcProblem:
    """Assemble a `DpcProblem` from per-step diagonal weights and scalar channel bounds."""
    ell = hankel.ell
    q_w = np.asarray(q_weights, float)
    r_w = np.asarray(r_weights, float)
    if q_w.shape != (hankel.n_y,):
        raise ValueError(f"q_weights must have {hankel.n_y} entries, got {q_w.shape}")
    if r_w.shape != (hankel.n_u,):
        raise ValueError(f"r_weights must have {hankel.n_u} entries, got {r_w.shape}")
    lu, ly = ell * hankel.n_u, ell * hankel.n_y
    if M is None:
        M = compute_regularizer(hankel)
    return DpcProblem(
        hankel=hankel,
        Q=np.diag(np.tile(q_w, ell)),
        R=np.diag(np.tile(r_w, ell)),
        lambda_g=float(lambda_g),
        lambda_s=float(lambda_s),
        M=M,
        y_ref=np.asarray(y_ref, float),
        u_ref=np.asarray(u_ref, float),
        u_lo=np.full(lu, float(u_bounds[0])),
        u_hi=np.full(lu, float(u_bounds[1])),
        y_lo=np.full(ly, float(y_bounds[0])),
        y_hi=np.full(ly, float(y_bounds[1])),
        u_ini=np.asarray(u_ini, float),
        y_ini=np.asarray(y_ini, float),
    )


@dataclass(frozen=True)
class CompactQp:
    """Box-constrained equality QP  min 1/2 z'Pz + q'z  s.t. Hz = b, lo <= z <= hi.

    `dq_dp` is the (constant) Jacobian of q with respect to the output-window
    perturbation; `u_slice`/`y_slice`/`g_slice` locate the trajectory blocks
    inside z.
    """

    P: np.ndarray
    q: np.ndarray
    H: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    u_slice: slice
    y_slice: slice
    g_slice: slice
    dq_dp: np.ndarray

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)

    def lagrangian(self, z: np.ndarray, w: np.ndarray) -> float:
        return self.objective(z) + float(w @ (self.H @ z - self.b))

    def project(self, z: np.ndarray) -> np.ndarray:
        return project_box(z, self.lo, self.hi)

    def perturbed(self, p: np.ndarray) -> "CompactQp":
        """The same QP with the output window shifted by p (only q changes)."""
        p = np.asarray(p, float)
        if p.shape != (self.dq_dp.shape[1],):
            raise ValueError(
                f"perturbation must have shape ({self.dq_dp.shape[1]},), got {p.shape}"
            )
        return dataclasses.replace(self, q=self.q + self.dq_dp @ p)


def assemble_compact(prob: DpcProblem, p: np.ndarray | None = None) -> CompactQp:
    """Rewrite the trajectory optimization in compact form.

    With z = [u; y; g]:

      P = blkdiag(R, Q, 2*lambda_g*M'M + 2*lambda_s*Yp'Yp)
      q = -[R u_ref; Q y_ref; 2*lambda_s*Yp'(y_ini + p)]
      H = [[0, 0, Up], [-I, 0, Uf], [0, -I, Yf]],  b = [u_ini; 0]

    The p = 0 assembly is bit-identical to the unperturbed problem.
    """
    h = prob.hankel
    lu, ly, ng = h.ell * h.n_u, h.ell * h.n_y, h.n_g
    n = lu + ly + ng
    m = h.sigma * h.n_u + lu + ly

    # 2*lambda_s*Yp'Yp assembled from a scaled factor to stay PSD under roundoff.
    Yp_s = np.sqrt(2.0 * prob.lambda_s) * h.Y_p
    M_s = np.sqrt(2.0 * prob.lambda_g) * prob.M
    G = M_s.T @ M_s + Yp_s.T @ Yp_s
    G = 0.5 * (G + G.T)

    P = np.zeros((n, n))
    P[:lu, :lu] = prob.R
    P[lu : lu + ly, lu : lu + ly] = prob.Q
    P[lu + ly :, lu + ly :] = G

    dq_dp = np.zeros((n, h.sigma * h.n_y))
    dq_dp[lu + ly :, :] = -2.0 * prob.lambda_s * h.Y_p.T

    window = prob.y_ini if p is None else prob.y_ini + np.asarray(p, float)
    q = np.concatenate(
        [
            -(prob.R @ prob.u_ref),
            -(prob.Q @ prob.y_ref),
            -2.0 * prob.lambda_s * (h.Y_p.T @ window),
        ]
    )

    H = np.zeros((m, n))
    su = h.sigma * h.n_u
    H[:su, lu + ly :] = h.U_p
    H[su : su + lu, :lu] = -np.eye(lu)
    H[su : su + lu, lu + ly :] = h.U_f
    H[su + lu :, lu : lu + ly] = -np.eye(ly)
    H[su + lu :, lu + ly :] = h.Y_f
    b = np.concatenate([prob.u_ini, np.zeros(lu + ly)])

    lo = np.concatenate([prob.u_lo, prob.y_lo, np.full(ng, -np.inf)])
    hi = np.concatenate([prob.u_hi, prob.y_hi, np.full(ng, np.inf)])

    return CompactQp(
        P=P,
        q=q,
        H=H,
        b=b,
        lo=lo,
        hi=hi,
        u_slice=slice(0, lu),
        y_slice=slice(lu, lu + ly),
        g_slice=slice(lu + ly, n),
        dq_dp=dq_dp,
    )
