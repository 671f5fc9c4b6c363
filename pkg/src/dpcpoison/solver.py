"""First-order primal-dual solver for the compact box-constrained QP.

The iteration combines a projected gradient step on the primal with
proportional-integral feedback on the equality residual in the dual; its
fixed points are exactly the zeros of the optimality residual

    F(z, w) = [z - clip(z - Pz - q - H'w, lo, hi); Hz - b].

The problem data are Ruiz-equilibrated and the constraint matrix is
normalized to unit spectral norm before iterating, so the step-size rule
alpha = 1/(|P| + |H|*beta) applies with |H| = 1.  Convergence is always
certified on the original (unscaled) residual.  An active-set polishing
step (a direct solve of the reduced KKT system at the current clamp
pattern) is attempted periodically; a polished point is only accepted if
it lowers the measured residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .deepc import CompactQp

DEFAULT_MAX_ITER = 200_000
_CHECK_EVERY = 25
_POLISH_EVERY_CHECKS = 8


class MaxIterationsError(RuntimeError):
    """Residual tolerance not reached within the iteration budget."""

    def __init__(self, message: str, best_residual: float, best_point=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_point = best_point


@dataclass
class SaddlePoint:
    """Primal-dual solution with solver diagnostics."""

    z_star: np.ndarray
    w_star: np.ndarray
    residual_norm: float
    lagrangian: float
    iterations: int


def default_tolerance(q: np.ndarray, rtol: float = 1e-9) -> float:
    """Residual tolerance scaled by the linear-term magnitude."""
    return rtol * (1.0 + float(np.linalg.norm(q)))


def _spectral_norm(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(mat)[0])


def _ruiz_equilibrate(P: np.ndarray, H: np.ndarray, iters: int = 25):
    """Diagonal scaling of the stacked [[P, H'], [H, 0]] data toward unit row norms."""
    n, m = P.shape[0], H.shape[0]
    dz = np.ones(n)
    dw = np.ones(m)
    Pw = P.copy()
    Hw = H.copy()
    for _ in range(iters):
        rz = np.abs(Pw).max(axis=1, initial=0.0)
        if m:
            rz = np.maximum(rz, np.abs(Hw).max(axis=0, initial=0.0))
            rw = np.abs(Hw).max(axis=1, initial=0.0)
        else:
            rw = np.zeros(0)
        sz = 1.0 / np.sqrt(np.where(rz > 0, rz, 1.0))
        sw = 1.0 / np.sqrt(np.where(rw > 0, rw, 1.0))
        Pw *= sz[:, None] * sz[None, :]
        if m:
            Hw *= sw[:, None] * sz[None, :]
        dz *= sz
        dw *= sw
        if max(np.abs(1.0 - sz).max(initial=0.0), np.abs(1.0 - sw).max(initial=0.0)) < 1e-3:
            break
    return Pw, Hw, dz, dw


class Workspace:
    """Reusable scaled data for repeated solves that share P, H and the box.

    Receding-horizon and perturbation sweeps re-solve the same QP with fresh
    q (and possibly b); the equilibration and norm estimates are computed
    once here.
    """

    def __init__(self, qp: CompactQp):
        self.qp = qp
        self.P, self.H = qp.P, qp.H
        self.lo, self.hi = qp.lo, qp.hi
        Pw, Hw, dz, dw = _ruiz_equilibrate(qp.P, qp.H)
        norm_h = _spectral_norm(Hw)
        if norm_h > 0:
            Hw = Hw / norm_h
            dw = dw / norm_h
        self.Ph, self.Hh = Pw, Hw
        self.HhT = Hw.T.copy()
        self.dz, self.dw = dz, dw
        self.loh = qp.lo / dz
        self.hih = qp.hi / dz
        self.norm_p = _spectral_norm(Pw)
        self.norm_h = 1.0 if norm_h > 0 else 0.0

    # -- residual on the original data ------------------------------------

    def _residual_norm(self, q, b, z, w) -> float:
        grad = self.P @ z + q + self.H.T @ w
        f1 = z - np.clip(z - grad, self.lo, self.hi)
        f2 = self.H @ z - b
        return float(np.sqrt(np.dot(f1, f1) + np.dot(f2, f2)))

    # -- active-set polish -------------------------------------------------

    def _kkt_solve(self, qh, bh, at_lo, at_hi):
        """Solve the equality KKT system with the given coordinates fixed at bounds.

        Uses an LU factorization with a couple of iterative-refinement steps:
        the measured residual lives on the original problem scale, so the
        linear solve has to be accurate well past plain backward stability.
        Singular systems fall back to a minimum-norm least-squares solve.
        """
        act = at_lo | at_hi
        free = ~act
        nf = int(free.sum())
        m = self.Hh.shape[0]
        # upper-bound assignment wins when a degenerate box flags both sides
        z = np.where(at_hi, self.hih, np.where(at_lo, self.loh, 0.0))
        if nf + m == 0:
            return z, np.zeros(0)
        z_act = z[act]
        rhs = np.concatenate(
            [
                -qh[free] - self.Ph[np.ix_(free, act)] @ z_act,
                bh - self.Hh[:, act] @ z_act,
            ]
        )
        Hf = self.Hh[:, free]
        K = np.zeros((nf + m, nf + m))
        K[:nf, :nf] = self.Ph[np.ix_(free, free)]
        K[:nf, nf:] = Hf.T
        K[nf:, :nf] = Hf
        sol = None
        try:
            lu, piv = scipy.linalg.lu_factor(K)
            cand = scipy.linalg.lu_solve((lu, piv), rhs)
            for _ in range(2):
                resid = rhs - K @ cand
                if np.linalg.norm(resid) <= 1e-14 * (1.0 + np.linalg.norm(rhs)):
                    break
                cand = cand + scipy.linalg.lu_solve((lu, piv), resid)
            if np.all(np.isfinite(cand)) and np.linalg.norm(
                K @ cand - rhs
            ) <= 1e-10 * (1.0 + np.linalg.norm(rhs)):
                sol = cand
        except (scipy.linalg.LinAlgError, ValueError):
            sol = None
        if sol is None:
            sol = scipy.linalg.lstsq(K, rhs, lapack_driver="gelsy")[0]
        z2 = z.copy()
        z2[free] = sol[:nf]
        return z2, sol[nf:]

    def _polish(self, qh, bh, zh, wh, rounds: int = 10):
        """Active-set refinement from the current clamp pattern.

        Each round fixes the guessed active coordinates at their bounds,
        solves the reduced KKT system, then clamps newly violated
        coordinates and releases ones whose multiplier sign is wrong.  The
        caller measures every candidate against the true residual, so a bad
        guess costs time but never correctness.
        """
        at_lo = zh <= self.loh
        at_hi = zh >= self.hih
        best = None
        best_score = np.inf
        for _ in range(rounds):
            z2, w2 = self._kkt_solve(qh, bh, at_lo, at_hi)
            grad = self.Ph @ z2 + qh + self.HhT @ w2
            f1 = z2 - np.clip(z2 - grad, self.loh, self.hih)
            score = float(np.linalg.norm(f1))
            if score < best_score:
                best_score = score
                best = (z2.copy(), w2.copy())
            viol_lo = z2 < self.loh
            viol_hi = z2 > self.hih
            release_lo = at_lo & (grad < 0)
            release_hi = at_hi & (grad > 0)
            new_lo = (at_lo | viol_lo) & ~release_lo
            new_hi = (at_hi | viol_hi) & ~release_hi
            if (new_lo == at_lo).all() and (new_hi == at_hi).all():
                break
            at_lo, at_hi = new_lo, new_hi
        return best

    # -- main loop ----------------------------------------------------------

    def solve(
        self,
        q: np.ndarray | None = None,
        b: np.ndarray | None = None,
        *,
        tol: float | None = None,
        max_iter: int = DEFAULT_MAX_ITER,
        xi0: tuple[np.ndarray, np.ndarray] | None = None,
        beta: float | None = None,
    ) -> SaddlePoint:
        q = self.qp.q if q is None else np.asarray(q, float)
        b = self.qp.b if b is None else np.asarray(b, float)
        if tol is None:
            tol = default_tolerance(q)
        if tol <= 0 and max_iter > 0:
            raise ValueError("tol must be positive")
        n, m = self.P.shape[0], self.H.shape[0]
        qh = self.dz * q
        bh = self.dw * b
        if beta is None:
            beta = max(1.0, np.sqrt(self.norm_p))
        alpha = 1.0 / max(self.norm_p + self.norm_h * beta, 1e-12)

        if xi0 is not None:
            zh = np.asarray(xi0[0], float) / self.dz
            wh = np.asarray(xi0[1], float) / self.dw if m else np.zeros(0)
        else:
            zh = np.zeros(n)
            wh = np.zeros(m)
        zh = np.clip(zh, self.loh, self.hih)

        best_res = np.inf
        best = (zh.copy(), wh.copy())

        def measure(zc, wc):
            nonlocal best_res, best
            res = self._residual_norm(q, b, self.dz * zc, self.dw * wc)
            if res < best_res:
                best_res = res
                best = (zc.copy(), wc.copy())
            return res

        def finish(zc, wc, res, its):
            z = self.dz * zc
            w = self.dw * wc
            lag = float(0.5 * z @ self.P @ z + q @ z + w @ (self.H @ z - b))
            return SaddlePoint(
                z_star=z, w_star=w, residual_norm=res, lagrangian=lag, iterations=its
            )

        # Entry check: warm starts are often already optimal, and a correct
        # clamp pattern lets the polish finish without any iterations.
        res = measure(zh, wh)
        if res <= tol:
            return finish(zh, wh, res, 0)
        zp, wp = self._polish(qh, bh, zh, wh)
        res = measure(zp, wp)
        if res <= tol:
            return finish(zp, wp, res, 0)

        it = 0
        checks = 0
        while it < max_iter:
            r = self.Hh @ zh - bh
            v = wh + beta * r
            grad = self.Ph @ zh + qh + self.HhT @ v
            zh = np.clip(zh - alpha * grad, self.loh, self.hih)
            wh = wh + beta * (self.Hh @ zh - bh)
            it += 1
            if it % _CHECK_EVERY == 0 or it == max_iter:
                checks += 1
                res = measure(zh, wh)
                if res <= tol:
                    return finish(zh, wh, res, it)
                if checks % _POLISH_EVERY_CHECKS == 1 or it == max_iter:
                    zp, wp = self._polish(qh, bh, zh, wh)
                    res = measure(zp, wp)
                    if res <= tol:
                        return finish(zp, wp, res, it)

        raise MaxIterationsError(
            f"residual {best_res:.3e} above tolerance {tol:.3e} "
            f"after {max_iter} iterations",
            best_residual=best_res,
            best_point=(self.dz * best[0], self.dw * best[1]),
        )


def solve_qp(
    qp: CompactQp,
    tol: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    xi0: tuple[np.ndarray, np.ndarray] | None = None,
    beta: float | None = None,
) -> SaddlePoint:
    """Solve a compact QP to the requested fixed-point residual.

    `tol` defaults to 1e-9 * (1 + |q|).  Raises `MaxIterationsError` when the
    budget runs out, which usually signals infeasibility or a tolerance below
    what the conditioning allows.
    """
    return Workspace(qp).solve(tol=tol, max_iter=max_iter, xi0=xi0, beta=beta)
