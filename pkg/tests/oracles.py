"""Independent reference computations used to check the library's answers.

Everything here deliberately avoids the code paths under test: the matrix
exponential is a plain truncated Taylor series, the oscillation reference
is the closed-form modal solution, and the QP reference is an
interior-point solve of the original trajectory formulation through cvxpy.
"""

from __future__ import annotations

import numpy as np


def taylor_expm(A: np.ndarray, terms: int = 30) -> np.ndarray:
    """Truncated Taylor series for exp(A); accurate for the small norms used here."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


def taylor_discretize(A: np.ndarray, B: np.ndarray, delta: float, terms: int = 30):
    """(Ad, Bd) from the Taylor series of the augmented matrix exponential."""
    n, k = A.shape[0], B.shape[1]
    aug = np.zeros((n + k, n + k))
    aug[:n, :n] = A
    aug[:n, n:] = B
    phi = taylor_expm(delta * aug, terms)
    return phi[:n, :n], phi[:n, n:]


def masses_modal_free_response(x0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Closed-form free response of the two coupled unit masses.

    In normal coordinates s = x1 + x2 and d = x1 - x2 the system decouples
    into oscillators with angular frequencies 1 and sqrt(3).
    """
    s0, d0 = x0[0] + x0[1], x0[0] - x0[1]
    vs0, vd0 = x0[2] + x0[3], x0[2] - x0[3]
    w = np.sqrt(3.0)
    s = s0 * np.cos(times) + vs0 * np.sin(times)
    d = d0 * np.cos(w * times) + vd0 / w * np.sin(w * times)
    vs = -s0 * np.sin(times) + vs0 * np.cos(times)
    vd = -w * d0 * np.sin(w * times) + vd0 * np.cos(w * times)
    return np.stack([(s + d) / 2, (s - d) / 2, (vs + vd) / 2, (vs - vd) / 2], axis=1)


def masses_energy(x: np.ndarray) -> float:
    """Conserved energy of the free oscillating-masses system."""
    pos, vel = x[:2], x[2:]
    K = np.array([[2.0, -1.0], [-1.0, 2.0]])
    return 0.5 * float(vel @ vel) + 0.5 * float(pos @ K @ pos)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def cvxpy_objective(prob, p=None, solver: str = "CLARABEL") -> float:
    """Interior-point reference value of the trajectory optimization.

    Models the original sum-of-norms objective directly; the large
    window-mismatch weight is handled through a slack variable so the
    solver sees well-scaled data.  Returns the optimal value of the
    original objective (compare with `true_objective`).
    """
    import cvxpy as cp

    h = prob.hankel
    ell, sigma = h.ell, h.sigma
    lu, ly = ell * h.n_u, ell * h.n_y
    window = prob.y_ini if p is None else prob.y_ini + np.asarray(p, float)

    u = cp.Variable(lu)
    y = cp.Variable(ly)
    g = cp.Variable(h.n_g)
    s = cp.Variable(sigma * h.n_y)
    objective = (
        0.5 * cp.sum_squares(_psd_sqrt(prob.Q) @ (y - prob.y_ref))
        + 0.5 * cp.sum_squares(_psd_sqrt(prob.R) @ (u - prob.u_ref))
        + prob.lambda_g * cp.sum_squares(prob.M @ g)
        + cp.sum_squares(s)
    )
    constraints = [
        s == np.sqrt(prob.lambda_s) * (h.Y_p @ g - window),
        h.U_p @ g == prob.u_ini,
        u == h.U_f @ g,
        y == h.Y_f @ g,
        u >= prob.u_lo,
        u <= prob.u_hi,
        y >= prob.y_lo,
        y <= prob.y_hi,
    ]
    problem = cp.Problem(cp.Minimize(objective), constraints)
    return float(problem.solve(solver=solver))


def true_objective(prob, z: np.ndarray, qp, p=None) -> float:
    """The original trajectory objective evaluated at a compact-form point."""
    window = prob.y_ini if p is None else prob.y_ini + np.asarray(p, float)
    u = z[qp.u_slice]
    y = z[qp.y_slice]
    g = z[qp.g_slice]
    return (
        0.5 * float((y - prob.y_ref) @ prob.Q @ (y - prob.y_ref))
        + 0.5 * float((u - prob.u_ref) @ prob.R @ (u - prob.u_ref))
        + prob.lambda_g * float(np.sum((prob.M @ g) ** 2))
        + prob.lambda_s * float(np.sum((prob.hankel.Y_p @ g - window) ** 2))
    )
