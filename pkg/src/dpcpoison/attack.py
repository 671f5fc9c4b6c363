"""Poisoning attacks on the controller's online output window.

The attacker adds a perturbation p (norm-capped at a fraction rho of the
window magnitude) to the controller's copy of the recent outputs, steering
the optimized input trajectory toward a target of its choosing.  The
implicit-differentiation attack solves the nominal QP once, forms the
sensitivity operators, solves one adjoint least-squares problem and takes
the best perturbation of the resulting linear model over the norm ball.
A random-direction perturbation of the same norm serves as the baseline,
and a sphere-sampling search provides a brute-force reference at small
problem sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deepc import DpcProblem, assemble_compact
from .sensitivity import assemble_sensitivity, solve_adjoint
from .solver import MaxIterationsError, SaddlePoint, Workspace


@dataclass(frozen=True)
class AttackSpec:
    """Attacker target trajectory and perturbation-to-data ratio."""

    u_target: np.ndarray
    rho: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"rho must be nonnegative, got {self.rho}")


@dataclass(frozen=True)
class Perturbation:
    """A perturbation of the output window with its provenance.

    `predicted_gain` is the linear-model decrease of the attacker objective
    (NaN when no model was evaluated, e.g. for random draws).
    """

    p: np.ndarray
    radius: float
    provenance: str
    predicted_gain: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.p))


def psi_gradient(spec: AttackSpec, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Attacker objective 1/2 |u - u_target|^2 and its gradient."""
    u = np.asarray(u, float)
    if u.shape != spec.u_target.shape:
        raise ValueError(
            f"u must have shape {spec.u_target.shape}, got {u.shape}"
        )
    diff = u - spec.u_target
    return 0.5 * float(diff @ diff), diff


def ball_lmo(c: np.ndarray, r: float) -> np.ndarray:
    """Minimizer of <c, z> over the Euclidean ball of radius r.

    Returns -r * c / |c|; the zero vector when c = 0 (any point of the ball
    is then optimal, and the zero perturbation is the minimal-effort one).
    """
    if r < 0:
        raise ValueError(f"radius must be nonnegative, got {r}")
    norm = np.linalg.norm(c)
    if norm == 0.0 or r == 0.0:
        return np.zeros_like(np.asarray(c, float))
    return -(r / norm) * np.asarray(c, float)


def attack_algorithm1(
    prob: DpcProblem,
    spec: AttackSpec,
    *,
    qp=None,
    workspace: Workspace | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    xi0: tuple[np.ndarray, np.ndarray] | None = None,
    details: dict | None = None,
) -> tuple[Perturbation, SaddlePoint]:
    """One-shot poisoning attack via implicit differentiation.

    Solves the unperturbed problem, differentiates its solution map,
    solves the adjoint least squares for the attacker gradient and returns
    the ball-constrained minimizer of the linearized objective.  The
    nominal saddle point is returned alongside for reuse (warm starts,
    objective bookkeeping).  `qp`/`workspace` allow callers that already
    assembled the compact problem to skip the rebuild; `details`, when
    given, receives the sensitivity operators and adjoint for inspection.
    """
    if qp is None:
        qp = assemble_compact(prob)
    ws = workspace if workspace is not None else Workspace(qp)
    kwargs = {} if max_iter is None else {"max_iter": max_iter}
    sp = ws.solve(q=qp.q, b=qp.b, tol=tol, xi0=xi0, **kwargs)
    ops = assemble_sensitivity(qp, sp)
    u_star = sp.z_star[qp.u_slice]
    _, grad = psi_gradient(spec, u_star)
    adj = solve_adjoint(ops, grad)
    c = ops.K.T @ adj.eta
    radius = spec.rho * float(np.linalg.norm(prob.y_ini))
    p = ball_lmo(c, radius)
    pert = Perturbation(
        p=p,
        radius=radius,
        provenance="algorithm1",
        predicted_gain=-float(c @ p) + 0.0,  # normalize -0.0
    )
    if details is not None:
        details["operators"] = ops
        details["adjoint"] = adj
    return pert, sp


def attack_random(prob: DpcProblem, rho: float, seed: int) -> Perturbation:
    """Norm-matched baseline: a uniformly random direction on the same sphere."""
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    rng = np.random.default_rng(seed)
    dim = prob.y_ini.shape[0]
    v = rng.standard_normal(dim)
    while not np.any(v):  # zero draw has probability zero but costs nothing to guard
        v = rng.standard_normal(dim)
    radius = rho * float(np.linalg.norm(prob.y_ini))
    p = (radius / np.linalg.norm(v)) * v
    return Perturbation(p=p, radius=radius, provenance="random", predicted_gain=np.nan)


@dataclass(frozen=True)
class OracleResult:
    """Outcome of the sphere-sampling search over the perturbation ball."""

    best: Perturbation
    best_value: float
    sample_values: np.ndarray
    sample_perturbations: np.ndarray
    psi_nominal: float
    psi_algorithm: float
    n_failed: int


def attack_oracle(
    prob: DpcProblem,
    spec: AttackSpec,
    samples: int,
    seed: int,
    *,
    tol: float | None = None,
    qp=None,
    workspace: Workspace | None = None,
) -> OracleResult:
    """Brute-force reference: evaluate the true attacked objective on sampled perturbations.

    Solves the perturbed problem for `samples` uniform points on the
    radius-rho*|y_ini| sphere plus the zero perturbation and the
    implicit-differentiation candidate, and returns the best.  Samples
    whose solve fails are dropped (counted in `n_failed`).
    """
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    qp0 = assemble_compact(prob) if qp is None else qp
    ws = workspace if workspace is not None else Workspace(qp0)
    pert_alg, sp0 = attack_algorithm1(prob, spec, qp=qp0, workspace=ws, tol=tol)
    psi_nominal, _ = psi_gradient(spec, sp0.z_star[qp0.u_slice])
    warm = (sp0.z_star, sp0.w_star)

    radius = spec.rho * float(np.linalg.norm(prob.y_ini))
    rng = np.random.default_rng(seed)

    def evaluate(p: np.ndarray) -> float:
        qp = qp0.perturbed(p)
        sp = ws.solve(q=qp.q, b=qp.b, tol=tol, xi0=warm)
        value, _ = psi_gradient(spec, sp.z_star[qp.u_slice])
        return value

    psi_algorithm = evaluate(pert_alg.p)
    best_p, best_value = np.zeros_like(prob.y_ini), psi_nominal
    if psi_algorithm < best_value:
        best_p, best_value = pert_alg.p, psi_algorithm

    values = []
    kept = []
    n_failed = 0
    for _ in range(samples):
        v = rng.standard_normal(prob.y_ini.shape[0])
        while not np.any(v):
            v = rng.standard_normal(prob.y_ini.shape[0])
        p = (radius / np.linalg.norm(v)) * v
        try:
            value = evaluate(p)
        except MaxIterationsError:
            n_failed += 1
            continue
        values.append(value)
        kept.append(p)
        if value < best_value:
            best_p, best_value = p, value

    best = Perturbation(
        p=best_p, radius=radius, provenance="oracle", predicted_gain=np.nan
    )
    return OracleResult(
        best=best,
        best_value=best_value,
        sample_values=np.asarray(values),
        sample_perturbations=(
            np.asarray(kept) if kept else np.zeros((0, prob.y_ini.shape[0]))
        ),
        psi_nominal=psi_nominal,
        psi_algorithm=psi_algorithm,
        n_failed=n_failed,
    )
