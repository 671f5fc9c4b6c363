"""Closed-loop experiment execution and reporting.

Runs the plant under receding-horizon data-driven control, optionally
poisoning the controller's output window at every replanning instant, and
collects per-step traces plus per-replan attack diagnostics.  Perturbations
only ever touch the controller's copy of the window; the plant evolves from
the true applied inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .attack import (
    AttackSpec,
    Perturbation,
    attack_algorithm1,
    attack_oracle,
    attack_random,
    psi_gradient,
)
from .config import ExperimentConfig, ValidationError
from .deepc import CompactQp, DpcProblem, assemble_compact, build_problem, compute_regularizer
from .plant import (
    ContinuousLti,
    DiscreteLti,
    IoLog,
    build_hankel,
    collect_excitation,
    discretize,
    excitation_stack_rank,
    oscillating_masses,
)
from .sensitivity import SaddlePoint, assemble_sensitivity, solve_adjoint
from .solver import Workspace

#: Least-squares size table geometries: (n_u, n_y, sigma, ell, n_g).
SIZE_TABLE_GEOMETRIES = (
    (2, 4, 6, 25, 500),
    (2, 4, 6, 50, 500),
    (2, 4, 6, 100, 500),
    (3, 6, 6, 25, 500),
    (3, 6, 6, 50, 500),
    (3, 6, 6, 100, 500),
)


@dataclass(frozen=True)
class ReplanRecord:
    """Diagnostics of one replanning instant."""

    step: int
    perturbation: Perturbation
    psi_nominal: float
    psi_attacked: float
    iterations: int
    residual_norm: float


@dataclass
class RunResult:
    """Per-step closed-loop trace plus per-replan records."""

    k: np.ndarray
    u: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    pnorm: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    replans: list[ReplanRecord]
    config: ExperimentConfig


@dataclass(frozen=True)
class Metrics:
    """Tracking-error summary over a step window."""

    rms: np.ndarray
    peak: np.ndarray
    rms_overall: float
    window: tuple[int, int]


def build_plant(cfg: ExperimentConfig) -> tuple[DiscreteLti, float]:
    """Discrete plant and sampling period from the configured description."""
    p = cfg.plant
    if p.kind == "oscillating_masses":
        return discretize(oscillating_masses(p.delta)), p.delta
    if p.kind == "continuous":
        sys_c = ContinuousLti(
            A=np.asarray(p.A, float),
            B=np.asarray(p.B, float),
            C=np.asarray(p.C, float),
            delta=p.delta,
        )
        return discretize(sys_c), p.delta
    return (
        DiscreteLti(
            Ad=np.asarray(p.Ad, float),
            Bd=np.asarray(p.Bd, float),
            C=np.asarray(p.C, float),
        ),
        p.delta,
    )


def _setpoint_references(cfg: ExperimentConfig, plant: DiscreteLti):
    """Per-step output reference and the input holding it, for the setpoint mode.

    The equilibrium input is computed from the plant, not assumed: the pair
    must satisfy x = Ad x + Bd u with C x matching the requested set-point.
    """
    y_sp = cfg.reference.y_setpoint
    if y_sp is None:
        if cfg.plant.kind != "oscillating_masses":
            raise ValidationError("reference.y_setpoint", "required for this plant")
        y_sp = [1.0, 1.0, 0.0, 0.0]
    y_sp = np.asarray(y_sp, float)
    if y_sp.shape != (plant.n_y,):
        raise ValidationError(
            "reference.y_setpoint", f"must have {plant.n_y} entries, got {y_sp.shape}"
        )
    x_sp, *_ = np.linalg.lstsq(plant.C, y_sp, rcond=None)
    if not np.allclose(plant.C @ x_sp, y_sp, atol=1e-8):
        raise ValidationError("reference.y_setpoint", "not reachable through the output map")
    u_eq, *_ = np.linalg.lstsq(plant.Bd, (np.eye(plant.n_x) - plant.Ad) @ x_sp, rcond=None)
    if not np.allclose(plant.Bd @ u_eq, (np.eye(plant.n_x) - plant.Ad) @ x_sp, atol=1e-8):
        raise ValidationError("reference.y_setpoint", "not an equilibrium of the plant")
    return (lambda k: y_sp), (lambda k: u_eq)


def make_references(cfg: ExperimentConfig, plant: DiscreteLti, delta: float):
    """Per-step reference generators (y_ref(k), u_ref(k))."""
    r = cfg.reference
    if r.kind == "setpoint":
        return _setpoint_references(cfg, plant)
    amp, omega, phase = r.amplitude, r.omega, r.phase

    def y_at(k: int) -> np.ndarray:
        return np.full(plant.n_y, amp * np.sin(omega * k * delta + phase))

    return y_at, (lambda k: np.zeros(plant.n_u))


def target_trajectory(cfg: ExperimentConfig, k: int, ell: int, n_u: int, delta: float) -> np.ndarray:
    """Attacker's desired input over the horizon starting at step k."""
    t = cfg.attack.u_target
    if t.kind == "constant":
        value = np.zeros(n_u) if t.value is None else np.asarray(t.value, float)
        if value.shape != (n_u,):
            raise ValidationError(
                "attack.u_target.value", f"must have {n_u} entries, got {value.shape}"
            )
        return np.tile(value, ell)
    times = (k + np.arange(ell)) * delta
    wave = t.amplitude * np.sin(t.omega * times + t.phase)
    return np.repeat(wave, n_u)


def offline_hankel(cfg: ExperimentConfig, plant: DiscreteLti):
    """Excitation experiment and Hankel construction for the configured geometry."""
    d = cfg.dpc
    T = cfg.run.data_length
    if T is None:
        T = d.n_g + d.ell + d.sigma - 1
    log = collect_excitation(plant, T, seed=cfg.run.data_seed, amplitude=cfg.run.excitation_amplitude)
    hankel = build_hankel(log, d.sigma, d.ell)
    if hankel.n_g != d.n_g:
        raise ValidationError("dpc.n_g", f"data of length {T} yields n_g={hankel.n_g}")
    rank, rows = excitation_stack_rank(hankel)
    # Exact LTI data caps the stack rank at (sigma+ell)*n_u + n_x, well below the
    # row count; warn only when the data falls short of that structural bound.
    richness = min(rows, (d.sigma + d.ell) * plant.n_u + plant.n_x)
    if rank < richness:
        warnings.warn(
            f"offline data stack rank {rank} below the persistency bound {richness}; "
            "consider longer or stronger excitation",
            stacklevel=2,
        )
    return log, hankel


def _problem_weights(cfg: ExperimentConfig, plant: DiscreteLti):
    q_w = cfg.dpc.q_weights
    r_w = cfg.dpc.r_weights
    q_w = np.full(plant.n_y, 10.0) if q_w is None else np.asarray(q_w, float)
    r_w = np.ones(plant.n_u) if r_w is None else np.asarray(r_w, float)
    if q_w.shape != (plant.n_y,):
        raise ValidationError("dpc.q_weights", f"must have {plant.n_y} entries")
    if r_w.shape != (plant.n_u,):
        raise ValidationError("dpc.r_weights", f"must have {plant.n_u} entries")
    return q_w, r_w


def run_closed_loop(cfg: ExperimentConfig, diagnostics: dict | None = None) -> RunResult:
    """Execute the configured closed-loop experiment.

    At every replanning instant the controller forms its window from the
    true last sigma input/output pairs, optionally perturbs the output part
    according to the attack mode, solves the trajectory optimization and
    applies the first `replan_interval` planned inputs open loop.

    `diagnostics`, when given, receives the first replan's assembled
    problem under "qp" and, in algorithm1 mode, its sensitivity operators
    and adjoint under "sensitivity" (dump hooks for the CLI).
    """
    plant, delta = build_plant(cfg)
    d, r = cfg.dpc, cfg.run
    y_ref_at, u_ref_at = make_references(cfg, plant, delta)
    _, hankel = offline_hankel(cfg, plant)
    M = compute_regularizer(hankel)
    q_w, r_w = _problem_weights(cfg, plant)

    x0 = np.zeros(plant.n_x) if r.x0 is None else np.asarray(r.x0, float)
    if x0.shape != (plant.n_x,):
        raise ValidationError("run.x0", f"must have {plant.n_x} entries")

    total, N, sigma, ell = r.total_steps, r.replan_interval, d.sigma, d.ell
    rng_attack = np.random.default_rng(cfg.attack.seed)

    us = np.zeros((total, plant.n_u))
    ys = np.zeros((total, plant.n_y))
    yr = np.zeros((total, plant.n_y))
    pnorm = np.zeros(total)
    iters = np.zeros(total, dtype=int)
    resid = np.full(total, np.nan)
    replans: list[ReplanRecord] = []

    x = x0.copy()
    for k in range(sigma):  # warmup: zero input from the initial state
        ys[k] = plant.C @ x
        yr[k] = y_ref_at(k)
        x = plant.Ad @ x + plant.Bd @ us[k]

    workspace: Workspace | None = None
    warm: tuple[np.ndarray, np.ndarray] | None = None

    k = sigma
    while k < total:
        u_ini = us[k - sigma : k].ravel()
        y_ini = ys[k - sigma : k].ravel()
        y_ref_h = np.concatenate([y_ref_at(k + i) for i in range(ell)])
        u_ref_h = np.concatenate([u_ref_at(k + i) for i in range(ell)])
        prob = build_problem(
            hankel,
            q_weights=q_w,
            r_weights=r_w,
            lambda_g=d.lambda_g,
            lambda_s=d.lambda_s,
            y_ref=y_ref_h,
            u_ref=u_ref_h,
            u_bounds=tuple(d.u_bounds),
            y_bounds=tuple(d.y_bounds),
            u_ini=u_ini,
            y_ini=y_ini,
            M=M,
        )
        qp = assemble_compact(prob)
        if workspace is None:
            workspace = Workspace(qp)
            if diagnostics is not None:
                diagnostics["qp"] = qp
        spec = AttackSpec(
            u_target=target_trajectory(cfg, k, ell, plant.n_u, delta), rho=cfg.attack.rho
        )
        seed_k = int(rng_attack.integers(2**63))

        solve_kwargs = dict(tol=r.solver_tol, max_iter=r.max_iter)
        if cfg.attack.mode == "algorithm1":
            details = None
            if diagnostics is not None and "sensitivity" not in diagnostics:
                details = {}
            pert, sp_nom = attack_algorithm1(
                prob, spec, qp=qp, workspace=workspace, xi0=warm, details=details, **solve_kwargs
            )
            if details is not None:
                diagnostics["sensitivity"] = details
        elif cfg.attack.mode == "oracle":
            oracle = attack_oracle(
                prob,
                spec,
                cfg.attack.oracle_samples,
                seed_k,
                tol=r.solver_tol,
                qp=qp,
                workspace=workspace,
            )
            pert = oracle.best
            sp_nom = workspace.solve(q=qp.q, b=qp.b, xi0=warm, **solve_kwargs)
        elif cfg.attack.mode == "random":
            pert = attack_random(prob, cfg.attack.rho, seed_k)
            sp_nom = workspace.solve(q=qp.q, b=qp.b, xi0=warm, **solve_kwargs)
        else:
            pert = Perturbation(
                p=np.zeros(sigma * plant.n_y), radius=0.0, provenance="zero", predicted_gain=np.nan
            )
            sp_nom = workspace.solve(q=qp.q, b=qp.b, xi0=warm, **solve_kwargs)

        psi_nominal, _ = psi_gradient(spec, sp_nom.z_star[qp.u_slice])
        if pert.norm > 0:
            qp_att = qp.perturbed(pert.p)
            sp_att = workspace.solve(
                q=qp_att.q, b=qp_att.b, xi0=(sp_nom.z_star, sp_nom.w_star), **solve_kwargs
            )
        else:
            sp_att = sp_nom
        psi_attacked, _ = psi_gradient(spec, sp_att.z_star[qp.u_slice])
        replans.append(
            ReplanRecord(
                step=k,
                perturbation=pert,
                psi_nominal=psi_nominal,
                psi_attacked=psi_attacked,
                iterations=sp_att.iterations,
                residual_norm=sp_att.residual_norm,
            )
        )
        warm = (sp_att.z_star, sp_att.w_star)

        u_plan = sp_att.z_star[qp.u_slice].reshape(ell, plant.n_u)
        n_apply = min(N, total - k)
        for i in range(n_apply):
            us[k + i] = u_plan[i]
            ys[k + i] = plant.C @ x
            yr[k + i] = y_ref_at(k + i)
            pnorm[k + i] = pert.norm
            iters[k + i] = sp_att.iterations
            resid[k + i] = sp_att.residual_norm
            x = plant.Ad @ x + plant.Bd @ u_plan[i]
        k += n_apply

    return RunResult(
        k=np.arange(total),
        u=us,
        y=ys,
        y_ref=yr,
        pnorm=pnorm,
        iterations=iters,
        residual=resid,
        replans=replans,
        config=cfg,
    )


def compute_metrics(result: RunResult, window: tuple[int, int] | None = None) -> Metrics:
    """Per-channel RMS and peak tracking error over a step window.

    The window defaults to everything after the warmup phase.
    """
    total = result.k.shape[0]
    if window is None:
        window = (result.config.dpc.sigma, total)
    lo, hi = window
    if not 0 <= lo < hi <= total:
        raise ValueError(f"window {window} outside the run of length {total}")
    err = result.y[lo:hi] - result.y_ref[lo:hi]
    rms = np.sqrt(np.mean(err**2, axis=0))
    peak = np.abs(err).max(axis=0)
    return Metrics(
        rms=rms,
        peak=peak,
        rms_overall=float(np.sqrt(np.mean(err**2))),
        window=(lo, hi),
    )


def paired_rms_ratio(
    attacked: RunResult, baseline: RunResult, window: tuple[int, int] | None = None
) -> float:
    """Overall tracking-error RMS ratio between two paired runs."""
    return compute_metrics(attacked, window).rms_overall / compute_metrics(
        baseline, window
    ).rms_overall


@dataclass(frozen=True)
class SizeRow:
    """One geometry of the adjoint-system size table."""

    n_u: int
    n_y: int
    sigma: int
    ell: int
    n_g: int
    formula: int
    measured: int


def adjoint_dimension_formula(n_u: int, n_y: int, sigma: int, ell: int, n_g: int) -> int:
    """Number of equations in the optimality system: 2*ell*(n_u+n_y) + sigma*n_u + n_g."""
    return 2 * ell * (n_u + n_y) + sigma * n_u + n_g


def _measured_adjoint_dimension(n_u: int, n_y: int, sigma: int, ell: int, n_g: int) -> int:
    """Assemble a zero-data instance of the geometry and read the adjoint size off it."""
    T = n_g + ell + sigma - 1
    log = IoLog(inputs=np.zeros((T, n_u)), outputs=np.zeros((T, n_y)))
    hankel = build_hankel(log, sigma, ell)
    prob = build_problem(
        hankel,
        q_weights=np.ones(n_y),
        r_weights=np.ones(n_u),
        lambda_g=1.0,
        lambda_s=1.0,
        y_ref=np.zeros(ell * n_y),
        u_ref=np.zeros(ell * n_u),
        u_bounds=(-1.0, 1.0),
        y_bounds=(-1.0, 1.0),
        u_ini=np.zeros(sigma * n_u),
        y_ini=np.zeros(sigma * n_y),
        M=np.eye(n_g),  # zero data: the stack is zero and its projector is the identity
    )
    qp = assemble_compact(prob)
    sp = SaddlePoint(
        z_star=np.zeros(qp.n),
        w_star=np.zeros(qp.m),
        residual_norm=0.0,
        lagrangian=0.0,
        iterations=0,
    )
    ops = assemble_sensitivity(qp, sp)
    adj = solve_adjoint(ops, np.zeros(ell * n_u))
    return adj.lsq_dimension


def report_lsq_sizes(geometries=SIZE_TABLE_GEOMETRIES) -> list[SizeRow]:
    """Formula and runtime-measured adjoint system sizes for each geometry."""
    rows = []
    for n_u, n_y, sigma, ell, n_g in geometries:
        rows.append(
            SizeRow(
                n_u=n_u,
                n_y=n_y,
                sigma=sigma,
                ell=ell,
                n_g=n_g,
                formula=adjoint_dimension_formula(n_u, n_y, sigma, ell, n_g),
                measured=_measured_adjoint_dimension(n_u, n_y, sigma, ell, n_g),
            )
        )
    return rows


def format_size_table(rows: list[SizeRow]) -> str:
    header = f"{'n_u':>4} {'n_y':>4} {'sigma':>6} {'ell':>5} {'n_g':>5} {'formula':>8} {'measured':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.n_u:>4} {r.n_y:>4} {r.sigma:>6} {r.ell:>5} {r.n_g:>5} {r.formula:>8} {r.measured:>9}"
        )
    return "\n".join(lines)


@dataclass
class MassesInstance:
    """A frozen mid-transient snapshot of the benchmark loop, for analysis and tests."""

    prob: DpcProblem
    qp: CompactQp
    workspace: Workspace
    saddle: SaddlePoint
    step: int
    delta: float
    config: ExperimentConfig


def masses_attack_instance(
    data_seed: int = 0, replans: int = 2, total_hint: int | None = None
) -> MassesInstance:
    """Benchmark problem captured mid-transient, where inputs are mostly interior.

    Runs the nominal loop from rest for `replans` replanning intervals and
    freezes the problem at the next replanning instant.  Near the set-point
    the inputs pin to the box corner and the solution map loses input
    sensitivity, so attack analyses use this transient snapshot instead.
    """
    from .config import config_from_dict

    cfg = config_from_dict(
        {
            "run": {
                "total_steps": total_hint or 100,
                "data_seed": data_seed,
            }
        }
    )
    plant, delta = build_plant(cfg)
    y_ref_at, u_ref_at = make_references(cfg, plant, delta)
    _, hankel = offline_hankel(cfg, plant)
    M = compute_regularizer(hankel)
    q_w, r_w = _problem_weights(cfg, plant)
    d = cfg.dpc
    sigma, ell, N = d.sigma, d.ell, cfg.run.replan_interval

    def problem_at(k, us, ys):
        y_ref_h = np.concatenate([y_ref_at(k + i) for i in range(ell)])
        u_ref_h = np.concatenate([u_ref_at(k + i) for i in range(ell)])
        return build_problem(
            hankel,
            q_weights=q_w,
            r_weights=r_w,
            lambda_g=d.lambda_g,
            lambda_s=d.lambda_s,
            y_ref=y_ref_h,
            u_ref=u_ref_h,
            u_bounds=tuple(d.u_bounds),
            y_bounds=tuple(d.y_bounds),
            u_ini=np.concatenate(us[-sigma:]),
            y_ini=np.concatenate(ys[-sigma:]),
            M=M,
        )

    x = np.zeros(plant.n_x)
    us, ys = [], []
    for _ in range(sigma):
        ys.append(plant.C @ x)
        us.append(np.zeros(plant.n_u))
        x = plant.Ad @ x
    workspace = None
    warm = None
    k = sigma
    for _ in range(replans):
        prob = problem_at(k, us, ys)
        qp = assemble_compact(prob)
        if workspace is None:
            workspace = Workspace(qp)
        sp = workspace.solve(q=qp.q, b=qp.b, xi0=warm)
        warm = (sp.z_star, sp.w_star)
        u_plan = sp.z_star[qp.u_slice].reshape(ell, plant.n_u)
        for i in range(N):
            us.append(u_plan[i])
            x = plant.Ad @ x + plant.Bd @ u_plan[i]
            ys.append(plant.C @ x)
        k += N
    prob = problem_at(k, us, ys)
    qp = assemble_compact(prob)
    if workspace is None:
        workspace = Workspace(qp)
    sp = workspace.solve(q=qp.q, b=qp.b, xi0=warm)
    return MassesInstance(
        prob=prob,
        qp=qp,
        workspace=workspace,
        saddle=sp,
        step=k,
        delta=delta,
        config=cfg,
    )
