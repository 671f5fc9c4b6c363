"""Run artifacts: delimited traces, summaries and rendered figures.

Every numeric output is CSV; figures are rendered straight to files next
to them (no interactive backend required).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import Metrics, RunResult, compute_metrics


def write_trace_csv(result: RunResult, path) -> None:
    """Per-step trace with header k,u_*,y_*,yref_*,pnorm,solver_iters,residual."""
    n_u = result.u.shape[1]
    n_y = result.y.shape[1]
    header = (
        ["k"]
        + [f"u_{i + 1}" for i in range(n_u)]
        + [f"y_{i + 1}" for i in range(n_y)]
        + [f"yref_{i + 1}" for i in range(n_y)]
        + ["pnorm", "solver_iters", "residual"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(result.k.shape[0]):
            row = (
                [int(result.k[i])]
                + [repr(float(v)) for v in result.u[i]]
                + [repr(float(v)) for v in result.y[i]]
                + [repr(float(v)) for v in result.y_ref[i]]
                + [repr(float(result.pnorm[i])), int(result.iterations[i]), repr(float(result.residual[i]))]
            )
            writer.writerow(row)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Load a trace written by `write_trace_csv` into column arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows)
    n_u = sum(1 for h in header if h.startswith("u_"))
    n_y = sum(1 for h in header if h.startswith("y_") and not h.startswith("yref"))
    out = {
        "k": data[:, 0].astype(int),
        "u": data[:, 1 : 1 + n_u],
        "y": data[:, 1 + n_u : 1 + n_u + n_y],
        "y_ref": data[:, 1 + n_u + n_y : 1 + n_u + 2 * n_y],
        "pnorm": data[:, 1 + n_u + 2 * n_y],
        "solver_iters": data[:, 2 + n_u + 2 * n_y].astype(int),
        "residual": data[:, 3 + n_u + 2 * n_y],
    }
    return out


def write_perturbations_csv(result: RunResult, path) -> None:
    """Per-replan perturbations: step,p_1..p_d,norm,provenance,predicted_gain."""
    if result.replans:
        dim = result.replans[0].perturbation.p.shape[0]
    else:
        dim = 0
    header = (
        ["step"]
        + [f"p_{i + 1}" for i in range(dim)]
        + ["norm", "provenance", "predicted_gain"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in result.replans:
            pert = rec.perturbation
            writer.writerow(
                [rec.step]
                + [repr(float(v)) for v in pert.p]
                + [repr(float(pert.norm)), pert.provenance, repr(float(pert.predicted_gain))]
            )


def write_summary(result: RunResult, metrics: Metrics, path) -> None:
    """Plain-text run summary; numbers are written at full precision."""
    cfg = result.config
    lines = [
        f"plant: {cfg.plant.kind}",
        f"attack mode: {cfg.attack.mode}  rho: {cfg.attack.rho!r}  seed: {cfg.attack.seed}",
        f"steps: {result.k.shape[0]}  replans: {len(result.replans)}"
        f"  interval: {cfg.run.replan_interval}",
        f"metric window: [{metrics.window[0]}, {metrics.window[1]})",
        f"rms_overall: {metrics.rms_overall!r}",
    ]
    for i, (rms, peak) in enumerate(zip(metrics.rms, metrics.peak)):
        lines.append(f"channel {i + 1}: rms {float(rms)!r} peak {float(peak)!r}")
    if result.replans:
        psi_nom = np.array([r.psi_nominal for r in result.replans])
        psi_att = np.array([r.psi_attacked for r in result.replans])
        lines.append(f"mean psi nominal: {float(psi_nom.mean())!r}")
        lines.append(f"mean psi attacked: {float(psi_att.mean())!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_qp_dump(qp, out_dir) -> None:
    """Flat CSV dump of the assembled problem data for offline inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in (
        ("P", qp.P),
        ("q", qp.q),
        ("H", qp.H),
        ("b", qp.b),
        ("box_lo", qp.lo),
        ("box_hi", qp.hi),
    ):
        np.savetxt(out / f"{name}.csv", np.atleast_1d(arr), delimiter=",")


def write_sensitivity_dump(details: dict, out_dir) -> None:
    """CSV dump of the attack's sensitivity operators and adjoint solution."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ops = details["operators"]
    adjoint = details["adjoint"]
    np.savetxt(out / "J.csv", ops.J, delimiter=",")
    np.savetxt(out / "K.csv", ops.K, delimiter=",")
    np.savetxt(out / "eta.csv", adjoint.eta, delimiter=",")
    (out / "adjoint_info.txt").write_text(
        f"lsq_dimension: {adjoint.lsq_dimension}\nlsq_residual: {adjoint.lsq_residual!r}\n"
    )


def render_figures(result: RunResult, out_dir) -> list[Path]:
    """Tracking-error and attacker-objective figures rendered to PNG files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    err = result.y - result.y_ref
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(err.shape[1]):
        lw = 1.8 if i == 0 else 1.0
        ax.plot(result.k, err[:, i], lw=lw, label=f"channel {i + 1}")
    ax.axvline(result.config.dpc.sigma, color="gray", ls=":", lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("tracking error")
    ax.set_title(f"tracking error ({result.config.attack.mode})")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = out / "tracking_error.png"
    fig.savefig(path, dpi=130)
    plt.close(fig)
    paths.append(path)

    if result.replans:
        steps = [r.step for r in result.replans]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(steps, [r.psi_nominal for r in result.replans], "o-", label="nominal")
        ax.plot(steps, [r.psi_attacked for r in result.replans], "s-", label="attacked")
        ax.set_xlabel("replanning step")
        ax.set_ylabel("attacker objective")
        ax.set_title("attacker objective per replan")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = out / "psi_trace.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths.append(path)
    return paths


def write_run_artifacts(result: RunResult, out_dir) -> dict[str, Path]:
    """Write the full artifact set for a run; returns the paths by kind."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = compute_metrics(result)
    artifacts = {
        "trace": out / "trace.csv",
        "perturbations": out / "perturbations.csv",
        "summary": out / "summary.txt",
    }
    write_trace_csv(result, artifacts["trace"])
    write_perturbations_csv(result, artifacts["perturbations"])
    write_summary(result, metrics, artifacts["summary"])
    for path in render_figures(result, out):
        artifacts[path.stem] = path
    return artifacts
