"""Command-line harness: closed-loop runs, the size table and the sampling oracle."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np


def _cmd_run(args) -> int:
    from .config import load_config
    from .harness import compute_metrics, run_closed_loop
    from .report import write_qp_dump, write_run_artifacts, write_sensitivity_dump

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, attack=dataclasses.replace(cfg.attack, seed=args.seed)
        )
    out_dir = Path(args.out if args.out is not None else cfg.run.out_dir)
    dump: dict | None = {} if (args.dump_qp or args.dump_sensitivity) else None
    result = run_closed_loop(cfg, diagnostics=dump)
    artifacts = write_run_artifacts(result, out_dir)
    if args.dump_qp and dump is not None and "qp" in dump:
        write_qp_dump(dump["qp"], out_dir / "qp_dump")
    if args.dump_sensitivity and dump is not None and "sensitivity" in dump:
        write_sensitivity_dump(dump["sensitivity"], out_dir / "sensitivity_dump")
    metrics = compute_metrics(result)
    print(f"wrote {', '.join(str(p) for p in artifacts.values())}")
    print(f"rms tracking error (overall): {metrics.rms_overall:.6g}")
    return 0


def _cmd_report_sizes(args) -> int:
    from .harness import format_size_table, report_lsq_sizes

    rows = report_lsq_sizes()
    print(format_size_table(rows))
    bad = [r for r in rows if r.formula != r.measured]
    if bad:
        print(f"error: formula/measured mismatch in {len(bad)} rows", file=sys.stderr)
        return 1
    return 0


def _cmd_oracle(args) -> int:
    import csv

    from .attack import AttackSpec, attack_oracle
    from .config import load_config
    from .harness import build_plant, masses_attack_instance, target_trajectory

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, attack=dataclasses.replace(cfg.attack, seed=args.seed)
        )
    if cfg.plant.kind != "oscillating_masses":
        print("error: the oracle command supports the built-in benchmark plant", file=sys.stderr)
        return 1
    inst = masses_attack_instance(data_seed=cfg.run.data_seed)
    plant, delta = build_plant(cfg)
    spec = AttackSpec(
        u_target=target_trajectory(cfg, inst.step, cfg.dpc.ell, plant.n_u, delta),
        rho=cfg.attack.rho,
    )
    result = attack_oracle(
        inst.prob,
        spec,
        cfg.attack.oracle_samples,
        cfg.attack.seed,
        qp=inst.qp,
        workspace=inst.workspace,
    )
    out_dir = Path(args.out if args.out is not None else cfg.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / "oracle_samples.csv"
    with open(samples_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "psi"])
        for i, v in enumerate(result.sample_values):
            writer.writerow([i, repr(float(v))])
    summary_path = out_dir / "oracle_summary.txt"
    lines = [
        f"samples: {result.sample_values.size}  failed: {result.n_failed}",
        f"psi nominal:    {result.psi_nominal!r}",
        f"psi algorithm1: {result.psi_algorithm!r}",
        f"psi best:       {result.best_value!r}",
        f"algorithm1 beats {float(np.mean(result.psi_algorithm <= result.sample_values)) * 100:.1f}%"
        " of sampled perturbations",
    ]
    summary_path.write_text("\n".join(lines) + "\n")
    print(f"wrote {samples_path}, {summary_path}")
    print(lines[-1])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpcpoison",
        description="Data-driven predictive control under data-poisoning attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a closed-loop experiment from a config file")
    p_run.add_argument("config", help="path to the YAML experiment configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override the attack seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument(
        "--dump-qp", action="store_true", help="dump the first assembled QP as CSV files"
    )
    p_run.add_argument(
        "--dump-sensitivity",
        action="store_true",
        help="dump the first replan's sensitivity operators and adjoint (algorithm1 mode)",
    )
    p_run.set_defaults(func=_cmd_run)

    p_sizes = sub.add_parser(
        "report-sizes", help="print the adjoint least-squares size table"
    )
    p_sizes.set_defaults(func=_cmd_report_sizes)

    p_oracle = sub.add_parser(
        "oracle", help="run the sphere-sampling attack oracle on the benchmark instance"
    )
    p_oracle.add_argument("config", help="path to the YAML experiment configuration")
    p_oracle.add_argument("--seed", type=int, default=None, help="override the attack seed")
    p_oracle.add_argument("--out", default=None, help="override the output directory")
    p_oracle.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one diagnostic line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
