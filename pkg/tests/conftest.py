"""Shared fixtures: the benchmark plant, its data and the frozen attack instance."""

from __future__ import annotations

import numpy as np
import pytest

from dpcpoison import (
    build_hankel,
    collect_excitation,
    compute_regularizer,
    discretize,
    oscillating_masses,
)
from dpcpoison.deepc import assemble_compact
from dpcpoison.harness import masses_attack_instance, target_trajectory
from dpcpoison.solver import solve_qp


@pytest.fixture(scope="session")
def masses_plant():
    return discretize(oscillating_masses())


@pytest.fixture(scope="session")
def masses_hankel(masses_plant):
    sigma, ell, n_g = 6, 25, 500
    log = collect_excitation(masses_plant, n_g + ell + sigma - 1, seed=0)
    return build_hankel(log, sigma, ell)


@pytest.fixture(scope="session")
def masses_instance():
    """Mid-transient benchmark snapshot used by the attack and sensitivity tests."""
    return masses_attack_instance(data_seed=0, replans=2)


@pytest.fixture(scope="session")
def masses_target(masses_instance):
    inst = masses_instance
    return target_trajectory(
        inst.config, inst.step, inst.config.dpc.ell, 2, inst.delta
    )


def make_small_instance(seed: int, tol: float = 1e-12):
    """A small random trajectory QP with mixed active and inactive bounds.

    The Hankel blocks are synthetic random data (the QP structure does not
    require behavioral data); feasibility is guaranteed by centering the
    box on a feasible point.  Returns (prob, qp, saddle) or None when the
    solution lands within finite-difference range of a projection kink,
    so callers can skip to the next seed.
    """
    rng = np.random.default_rng(seed)
    n_u = n_y = 1
    sigma, ell = 2, 3
    n_g = int(rng.integers(8, 20))
    depth = sigma + ell
    U = rng.standard_normal((depth * n_u, n_g))
    Y = rng.standard_normal((depth * n_y, n_g))
    from dpcpoison.plant import HankelPair

    hankel = HankelPair(U=U, Y=Y, sigma=sigma, ell=ell)
    g0 = rng.standard_normal(n_g) * 0.3
    u0 = hankel.U_f @ g0
    y0 = hankel.Y_f @ g0
    lu, ly = ell * n_u, ell * n_y
    lo_gap = rng.uniform(0.05, 1.5, size=lu + ly)
    hi_gap = rng.uniform(0.05, 1.5, size=lu + ly)
    from dpcpoison.deepc import DpcProblem

    prob = DpcProblem(
        hankel=hankel,
        Q=np.diag(np.tile(rng.uniform(0.5, 3.0, n_y), ell)),
        R=np.diag(np.tile(rng.uniform(0.5, 3.0, n_u), ell)),
        lambda_g=float(rng.uniform(0.5, 2.0)),
        lambda_s=float(rng.uniform(0.5, 3.0)),
        M=compute_regularizer(hankel),
        y_ref=rng.standard_normal(ly),
        u_ref=rng.standard_normal(lu),
        u_lo=u0 - lo_gap[:lu],
        u_hi=u0 + hi_gap[:lu],
        y_lo=y0 - lo_gap[lu:],
        y_hi=y0 + hi_gap[lu:],
        u_ini=hankel.U_p @ g0,
        y_ini=rng.standard_normal(sigma * n_y) * 0.5,
    )
    qp = assemble_compact(prob)
    sp = solve_qp(qp, tol=tol)
    from dpcpoison.sensitivity import residual

    res = residual(qp, sp.z_star, sp.w_star)
    finite = np.isfinite(qp.lo) | np.isfinite(qp.hi)
    gap = np.minimum(np.abs(res.z_plus - qp.lo), np.abs(res.z_plus - qp.hi))
    if np.any(gap[finite] < 1e-4):  # too close to a projection kink for FD work
        return None
    return prob, qp, sp


def collect_small_instances(count: int, start_seed: int = 0, require_active=True):
    """Deterministically gather `count` kink-free small instances."""
    out = []
    seed = start_seed
    while len(out) < count:
        made = make_small_instance(seed)
        seed += 1
        if made is None:
            continue
        if require_active:
            _, qp, sp = made
            at_bound = (sp.z_star <= qp.lo) | (sp.z_star >= qp.hi)
            if not at_bound.any() or at_bound.all():
                continue
        out.append(made)
        if seed - start_seed > 50 * count:
            raise RuntimeError("could not gather enough usable instances")
    return out


@pytest.fixture(scope="session")
def small_instances():
    return collect_small_instances(6)
