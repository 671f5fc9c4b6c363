"""Ground-truth LTI plant: discretization, simulation, offline data and Hankel blocks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ContinuousLti:
    """Continuous-time linear system dx/dt = A x + B u, y = C x, sampled every `delta` seconds."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, "B"))
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")
        if not self.delta > 0:
            raise ValueError(f"sampling period must be positive, got {self.delta}")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class DiscreteLti:
    """Discrete-time linear system x+ = Ad x + Bd u, y = C x."""

    Ad: np.ndarray
    Bd: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Ad", _as_matrix(self.Ad, "Ad"))
        object.__setattr__(self, "Bd", _as_matrix(self.Bd, "Bd"))
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        n = self.Ad.shape[0]
        if self.Ad.shape != (n, n):
            raise ValueError(f"Ad must be square, got shape {self.Ad.shape}")
        if self.Bd.shape[0] != n:
            raise ValueError(f"Bd has {self.Bd.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n}")

    @property
    def n_x(self) -> int:
        return self.Ad.shape[0]

    @property
    def n_u(self) -> int:
        return self.Bd.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class IoLog:
    """Paired input/output record: `inputs` is (T, n_u), `outputs` is (T, n_y)."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if u.shape[0] != y.shape[0]:
            raise ValueError(
                f"inputs and outputs must have equal length, got {u.shape[0]} and {y.shape[0]}"
            )
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class HankelPair:
    """Block-Hankel matrices of an input/output record.

    `U` is (ell+sigma)*n_u x n_g and `Y` is (ell+sigma)*n_y x n_g; column j stacks
    the signal windows starting at sample j.  The past/future splits take the
    first `sigma` block rows as U_p/Y_p and the remaining `ell` as U_f/Y_f.
    """

    U: np.ndarray
    Y: np.ndarray
    sigma: int
    ell: int

    def __post_init__(self):
        if self.sigma < 1 or self.ell < 1:
            raise ValueError("sigma and ell must be positive")
        depth = self.sigma + self.ell
        if self.U.shape[0] % depth or self.Y.shape[0] % depth:
            raise ValueError("Hankel row counts must be multiples of sigma + ell")
        if self.U.shape[1] != self.Y.shape[1]:
            raise ValueError("U and Y must have the same number of columns")

    @property
    def n_u(self) -> int:
        return self.U.shape[0] // (self.sigma + self.ell)

    @property
    def n_y(self) -> int:
        return self.Y.shape[0] // (self.sigma + self.ell)

    @property
    def n_g(self) -> int:
        return self.U.shape[1]

    @property
    def U_p(self) -> np.ndarray:
        return self.U[: self.sigma * self.n_u]

    @property
    def U_f(self) -> np.ndarray:
        return self.U[self.sigma * self.n_u :]

    @property
    def Y_p(self) -> np.ndarray:
        return self.Y[: self.sigma * self.n_y]

    @property
    def Y_f(self) -> np.ndarray:
        return self.Y[self.sigma * self.n_y :]


def oscillating_masses(delta: float = 0.1) -> ContinuousLti:
    """Two unit masses coupled by unit springs, force inputs on both, full state output."""
    A = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-2.0, 1.0, 0.0, 0.0],
            [1.0, -2.0, 0.0, 0.0],
        ]
    )
    B = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return ContinuousLti(A=A, B=B, C=np.eye(4), delta=delta)


def discretize(sys: ContinuousLti) -> DiscreteLti:
    """Exact zero-order-hold discretization.

    Computes both Ad = exp(delta*A) and Bd = (int_0^delta exp(sA) ds) B from a
    single exponential of the augmented matrix [[A, B], [0, 0]], which avoids
    requiring A to be invertible.
    """
    n, k = sys.n_x, sys.n_u
    aug = np.zeros((n + k, n + k))
    aug[:n, :n] = sys.A
    aug[:n, n:] = sys.B
    phi = expm(sys.delta * aug)
    return DiscreteLti(Ad=phi[:n, :n], Bd=phi[:n, n:], C=sys.C.copy())


def simulate(sys: DiscreteLti, x0: np.ndarray, inputs: np.ndarray) -> IoLog:
    """Roll the plant forward, pairing each applied u_k with the output y_k = C x_k."""
    x = np.asarray(x0, dtype=float).reshape(sys.n_x)
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u.shape[1] != sys.n_u:
        raise ValueError(f"inputs have {u.shape[1]} channels, expected {sys.n_u}")
    T = u.shape[0]
    y = np.empty((T, sys.n_y))
    for k in range(T):
        y[k] = sys.C @ x
        x = sys.Ad @ x + sys.Bd @ u[k]
    return IoLog(inputs=u.copy(), outputs=y)


def collect_excitation(
    sys: DiscreteLti, T: int, seed: int, amplitude: float = 1.0
) -> IoLog:
    """Offline experiment: i.i.d. uniform inputs on [-amplitude, amplitude] from rest."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-amplitude, amplitude, size=(T, sys.n_u))
    return simulate(sys, np.zeros(sys.n_x), u)


def build_hankel(log: IoLog, sigma: int, ell: int) -> HankelPair:
    """Stack overlapping signal windows of depth sigma + ell into Hankel columns."""
    depth = sigma + ell
    T = len(log)
    n_g = T - depth + 1
    if n_g < 1:
        raise ValueError(
            f"log of length {T} too short for Hankel depth {depth} (need T >= {depth})"
        )
    U = _hankel(log.inputs, depth, n_g)
    Y = _hankel(log.outputs, depth, n_g)
    return HankelPair(U=U, Y=Y, sigma=sigma, ell=ell)


def _hankel(signal: np.ndarray, depth: int, n_g: int) -> np.ndarray:
    nch = signal.shape[1]
    H = np.empty((depth * nch, n_g))
    for j in range(n_g):
        H[:, j] = signal[j : j + depth].ravel()
    return H


def excitation_stack_rank(hankel: HankelPair, rtol: float = 1e-9) -> tuple[int, int]:
    """Numerical rank of the stacked [U_p; Y_p; U_f] data against its row count."""
    S = np.vstack([hankel.U_p, hankel.Y_p, hankel.U_f])
    sv = np.linalg.svd(S, compute_uv=False)
    rank = int(np.sum(sv > rtol * sv[0])) if sv.size else 0
    return rank, S.shape[0]


def write_log_csv(log: IoLog, path) -> None:
    """Export a log as CSV with header k,u_1..u_nu,y_1..y_ny."""
    n_u = log.inputs.shape[1]
    n_y = log.outputs.shape[1]
    header = (
        ["k"]
        + [f"u_{i + 1}" for i in range(n_u)]
        + [f"y_{i + 1}" for i in range(n_y)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(log)):
            row = (
                [k]
                + [repr(float(v)) for v in log.inputs[k]]
                + [repr(float(v)) for v in log.outputs[k]]
            )
            writer.writerow(row)


def read_log_csv(path) -> IoLog:
    """Load a log written by `write_log_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_u = sum(1 for h in header if h.startswith("u_"))
        rows = [[float(v) for v in row[1:]] for row in reader]
    data = np.asarray(rows)
    return IoLog(inputs=data[:, :n_u], outputs=data[:, n_u:])
