"""Synthetic systems with known Granger graphs, plus CSV ingestion.

Every generator returns a :class:`Dataset` whose ``truth`` is built from the
structure of the generating equations, with ``truth[u, v] = 1`` meaning the
past of series v drives series u.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .numcore import Rng


class GenerationError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


@dataclass
class Dataset:
    observations: np.ndarray
    truth: np.ndarray | None = None
    known_lag: int | None = None
    name: str = ""
    scale: tuple | None = field(default=None, repr=False)
    labels: list | None = field(default=None, repr=False)
    coefs: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        T, M = self.observations.shape
        if T < 1 or M < 1:
            raise ValueError("a dataset needs at least one row and one column")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=int)
            if self.truth.shape != (M, M):
                raise ValueError(f"truth must be {M}×{M}, got {self.truth.shape}")

    @property
    def n_series(self) -> int:
        return self.observations.shape[1]

    def __len__(self):
        return self.observations.shape[0]


# -- linear VAR ---------------------------------------------------------------


def simulate_var(coefs, T: int, noise: np.ndarray, burn_in: int = 0) -> np.ndarray:
    """x_t = Σ_k A_k x_{t−k} + ε_t from zero history; ``noise`` is (burn_in+T)×m."""
    coefs = [np.asarray(a, dtype=float) for a in coefs]
    lag = len(coefs)
    m = coefs[0].shape[0]
    n = burn_in + T
    x = np.zeros((n + lag, m))
    for t in range(n):
        acc = noise[t].copy()
        for k, a in enumerate(coefs, start=1):
            acc += a @ x[lag + t - k]
        x[lag + t] = acc
    return x[lag + burn_in:]


def companion_radius(coefs) -> float:
    lag = len(coefs)
    m = coefs[0].shape[0]
    comp = np.zeros((m * lag, m * lag))
    comp[:m] = np.hstack(coefs)
    comp[m:, :-m] = np.eye(m * (lag - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def gen_var(m: int = 10, lag: int = 3, T: int = 2048, density: float = 0.2,
            rng: Rng | None = None, radius: float = 0.95, burn_in: int = 100,
            max_tries: int = 50) -> Dataset:
    """Sparse stable VAR(lag) with unit Gaussian innovations.

    Every lag matrix shares one support: the diagonal plus off-diagonal
    entries kept with probability ``density``. Coefficients are uniform in
    ±[0.1, 0.5]; all matrices are shrunk together until the companion
    spectral radius is below ``radius``.
    """
    if m < 2 or T < 100:
        raise ValueError("gen_var needs m >= 2 and T >= 100")
    rng = rng if rng is not None else Rng(0)
    support = rng.uniform((m, m)) < density
    np.fill_diagonal(support, True)
    mags = 0.1 + 0.4 * rng.uniform((lag, m, m))
    signs = np.where(rng.uniform((lag, m, m)) < 0.5, -1.0, 1.0)
    coefs = [mags[k] * signs[k] * support for k in range(lag)]
    for _ in range(max_tries):
        if companion_radius(coefs) < radius:
            break
        coefs = [0.9 * a for a in coefs]
    else:
        raise GenerationError("could not rescale VAR coefficients to a stable system")
    noise = rng.normal((burn_in + T, m))
    x = simulate_var(coefs, T, noise, burn_in=burn_in)
    truth = (np.abs(sum(coefs)) > 0).astype(int)
    return Dataset(x, truth, lag, name=f"var{m}", coefs=coefs)


# -- coupled Hénon maps ---------------------------------------------------------


def henon_step(prev: np.ndarray, cur: np.ndarray, e: float) -> np.ndarray:
    """x¹ ← 1.4 − (x¹)² + 0.3·x¹_prev;  xᵖ ← 1.4 − (e·xᵖ⁻¹ + (1−e)·xᵖ)² + 0.3·xᵖ_prev."""
    drive = cur.copy()
    drive[1:] = e * cur[:-1] + (1.0 - e) * cur[1:]
    return 1.4 - drive ** 2 + 0.3 * prev


def simulate_henon(x0: np.ndarray, x1: np.ndarray, steps: int, e: float = 0.3) -> np.ndarray:
    """Trajectory (steps+2)×k including the two initial states."""
    out = np.empty((steps + 2, len(x0)))
    out[0], out[1] = x0, x1
    for t in range(steps):
        out[t + 2] = henon_step(out[t], out[t + 1], e)
    return out


def gen_henon(k: int = 6, T: int = 2048, e: float = 0.3, rng: Rng | None = None,
              burn_in: int = 500, max_tries: int = 20) -> Dataset:
    if k < 2:
        raise ValueError("gen_henon needs k >= 2")
    rng = rng if rng is not None else Rng(0)
    for _ in range(max_tries):
        init = 0.1 * rng.uniform((2, k))
        with np.errstate(over="ignore", invalid="ignore"):
            traj = simulate_henon(init[0], init[1], burn_in + T - 2, e)
        if np.all(np.isfinite(traj)) and np.max(np.abs(traj)) < 1e6:
            break
    else:
        raise GenerationError("Hénon system diverged on every retry")
    truth = np.eye(k, dtype=int)
    truth[np.arange(1, k), np.arange(k - 1)] = 1
    return Dataset(traj[burn_in:], truth, 2, name=f"henon{k}")


# -- Lorenz-96 -------------------------------------------------------------------


def lorenz96_derivative(x: np.ndarray, F: float) -> np.ndarray:
    """dxⁱ/dt = (xⁱ⁺¹ − xⁱ⁻²)·xⁱ⁻¹ − xⁱ + F with cyclic indices."""
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + F


def rk4_step(x: np.ndarray, dt: float, F: float) -> np.ndarray:
    k1 = lorenz96_derivative(x, F)
    k2 = lorenz96_derivative(x + 0.5 * dt * k1, F)
    k3 = lorenz96_derivative(x + 0.5 * dt * k2, F)
    k4 = lorenz96_derivative(x + dt * k3, F)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def lorenz96_truth(p: int) -> np.ndarray:
    truth = np.zeros((p, p), dtype=int)
    for i in range(p):
        for off in (-2, -1, 0, 1):
            truth[i, (i + off) % p] = 1
    return truth


def gen_lorenz96(p: int = 10, T: int = 2048, F: float = 10.0, dt: float = 0.05,
                 rng: Rng | None = None, burn_in: int = 1000) -> Dataset:
    if p < 4:
        raise ValueError("gen_lorenz96 needs p >= 4")
    rng = rng if rng is not None else Rng(0)
    x = F + 0.1 * rng.normal((p,))
    out = np.empty((T, p))
    for t in range(burn_in + T):
        x = rk4_step(x, dt, F)
        if not np.all(np.isfinite(x)):
            raise GenerationError(f"Lorenz-96 state became non-finite at step {t}")
        if t >= burn_in:
            out[t - burn_in] = x
    return Dataset(out, lorenz96_truth(p), 3, name=f"lorenz96_{p}")


# -- CSV ---------------------------------------------------------------------------


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row]


def _parse_table(rows, first_row: int, skip_col: int | None = None):
    width = None
    values = []
    labels = []
    for i, row in enumerate(rows):
        lineno = first_row + i
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"row {lineno}: expected {width} columns, found {len(row)}")
        parsed = []
        for j, cell in enumerate(row):
            if j == skip_col:
                labels.append(cell)
                continue
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ParseError(f"row {lineno}, column {j + 1}: not a number: {cell!r}") from None
        values.append(parsed)
    return np.array(values, dtype=float), labels


def load_adjacency(path) -> np.ndarray:
    arr, _ = _parse_table(_read_rows(path), 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ParseError(f"adjacency must be square, got {arr.shape}")
    if not np.all(np.isin(arr, (0.0, 1.0))):
        raise ParseError("adjacency entries must be 0 or 1")
    return arr.astype(int)


def load_csv(path, has_header: bool = False, truth_path=None, label_column: str | int | None = None,
             name: str | None = None) -> Dataset:
    """Read a rows=time, columns=series table.

    ``label_column`` names (with a header) or indexes one non-numeric column
    to keep aside as ``Dataset.labels``. Errors report 1-based file rows and
    columns.
    """
    rows = _read_rows(path)
    skip = None
    first = 1
    if has_header:
        if not rows:
            raise ParseError(f"{path}: empty file")
        header, rows = rows[0], rows[1:]
        first = 2
        if isinstance(label_column, str):
            if label_column not in header:
                raise ParseError(f"no column named {label_column!r}")
            skip = header.index(label_column)
    if isinstance(label_column, int):
        skip = label_column
    if not rows:
        raise ParseError(f"{path}: no data rows")
    obs, labels = _parse_table(rows, first, skip)
    truth = load_adjacency(truth_path) if truth_path is not None else None
    ds = Dataset(obs, truth, None, name=name or os.path.splitext(os.path.basename(path))[0])
    ds.labels = labels if skip is not None else None
    return ds


def save_csv(path, values, header=None, fmt: str = "%.17g") -> None:
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in arr:
            w.writerow([fmt % v for v in row])


def save_adjacency(path, truth) -> None:
    save_csv(path, np.asarray(truth, dtype=int), fmt="%d")


# -- normalization -------------------------------------------------------------------


def normalize_minmax(ds: Dataset) -> Dataset:
    """Scale every column to [0, 1]; the (min, max) pairs are kept in ``scale``."""
    x = ds.observations
    lo, hi = x.min(axis=0), x.max(axis=0)
    flat = np.flatnonzero(hi <= lo)
    if flat.size:
        raise NormalizationError(f"column {flat[0] + 1} is constant; cannot normalize")
    return replace(ds, observations=(x - lo) / (hi - lo), scale=(lo, hi))


def denormalize(ds: Dataset) -> Dataset:
    if ds.scale is None:
        raise NormalizationError("dataset carries no min/max scale")
    lo, hi = ds.scale
    return replace(ds, observations=ds.observations * (hi - lo) + lo, scale=None)
