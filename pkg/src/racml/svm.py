"""C-parameterized support vector classification on the dual QP.

Training solves  min 1/2 z'Qz - e'z  s.t. y'z = 0, z in [0, C]^n with
q_ij = y_i y_j K(x_i, x_j), driving the block-sweep engine with kernel
blocks assembled on demand from raw data rows: the full n x n kernel matrix
is never materialized. A bounded LRU cache of kernel rows absorbs repeated
block selections.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .engine import BlockSystem, solve_block
from .problems import Matrix, Mode, SolverConfig, Status, chunk_indices

SUPPORT_THRESHOLD = 1e-8   # duals above this are support vectors
MARGIN_DELTA = 1e-6        # relative to C: margin means delta*C < z < (1-delta)*C


class DegenerateModelError(RuntimeError):
    """No support vectors: the trained dual weights are all (numerically) zero."""


class DegenerateSplitError(ValueError):
    """A holdout split left a single-class training part."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice; ``sigma`` is the Gaussian bandwidth."""

    kind: str = "gaussian"  # "gaussian" or "linear"
    sigma: float = 1.0

    def validate(self) -> None:
        if self.kind not in ("gaussian", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass
class SvmModel:
    """Support set with dual weights, labels, bias and kernel settings."""

    support_points: np.ndarray
    support_duals: np.ndarray
    support_labels: np.ndarray
    bias: float
    kernel: KernelSpec
    C: float


def _rows(X: Matrix) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.todense(), dtype=float)
    return np.asarray(X, dtype=float)


def kernel_eval(xi: np.ndarray, xj: np.ndarray, kernel: KernelSpec) -> float:
    """K(x_i, x_j) for a single pair."""
    kernel.validate()
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape:
        raise ValueError(f"feature dimensions differ: {xi.shape} vs {xj.shape}")
    if kernel.kind == "linear":
        return float(xi @ xj)
    d2 = float(np.sum((xi - xj) ** 2))
    return math.exp(-d2 / (2.0 * kernel.sigma ** 2))


def kernel_cross(Xa: np.ndarray, Xb: np.ndarray,
                 kernel: KernelSpec) -> np.ndarray:
    """Kernel values between every row of Xa and every row of Xb."""
    kernel.validate()
    Xa = np.asarray(Xa, dtype=float)
    Xb = np.asarray(Xb, dtype=float)
    if kernel.kind == "linear":
        return Xa @ Xb.T
    sq_a = np.sum(Xa * Xa, axis=1)[:, None]
    sq_b = np.sum(Xb * Xb, axis=1)[None, :]
    d2 = np.maximum(sq_a + sq_b - 2.0 * (Xa @ Xb.T), 0.0)
    return np.exp(-d2 / (2.0 * kernel.sigma ** 2))


class KernelRowCache:
    """Least-recently-used cache of raw kernel rows K(x_i, .)."""

    def __init__(self, X: np.ndarray, kernel: KernelSpec, capacity: int):
        self.X = X
        self.kernel = kernel
        self.capacity = max(1, capacity)
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        cached = self._rows.get(i)
        if cached is not None:
            self._rows.move_to_end(i)
            self.hits += 1
            return cached
        self.misses += 1
        row = kernel_cross(self.X[i:i + 1], self.X, self.kernel)[0]
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


def assemble_kernel_block(X: Matrix, y: np.ndarray, block: Sequence[int],
                          kernel: KernelSpec,
                          cache: Optional[KernelRowCache] = None,
                          with_strip: bool = False):
    """Label-weighted kernel sub-matrix for one block.

    Returns the s x s block Q_{b,b}; with ``with_strip`` also the s x n
    strip Q_{b,.} the block right-hand side needs. Entries come straight
    from data rows (optionally through the row cache); the full matrix is
    never built.
    """
    Xd = _rows(X)
    y = np.asarray(y, dtype=float)
    idx = np.asarray(block, dtype=int)
    if cache is not None:
        raw = np.stack([cache.row(int(i)) for i in idx])
    else:
        raw = kernel_cross(Xd[idx], Xd, kernel)
    strip = (y[idx][:, None] * raw) * y[None, :]
    qbb = strip[:, idx]
    if with_strip:
        return qbb, strip
    return qbb


def default_block_size(n: int) -> int:
    """Nominal block size by training-set size band."""
    if n < 30_000:
        return min(100, n)
    if n < 100_000:
        return 500
    return 1000


def default_config(n: int, block_size: Optional[int] = None,
                   seed: int = 0, max_iters: int = 10,
                   tol_primal: float = 1e-1, tol_dual: float = 1.0,
                   mode: Mode = Mode.RAC,
                   beta: Optional[float] = None) -> SolverConfig:
    """Training defaults: loose tolerances, few sweeps, beta = 0.1 * #blocks."""
    s = block_size or default_block_size(n)
    s = min(s, n)
    p = math.ceil(n / s)
    return SolverConfig(
        mode=mode, block_size=s,
        beta_penalty=beta if beta is not None else 0.1 * p,
        max_iters=max_iters, tol_primal=tol_primal, tol_dual=tol_dual,
        seed=seed)


@dataclass
class TrainDiagnostics:
    iterations: int
    status: Status
    primal_residual_history: np.ndarray
    dual_residual_history: np.ndarray
    duals: np.ndarray
    eq_dual: float


def train(X: Matrix, labels: np.ndarray, C: float, kernel: KernelSpec,
          config: Optional[SolverConfig] = None,
          cache_capacity: Optional[int] = None,
          return_diagnostics: bool = False):
    """Train a classifier by sweeping the dual QP blockwise.

    Each block subproblem is Q_{b,b} + beta y_b y_b' (positive definite for
    a strictly PD kernel block plus the rank-one penalty) with the cross
    terms taken from a running Q z product, updated incrementally from the
    assembled strips. The single equality y'z = 0 is handled by the
    augmented Lagrangian with scalar dual.
    """
    kernel.validate()
    Xd = _rows(X)
    y = np.asarray(labels, dtype=float)
    n = Xd.shape[0]
    if y.size != n:
        raise ValueError(f"labels length {y.size} does not match {n} rows")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if C <= 0:
        raise ValueError(f"C must be > 0, got {C}")
    if config is None:
        config = default_config(n)
    config.validate(n)
    mode = Mode(config.mode)
    beta = config.beta_penalty
    rng = np.random.default_rng(config.seed)
    s = config.block_size
    cache = KernelRowCache(Xd, kernel, cache_capacity or 2 * s)

    z = np.zeros(n)
    nu = 0.0
    qz = np.zeros(n)  # running Q @ z
    t = 0.0           # running y' z
    lower = np.zeros(s)

    if mode == Mode.CYCLIC:
        fixed = chunk_indices(np.arange(n), s)
    elif mode == Mode.RP:
        fixed = chunk_indices(rng.permutation(n), s)
    else:
        fixed = None

    primal_hist: list[float] = []
    dual_hist: list[float] = []
    status = Status.MAX_ITERS
    sweeps = 0
    for _ in range(config.max_iters):
        if mode == Mode.RAC:
            order = chunk_indices(rng.permutation(n), s)
        elif mode == Mode.RP:
            order = tuple(fixed[i] for i in rng.permutation(len(fixed)))
        else:
            order = fixed
        for g in order:
            idx = np.asarray(g, dtype=int)
            qbb, strip = assemble_kernel_block(
                Xd, y, idx, kernel, cache=cache, with_strip=True)
            yb = y[idx]
            matrix = qbb + beta * np.outer(yb, yb)
            # kernel blocks are PSD by construction but can be numerically
            # indefinite for wide bandwidths; a vanishing ridge keeps the
            # factorization honest without moving the optimum measurably
            ridge = 1e-9 * float(np.max(np.diag(matrix)))
            matrix[np.diag_indices_from(matrix)] += ridge
            cross = qz[idx] - qbb @ z[idx]
            eq_rest = t - float(yb @ z[idx])
            rhs = -(-1.0 + cross - nu * yb + beta * yb * eq_rest)
            system = BlockSystem(matrix=matrix, rhs=rhs,
                                 lower=lower[:idx.size],
                                 upper=np.full(idx.size, C))
            new_z = solve_block(system)
            delta = new_z - z[idx]
            qz += strip.T @ delta
            t += float(yb @ delta)
            z[idx] = new_z
        nu -= beta * t
        sweeps += 1
        primal = abs(t)
        grad = qz - 1.0 - nu * y
        dual = float(np.max(np.abs(np.clip(z - grad, 0.0, C) - z)))
        primal_hist.append(primal)
        dual_hist.append(dual)
        if not config.fixed_iterations and \
                primal <= config.tol_primal and dual <= config.tol_dual:
            status = Status.CONVERGED
            break

    bias = compute_bias(z, Xd, y, C, kernel)
    support = z > SUPPORT_THRESHOLD
    model = SvmModel(
        support_points=Xd[support].copy(),
        support_duals=z[support].copy(),
        support_labels=y[support].copy(),
        bias=bias, kernel=kernel, C=C)
    if return_diagnostics:
        diag = TrainDiagnostics(
            iterations=sweeps, status=status,
            primal_residual_history=np.asarray(primal_hist),
            dual_residual_history=np.asarray(dual_hist),
            duals=z, eq_dual=nu)
        return model, diag
    return model


def compute_bias(duals: np.ndarray, X: Matrix, labels: np.ndarray,
                 C: float, kernel: KernelSpec) -> float:
    """Bias from margin support vectors, b = mean(y_i - sum_j y_j z_j K(x_j, x_i)).

    When no dual sits strictly between the bounds, falls back to the
    midpoint of the interval the bound KKT conditions allow.
    """
    Xd = _rows(X)
    y = np.asarray(labels, dtype=float)
    z = np.asarray(duals, dtype=float)
    support = z > SUPPORT_THRESHOLD
    if not np.any(support):
        raise DegenerateModelError("no support vectors; cannot recover a bias")
    margin = (z > MARGIN_DELTA * C) & (z < (1.0 - MARGIN_DELTA) * C)
    coeffs = y[support] * z[support]
    if np.any(margin):
        k = kernel_cross(Xd[margin], Xd[support], kernel)
        g = k @ coeffs
        return float(np.mean(y[margin] - g))
    # All duals at a bound: b is only bracketed. At z_i = 0 optimality needs
    # y_i f(x_i) >= 1, at z_i = C it needs y_i f(x_i) <= 1; each combination
    # of bound and label turns y_i - g_i into a one-sided bound on b.
    k = kernel_cross(Xd, Xd[support], kernel)
    g = k @ coeffs
    vals = y - g
    at_upper = z >= (1.0 - MARGIN_DELTA) * C
    at_lower = ~at_upper
    lower_bnds = vals[(at_lower & (y > 0)) | (at_upper & (y < 0))]
    upper_bnds = vals[(at_lower & (y < 0)) | (at_upper & (y > 0))]
    lo = float(np.max(lower_bnds)) if lower_bnds.size else -math.inf
    hi = float(np.min(upper_bnds)) if upper_bnds.size else math.inf
    if not math.isfinite(lo):
        return hi
    if not math.isfinite(hi):
        return lo
    return (lo + hi) / 2.0


def decision_values(model: SvmModel, X_query: Matrix) -> np.ndarray:
    """f(x) = sum_i y_i z_i K(x_i, x) + b for each query row."""
    Xq = _rows(X_query)
    if Xq.shape[1] != model.support_points.shape[1]:
        raise ValueError(
            f"query has {Xq.shape[1]} features, model expects "
            f"{model.support_points.shape[1]}")
    k = kernel_cross(Xq, model.support_points, model.kernel)
    return k @ (model.support_labels * model.support_duals) + model.bias


def predict(model: SvmModel, X_query: Matrix) -> np.ndarray:
    """Sign of the decision function, with sign(0) -> +1."""
    f = decision_values(model, X_query)
    return np.where(f >= 0.0, 1.0, -1.0)


def accuracy(model: SvmModel, X_test: Matrix, y_test: np.ndarray) -> float:
    """Correctly predicted fraction as a percentage."""
    y_test = np.asarray(y_test, dtype=float)
    pred = predict(model, X_test)
    return float(np.mean(pred == y_test)) * 100.0


def grid_search(X: Matrix, labels: np.ndarray, C_grid: Sequence[float],
                sigma_grid: Sequence[float], holdout: float = 0.3,
                config: Optional[SolverConfig] = None, seed: int = 0,
                threads: int = 1):
    """Holdout accuracy over every (C, sigma) cell; best pair wins.

    The split is seed-determined; ties break toward smaller C, then smaller
    sigma. Cells may run concurrently (bounded by ``threads``); results are
    merged in cell order so the outcome is thread-count independent.
    """
    if not C_grid or not sigma_grid:
        raise ValueError("grids must be nonempty")
    if not (0.0 < holdout < 1.0):
        raise ValueError(f"holdout must be in (0, 1), got {holdout}")
    Xd = _rows(X)
    y = np.asarray(labels, dtype=float)
    n = Xd.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = max(1, int(round(holdout * n)))
    if n_hold >= n:
        raise DegenerateSplitError("holdout fraction leaves no training data")
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    y_train = y[train_idx]
    if np.unique(y_train).size < 2:
        raise DegenerateSplitError("training part of the split is single-class")
    X_train, X_hold, y_hold = Xd[train_idx], Xd[hold_idx], y[hold_idx]

    cells = [(float(c), float(s)) for c in C_grid for s in sigma_grid]
    seeds = [int(s.generate_state(1)[0])
             for s in np.random.SeedSequence(seed).spawn(len(cells))]

    def run_cell(i: int) -> dict:
        c, sigma = cells[i]
        kernel = KernelSpec(kind="gaussian", sigma=sigma)
        cfg = config if config is not None else default_config(
            len(train_idx), seed=seeds[i])
        if config is not None:
            cfg = SolverConfig(
                mode=cfg.mode, block_size=min(cfg.block_size, len(train_idx)),
                beta_penalty=cfg.beta_penalty, max_iters=cfg.max_iters,
                tol_primal=cfg.tol_primal, tol_dual=cfg.tol_dual,
                seed=seeds[i], fixed_iterations=cfg.fixed_iterations)
        model = train(X_train, y_train, c, kernel, cfg)
        return {"c": c, "sigma": sigma,
                "accuracy": accuracy(model, X_hold, y_hold)}

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            table = list(pool.map(run_cell, range(len(cells))))
    else:
        table = [run_cell(i) for i in range(len(cells))]

    best = max(table, key=lambda row: (row["accuracy"], -row["c"], -row["sigma"]))
    return (best["c"], best["sigma"]), table


def save_model(model: SvmModel, path) -> None:
    """JSON header plus a little-endian float64 sidecar of the support set.

    The sidecar packs duals, labels, then points row-major.
    """
    path = Path(path)
    sidecar = path.with_suffix(".bin")
    n_sv, dim = model.support_points.shape
    payload = np.concatenate([
        model.support_duals, model.support_labels,
        model.support_points.ravel()])
    sidecar.write_bytes(np.asarray(payload, dtype="<f8").tobytes())
    header = {
        "kernel": {"kind": model.kernel.kind, "sigma": model.kernel.sigma},
        "C": model.C,
        "bias": model.bias,
        "n_sv": n_sv,
        "dim": dim,
        "sidecar": sidecar.name,
    }
    path.write_text(json.dumps(header))


def load_model(path) -> SvmModel:
    path = Path(path)
    header = json.loads(path.read_text())
    raw = np.frombuffer((path.parent / header["sidecar"]).read_bytes(),
                        dtype="<f8").astype(float)
    n_sv, dim = header["n_sv"], header["dim"]
    duals = raw[:n_sv]
    labels = raw[n_sv:2 * n_sv]
    points = raw[2 * n_sv:].reshape(n_sv, dim)
    kernel = KernelSpec(kind=header["kernel"]["kind"],
                        sigma=header["kernel"]["sigma"])
    return SvmModel(support_points=points, support_duals=duals,
                    support_labels=labels, bias=header["bias"],
                    kernel=kernel, C=header["C"])
