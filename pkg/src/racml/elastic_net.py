"""Elastic-net / LASSO / ridge regression via randomized block sweeps.

The loss (1/2n)||y - X beta||^2 plus penalty lam*(alpha*||.||_1 +
(1-alpha)/2*||.||_2^2) is split through an auxiliary copy z with constraint
beta - z = 0, penalty gamma and dual xi. Coefficient blocks are minimized
with on-demand sub-block Gram assembly (the p x p Gram matrix is never
formed); the z block has a closed-form shrinkage update.

``consensus_fit`` solves the same objective with the classical two-block
consensus splitting (per-sample-group coefficient copies tied to a global
z), as a baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .data_io import density
from .engine import BlockDefinitenessError
from .problems import Matrix, Mode, chunk_indices

# Optional instrumentation: called with the element count of each per-block
# temporary that fit materializes, so tests can bound peak working memory.
_ALLOC_HOOK: Optional[Callable[[int], None]] = None


def set_alloc_hook(hook: Optional[Callable[[int], None]]) -> None:
    global _ALLOC_HOOK
    _ALLOC_HOOK = hook


def _note_alloc(count: int) -> None:
    if _ALLOC_HOOK is not None:
        _ALLOC_HOOK(int(count))


# Denser designs get a small penalty relative to lam; very sparse designs a
# full-lam penalty. The density crossover mirrors the solver's tuning; lam=0
# (plain least squares) falls back to 1.
AUTO_GAMMA_DENSITY = 0.005


@dataclass(frozen=True)
class ElasticNetSpec:
    """Regression hyperparameters and sweep settings."""

    lam: float
    alpha: float
    gamma: Optional[float] = None  # None resolves by design density
    block_size: int = 100
    iters: int = 10
    mode: Mode = Mode.RAC
    seed: int = 0
    tol: Optional[float] = None  # stop early when ||beta - z||_1 <= tol

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if Mode(self.mode) not in (Mode.RAC, Mode.RP):
            raise ValueError(f"mode must be rac or rp, got {self.mode}")


@dataclass
class ElasticNetModel:
    """Fitted coefficients with the splitting state they converged to."""

    beta: np.ndarray
    z: np.ndarray
    xi: np.ndarray
    spec: ElasticNetSpec
    gamma: float
    iterations: int
    residual: float  # final ||beta - z||_1


def resolve_gamma(spec: ElasticNetSpec, X: Matrix) -> float:
    if spec.gamma is not None:
        return spec.gamma
    if spec.lam == 0.0:
        return 1.0
    if density(X) >= AUTO_GAMMA_DENSITY:
        return 0.1 * spec.lam
    return spec.lam


def soft_threshold(a, b):
    """Negated shrinkage: -(a-b) if b<|a|, a>0; -(a+b) if b<|a|, a<=0; else 0.

    This is the sign convention whose composition with the argument
    (xi - gamma*beta) yields the z minimizer; it is the negation of the
    textbook operator applied to a. Works elementwise on arrays.
    """
    a = np.asarray(a, dtype=float)
    if np.any(np.asarray(b) < 0):
        raise ValueError("threshold b must be >= 0")
    out = -np.sign(a) * np.maximum(np.abs(a) - b, 0.0) + 0.0  # kill -0.0
    if out.ndim == 0:
        return float(out)
    return out


def z_update(beta_i, xi_i, gamma: float, lam: float, alpha: float):
    """Closed-form minimizer of the separable z slice of the Lagrangian.

    Minimizes (xi - gamma*beta) z + gamma/2 z^2 + lam*alpha*|z|
    + lam(1-alpha)/2 z^2 exactly, elementwise.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    a = np.asarray(xi_i, dtype=float) - gamma * np.asarray(beta_i, dtype=float)
    denom = (1.0 - alpha) * lam + gamma
    out = soft_threshold(a, lam * alpha) / denom
    if np.ndim(out) == 0:
        return float(out)
    return out


def objective(X: Matrix, y: np.ndarray, beta: np.ndarray,
              lam: float, alpha: float) -> float:
    """(1/2n)||y - X beta||^2 + lam*(alpha*||beta||_1 + (1-alpha)/2*||beta||_2^2)."""
    n = X.shape[0]
    r = X @ beta - y
    penalty = lam * (alpha * np.sum(np.abs(beta)) +
                     0.5 * (1.0 - alpha) * float(beta @ beta))
    return 0.5 * float(r @ r) / n + penalty


def _col_block(X: Matrix, block) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X[:, block].todense(), dtype=float)
    return X[:, block]


def fit(X: Matrix, y: np.ndarray, spec: ElasticNetSpec) -> ElasticNetModel:
    """Randomized block-sweep fit of the elastic-net objective.

    Per sweep, each coefficient block solves its exact subsystem

        (X_b'X_b/n + gamma I) beta_b = -(c_b + cross_b - xi_b - gamma z_b)

    with c = -X'y/n and the cross term computed from the running prediction
    X beta (never forming the full Gram matrix); then z is updated in closed
    form and the dual takes one step xi <- xi - gamma (beta - z). Runs
    exactly ``spec.iters`` sweeps, or stops earlier once ||beta - z||_1 falls
    below ``spec.tol`` when a tolerance is configured. With lam=0 the
    splitting residual vanishes identically after every z-step, so use the
    fixed-sweep protocol there.
    """
    spec.validate()
    n, p = X.shape
    if n < 1 or p < 1:
        raise ValueError("X must be non-empty")
    y = np.asarray(y, dtype=float)
    if y.size != n:
        raise ValueError(f"y has length {y.size}, expected {n}")
    gamma = resolve_gamma(spec, X)
    mode = Mode(spec.mode)
    rng = np.random.default_rng(spec.seed)
    block_size = min(spec.block_size, p)

    c = -(X.T @ y) / n
    c = np.asarray(c, dtype=float).ravel()
    beta = np.zeros(p)
    z = np.zeros(p)
    xi = np.zeros(p)
    r = np.zeros(n)  # running X @ beta

    fixed_groups = None
    factor_cache: dict = {}
    cache_factors = False
    if mode == Mode.RP:
        fixed_groups = chunk_indices(rng.permutation(p), block_size)
        cache_factors = density(X) >= AUTO_GAMMA_DENSITY

    iterations = 0
    residual = math.inf
    for _ in range(spec.iters):
        if mode == Mode.RAC:
            order = chunk_indices(rng.permutation(p), block_size)
        else:
            order = tuple(fixed_groups[i]
                          for i in rng.permutation(len(fixed_groups)))
        for g in order:
            idx = np.asarray(g, dtype=int)
            Xg = _col_block(X, idx)
            _note_alloc(Xg.size)
            # coupling to the other blocks through the running prediction:
            # X_b' X_rest beta_rest / n, without touching the full Gram
            cross = Xg.T @ (r - Xg @ beta[idx]) / n
            rhs = -(c[idx] + cross - xi[idx] - gamma * z[idx])
            key = g if cache_factors else None
            chol = factor_cache.get(key) if key is not None else None
            if chol is None:
                gram = (Xg.T @ Xg) / n
                _note_alloc(gram.size)
                gram[np.diag_indices_from(gram)] += gamma
                try:
                    chol = np.linalg.cholesky(gram)
                except np.linalg.LinAlgError as exc:
                    raise BlockDefinitenessError(
                        "sub-block Gram matrix plus gamma*I is not positive "
                        "definite; the sub-block positive-definiteness "
                        "requirement is violated") from exc
                if key is not None:
                    factor_cache[key] = chol
            new_beta = scipy.linalg.cho_solve((chol, True), rhs)
            r += Xg @ (new_beta - beta[idx])
            beta[idx] = new_beta
        z = z_update(beta, xi, gamma, spec.lam, spec.alpha)
        xi = xi - gamma * (beta - z)
        iterations += 1
        residual = float(np.sum(np.abs(beta - z)))
        if spec.tol is not None and residual <= spec.tol:
            break
    return ElasticNetModel(beta=beta, z=z, xi=xi, spec=spec, gamma=gamma,
                           iterations=iterations, residual=residual)


def predict(model: ElasticNetModel, X: Matrix) -> np.ndarray:
    out = X @ model.beta
    return np.asarray(out, dtype=float).ravel()


def evaluate(model: ElasticNetModel, X_test: Matrix,
             y_test: np.ndarray) -> dict:
    """Prediction quality: l2_loss = ||X beta - y||_2 and its mean square."""
    y_test = np.asarray(y_test, dtype=float)
    if X_test.shape[1] != model.beta.size:
        raise ValueError(
            f"X_test has {X_test.shape[1]} features, model has {model.beta.size}")
    diff = predict(model, X_test) - y_test
    l2 = float(np.linalg.norm(diff))
    return {"l2_loss": l2, "model_error": l2 * l2 / y_test.size}


def consensus_fit(X: Matrix, y: np.ndarray,
                  spec: ElasticNetSpec) -> ElasticNetModel:
    """Two-block consensus baseline for the same objective.

    Samples are split into groups; each group keeps a full coefficient copy
    constrained to the shared z. One sweep solves every copy's ridge system
    (all independent given z), shrinks z in closed form against the averaged
    copies, and steps the duals. Stopping matches ``fit``: ``spec.iters``
    sweeps, or mean ||copy - z||_1 <= tol.
    """
    spec.validate()
    n, p = X.shape
    y = np.asarray(y, dtype=float)
    gamma = resolve_gamma(spec, X)
    rng = np.random.default_rng(spec.seed)
    # One coefficient copy per sweep block of ``fit`` (at least two, else this
    # degenerates into the plain two-block splitting); each copy owns an equal
    # share of the samples.
    copies_wanted = min(n, max(2, math.ceil(p / min(spec.block_size, p))))
    groups = chunk_indices(rng.permutation(n), math.ceil(n / copies_wanted))
    N = len(groups)

    solvers = []
    targets = []
    for g in groups:
        idx = np.asarray(g, dtype=int)
        Xi = X[idx] if not sp.issparse(X) else np.asarray(
            X[idx].todense(), dtype=float)
        Xi = np.asarray(Xi, dtype=float)
        yi = y[idx]
        w0 = Xi.T @ yi / n
        ni = idx.size
        if p <= ni:
            chol = np.linalg.cholesky(Xi.T @ Xi / n + gamma * np.eye(p))
            solvers.append(("direct", Xi, chol))
        else:
            # Woodbury route: invert through the small n_i x n_i system.
            chol = np.linalg.cholesky(Xi @ Xi.T + n * gamma * np.eye(ni))
            solvers.append(("woodbury", Xi, chol))
        targets.append(w0)

    copies = np.zeros((N, p))
    duals = np.zeros((N, p))
    z = np.zeros(p)
    iterations = 0
    residual = math.inf
    for _ in range(spec.iters):
        for i, ((kind, Xi, chol), w0) in enumerate(zip(solvers, targets)):
            w = w0 + duals[i] + gamma * z
            if kind == "direct":
                copies[i] = scipy.linalg.cho_solve((chol, True), w)
            else:
                inner = scipy.linalg.cho_solve((chol, True), Xi @ w)
                copies[i] = (w - Xi.T @ inner) / gamma
        agg = duals.sum(axis=0) - gamma * copies.sum(axis=0)
        denom = (1.0 - spec.alpha) * spec.lam + N * gamma
        z = soft_threshold(agg, spec.lam * spec.alpha) / denom
        duals -= gamma * (copies - z)
        iterations += 1
        residual = float(np.mean(np.sum(np.abs(copies - z), axis=1)))
        if spec.tol is not None and residual <= spec.tol:
            break
    return ElasticNetModel(beta=copies.mean(axis=0), z=z,
                           xi=duals.mean(axis=0), spec=spec, gamma=gamma,
                           iterations=iterations, residual=residual)


# Coefficient vectors longer than this go to a little-endian float64 sidecar
# file instead of inline JSON.
INLINE_VECTOR_LIMIT = 100_000


def _spec_to_dict(spec: ElasticNetSpec) -> dict:
    return {
        "lambda": spec.lam,
        "alpha": spec.alpha,
        "gamma": spec.gamma,
        "block_size": spec.block_size,
        "iters": spec.iters,
        "mode": Mode(spec.mode).value,
        "seed": spec.seed,
        "tol": spec.tol,
    }


def _spec_from_dict(d: dict) -> ElasticNetSpec:
    return ElasticNetSpec(
        lam=d["lambda"], alpha=d["alpha"], gamma=d.get("gamma"),
        block_size=d.get("block_size", 100), iters=d.get("iters", 10),
        mode=Mode(d.get("mode", "rac")), seed=d.get("seed", 0),
        tol=d.get("tol"))


def save_model(model: ElasticNetModel, path) -> None:
    """Persist the model as JSON, spilling long vectors to binary sidecars."""
    path = Path(path)

    def pack(name: str, vec: np.ndarray):
        if vec.size > INLINE_VECTOR_LIMIT:
            sidecar = path.with_suffix(f".{name}.bin")
            sidecar.write_bytes(np.asarray(vec, dtype="<f8").tobytes())
            return {"path": sidecar.name}
        return list(map(float, vec))

    doc = {
        "spec": _spec_to_dict(model.spec),
        "gamma": model.gamma,
        "beta": pack("beta", model.beta),
        "z": pack("z", model.z),
        "xi": pack("xi", model.xi),
        "iterations": model.iterations,
        "residual": model.residual,
    }
    path.write_text(json.dumps(doc))


def load_model(path) -> ElasticNetModel:
    path = Path(path)
    doc = json.loads(path.read_text())

    def unpack(entry):
        if isinstance(entry, dict):
            raw = (path.parent / entry["path"]).read_bytes()
            return np.frombuffer(raw, dtype="<f8").astype(float)
        return np.asarray(entry, dtype=float)

    spec = _spec_from_dict(doc["spec"])
    return ElasticNetModel(
        beta=unpack(doc["beta"]), z=unpack(doc["z"]), xi=unpack(doc["xi"]),
        spec=spec, gamma=doc["gamma"], iterations=doc["iterations"],
        residual=doc["residual"])
