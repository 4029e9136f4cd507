"""Problem data model: QP instances, variable partitions, solver settings.

All numeric data is 64-bit floating point. Matrices may be dense
``numpy.ndarray`` or scipy sparse (stored column-compressed); vectors are
1-D arrays. Randomness is always drawn from ``numpy.random.default_rng``
(PCG64), so any operation taking a seed reproduces bit-identically across
platforms.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

Matrix = Union[np.ndarray, sp.spmatrix]

# Exhaustive order enumeration is factorial in n; hard cap keeps it feasible.
MAX_ENUMERATION_VARS = 10


class CapacityError(ValueError):
    """An exhaustive enumeration was requested beyond the supported size."""


def is_sparse(mat: Matrix) -> bool:
    return sp.issparse(mat)


def as_dense(mat: Matrix) -> np.ndarray:
    """Return a dense float64 copy of a dense or sparse matrix."""
    if sp.issparse(mat):
        return np.asarray(mat.todense(), dtype=float)
    return np.asarray(mat, dtype=float)


def as_csc(mat: Matrix) -> sp.csc_matrix:
    """Return the column-compressed form, canonicalized (sorted, no dups)."""
    csc = sp.csc_matrix(mat)
    csc.sum_duplicates()
    csc.sort_indices()
    return csc


def matrix_violations(mat: Matrix, name: str = "matrix") -> list[str]:
    """Structural checks shared by every matrix-carrying type.

    Dense matrices must be 2-D and finite. Sparse matrices must additionally
    carry strictly increasing, in-range row indices within each column.
    """
    issues: list[str] = []
    if sp.issparse(mat):
        csc = mat.tocsc()
        if not np.all(np.isfinite(csc.data)):
            issues.append(f"{name}: contains non-finite entries")
        rows, cols = csc.shape
        indptr, indices = csc.indptr, csc.indices
        if indices.size and (indices.min() < 0 or indices.max() >= rows):
            issues.append(f"{name}: row index out of range [0, {rows})")
        for j in range(cols):
            col = indices[indptr[j]:indptr[j + 1]]
            if col.size > 1 and np.any(np.diff(col) <= 0):
                issues.append(
                    f"{name}: column {j} has duplicate or decreasing row indices")
                break
    else:
        arr = np.asarray(mat)
        if arr.ndim != 2:
            issues.append(f"{name}: expected a 2-D array, got ndim={arr.ndim}")
        elif not np.all(np.isfinite(arr)):
            issues.append(f"{name}: contains non-finite entries")
    return issues


def _vec(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class QpProblem:
    """Linearly constrained box QP: min 1/2 x'Hx + c'x  s.t. Ax = b, l <= x <= u.

    ``H`` (symmetric PSD) and ``A`` may be absent, meaning a zero quadratic
    term / no equality constraints. Bounds default to the whole space
    (``-inf``/``+inf`` sentinels).
    """

    c: np.ndarray
    H: Optional[Matrix] = None
    A: Optional[Matrix] = None
    b: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        c = _vec(self.c, "c")
        object.__setattr__(self, "c", c)
        n = c.size
        if self.b is not None:
            object.__setattr__(self, "b", _vec(self.b, "b"))
        lo = _vec(self.lower, "lower") if self.lower is not None \
            else np.full(n, -np.inf)
        hi = _vec(self.upper, "upper") if self.upper is not None \
            else np.full(n, np.inf)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        if self.A is None:
            return 0
        return self.A.shape[0]

    @property
    def is_bounded(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or
                    np.any(np.isfinite(self.upper)))


@dataclass(frozen=True)
class ValidationReport:
    """Accumulated invariant violations; empty means the problem is valid."""

    issues: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:  # truthy iff valid
        return self.ok


def validate_problem(problem: QpProblem) -> ValidationReport:
    """Check every QpProblem invariant and report all violations.

    Validation never raises; an empty report means the problem is valid.
    """
    issues: list[str] = []
    n = problem.n
    if problem.H is not None:
        issues += matrix_violations(problem.H, "H")
        if problem.H.shape != (n, n):
            issues.append(f"H: expected shape ({n}, {n}), got {problem.H.shape}")
        elif not issues:
            Hd = as_dense(problem.H)
            scale = max(1.0, float(np.max(np.abs(Hd))) if Hd.size else 1.0)
            if np.max(np.abs(Hd - Hd.T)) > 1e-12 * scale:
                issues.append("H: not symmetric within 1e-12 relative tolerance")
    if problem.A is not None:
        issues += matrix_violations(problem.A, "A")
        if problem.A.shape[1] != n:
            issues.append(f"A: expected {n} columns, got {problem.A.shape[1]}")
        if problem.b is None:
            issues.append("b: required when A is present")
        elif problem.b.size != problem.A.shape[0]:
            issues.append(
                f"b: length {problem.b.size} does not match {problem.A.shape[0]} rows of A")
        if problem.b is not None and not np.all(np.isfinite(problem.b)):
            issues.append("b: contains non-finite entries")
    elif problem.b is not None and problem.b.size:
        issues.append("b: present without A")
    if not np.all(np.isfinite(problem.c)):
        issues.append("c: contains non-finite entries")
    for name, v in (("lower", problem.lower), ("upper", problem.upper)):
        if v.size != n:
            issues.append(f"{name}: length {v.size} does not match n={n}")
        if np.any(np.isnan(v)):
            issues.append(f"{name}: contains NaN")
    if problem.lower.size == n and problem.upper.size == n and \
            np.any(problem.lower > problem.upper):
        issues.append("bounds: lower > upper for at least one variable")
    return ValidationReport(tuple(issues))


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint grouping of the variable indices {0, ..., n-1} into blocks.

    Every group has the nominal size except possibly the last, which holds
    the remainder when the block size does not divide n.
    """

    groups: tuple[tuple[int, ...], ...]
    block_size: int

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def p(self) -> int:
        return len(self.groups)

    def covers(self, n: int) -> bool:
        seen = sorted(i for g in self.groups for i in g)
        return seen == list(range(n))


@dataclass(frozen=True)
class UpdateOrder:
    """A block partition together with the order in which blocks are swept."""

    ordered_groups: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.ordered_groups)

    @property
    def p(self) -> int:
        return len(self.ordered_groups)

    def partition_key(self) -> frozenset[tuple[int, ...]]:
        """Order-insensitive identity of the underlying partition."""
        return frozenset(self.ordered_groups)


def chunk_indices(indices: np.ndarray, block_size: int) -> tuple[tuple[int, ...], ...]:
    """Split an index vector into consecutive chunks of the block size.

    Each chunk is sorted internally; block membership is a set property and
    the canonical form makes partitions comparable.
    """
    groups = []
    for start in range(0, indices.size, block_size):
        groups.append(tuple(sorted(int(i) for i in indices[start:start + block_size])))
    return tuple(groups)


def make_partition(n: int, block_size: int, seed: int = 0,
                   randomize: bool = False) -> BlockPartition:
    """Group n variables into blocks of the given size.

    With ``randomize`` the indices are drawn without replacement from a
    seed-determined shuffle before chunking; otherwise blocks are consecutive
    ranges. Deterministic given (n, block_size, seed, randomize).
    """
    if block_size < 1 or block_size > n:
        raise ValueError(
            f"block_size must be in [1, n]; got block_size={block_size}, n={n}")
    if randomize:
        perm = np.random.default_rng(seed).permutation(n)
    else:
        perm = np.arange(n)
    return BlockPartition(chunk_indices(perm, block_size), block_size)


def enumerate_orders(n: int, p: int) -> list[UpdateOrder]:
    """All distinct block update orders for n variables in p equal blocks.

    Two orders are distinct when they differ in block membership or in block
    sequence; the sweep is invariant to ordering inside a block, so within a
    block indices are kept sorted. The result has exactly n!/(s!)^p entries.
    """
    if p < 1 or n % p != 0:
        raise ValueError(f"p must divide n; got n={n}, p={p}")
    if n > MAX_ENUMERATION_VARS:
        raise CapacityError(
            f"order enumeration is limited to n <= {MAX_ENUMERATION_VARS}; got n={n}")
    s = n // p

    def rec(rest: tuple[int, ...], blocks_left: int):
        if blocks_left == 0:
            yield ()
            return
        for head in itertools.combinations(rest, s):
            remaining = tuple(i for i in rest if i not in head)
            for tail in rec(remaining, blocks_left - 1):
                yield (head,) + tail

    return [UpdateOrder(groups) for groups in rec(tuple(range(n)), p)]


def enumerate_partitions(n: int, p: int) -> list[BlockPartition]:
    """All distinct partitions of n variables into p equal blocks.

    Block order is irrelevant here; the first block is anchored to the
    smallest unassigned index so each partition appears once. The result has
    exactly n!/(p!(s!)^p) entries.
    """
    if p < 1 or n % p != 0:
        raise ValueError(f"p must divide n; got n={n}, p={p}")
    if n > MAX_ENUMERATION_VARS:
        raise CapacityError(
            f"partition enumeration is limited to n <= {MAX_ENUMERATION_VARS}; got n={n}")
    s = n // p

    def rec(rest: tuple[int, ...], blocks_left: int):
        if blocks_left == 0:
            yield ()
            return
        anchor = rest[0]
        for tail_of_head in itertools.combinations(rest[1:], s - 1):
            head = (anchor,) + tail_of_head
            remaining = tuple(i for i in rest if i not in head)
            for tail in rec(remaining, blocks_left - 1):
                yield (head,) + tail

    return [BlockPartition(groups, s) for groups in rec(tuple(range(n)), p)]


class Mode(str, Enum):
    """Block assembly policy for the sweep loop."""

    RAC = "rac"        # fresh random partition every sweep
    RP = "rp"          # fixed partition, freshly permuted block order
    CYCLIC = "cyclic"  # fixed partition, fixed order


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters for the multi-block sweep solver."""

    mode: Mode = Mode.RAC
    block_size: int = 100
    beta_penalty: float = 1.0
    max_iters: int = 100
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    seed: int = 0
    fixed_iterations: bool = False

    def validate(self, n: int) -> None:
        if self.beta_penalty <= 0:
            raise ValueError(f"beta_penalty must be > 0, got {self.beta_penalty}")
        if not (1 <= self.block_size <= n):
            raise ValueError(
                f"block_size must be in [1, n]; got {self.block_size} with n={n}")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolveResult:
    """Output of a solve: primal/dual point, per-sweep residuals, status."""

    x: np.ndarray
    y: np.ndarray
    iterations: int
    primal_residual_history: np.ndarray
    primal_l1_history: np.ndarray
    dual_residual_history: np.ndarray
    status: Status

    @property
    def primal_residual(self) -> float:
        return float(self.primal_residual_history[-1]) if self.iterations else math.inf

    @property
    def dual_residual(self) -> float:
        return float(self.dual_residual_history[-1]) if self.iterations else math.inf


def _read_vector(path: Path) -> np.ndarray:
    values = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            values.append(float(line))
    return np.asarray(values, dtype=float)


def _read_matrix(path: Path) -> Matrix:
    mat = scipy.io.mmread(str(path))
    if sp.issparse(mat):
        return as_csc(mat)
    return np.asarray(mat, dtype=float)


def load_qp_manifest(path) -> QpProblem:
    """Load a QP from a JSON manifest referencing Matrix Market / text files.

    Schema: {"n", "m", "H": path|null, "A": path|null, "c": path,
    "b": path|null, "lower": path|null, "upper": path|null}. Relative paths
    resolve against the manifest's directory. Missing H/A mean zero/absent.
    """
    path = Path(path)
    spec = json.loads(path.read_text())
    base = path.parent

    def resolve(key):
        rel = spec.get(key)
        return None if rel is None else base / rel

    n = int(spec["n"])
    m = int(spec.get("m") or 0)
    c = _read_vector(resolve("c"))
    if c.size != n:
        raise ValueError(f"manifest n={n} but c has {c.size} entries")
    H = _read_matrix(resolve("H")) if spec.get("H") else None
    A = _read_matrix(resolve("A")) if spec.get("A") else None
    b = _read_vector(resolve("b")) if spec.get("b") else None
    if A is not None and A.shape != (m, n):
        raise ValueError(f"manifest m,n=({m},{n}) but A has shape {A.shape}")
    lower = _read_vector(resolve("lower")) if spec.get("lower") else None
    upper = _read_vector(resolve("upper")) if spec.get("upper") else None
    return QpProblem(c=c, H=H, A=A, b=b, lower=lower, upper=upper)
