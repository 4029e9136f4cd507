"""Linear-system view of the randomized sweep on small instances.

For an equality-constrained QP without boxes, one sweep with block order
sigma is an affine map z -> M z + offset on the stacked state z = (x; y).
Enumerating every admissible order gives the expected map, whose spectrum
certifies convergence in expectation; the spectral radius of the expected
Kronecker square certifies almost-sure convergence. Everything here is dense
and exact (full enumeration, no sampling), which is why instance sizes are
capped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import BlockDefinitenessError
from .problems import (
    CapacityError,
    QpProblem,
    UpdateOrder,
    as_dense,
    enumerate_orders,
    enumerate_partitions,
)

# Eigensolver imaginary dust below this magnitude counts as real.
IMAG_TOL = 1e-9
EDGE_TOL = 1e-9
SPECTRAL_BOUND = 4.0 / 3.0

# The Kronecker-square check solves an (n+m)^2 eigenproblem over every
# enumerated order; capped tighter than plain enumeration.
MAX_KRON_VARS = 8


def _dense_pair(H, A) -> tuple[np.ndarray, np.ndarray]:
    A = as_dense(A)
    n = A.shape[1]
    H = np.zeros((n, n)) if H is None else as_dense(H)
    if H.shape != (n, n):
        raise ValueError(f"H has shape {H.shape}, expected ({n}, {n})")
    return H, A


def coupling_matrix(H, A, beta: float) -> np.ndarray:
    """The full quadratic coupling H + beta * A'A seen by one sweep."""
    H, A = _dense_pair(H, A)
    return H + beta * (A.T @ A)


def gauss_seidel_matrix(H, A, beta: float, order: UpdateOrder) -> np.ndarray:
    """Block lower-triangular part of the coupling matrix along an order.

    Entry block (i, j) equals H_{gi,gj} + beta A_gi'A_gj whenever block gi is
    updated at or after gj in the sweep, and zero otherwise: exactly the
    system the Gauss-Seidel pass applies to the new iterate.
    """
    S = coupling_matrix(H, A, beta)
    n = S.shape[0]
    if order.n != n:
        raise ValueError(f"order covers {order.n} indices, expected {n}")
    L = np.zeros_like(S)
    groups = order.ordered_groups
    for i, gi in enumerate(groups):
        for gj in groups[:i + 1]:
            L[np.ix_(gi, gj)] = S[np.ix_(gi, gj)]
    return L


@dataclass(frozen=True)
class IterationMap:
    """The affine map one sweep applies to the stacked state z = (x; y).

    ``lower`` is the Gauss-Seidel matrix of the order, ``remainder`` is
    lower - (H + beta A'A). The lifted blocks append the dual update, and
    ``matrix`` is lifted_lower^{-1} lifted_remainder.
    """

    beta: float
    A: np.ndarray
    lower: np.ndarray
    remainder: np.ndarray
    lifted_lower: np.ndarray
    lifted_remainder: np.ndarray
    matrix: np.ndarray

    def offset(self, c: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Constant term of the sweep map for objective c and rhs b."""
        top = -np.asarray(c, dtype=float) + self.beta * (self.A.T @ b)
        bottom = self.beta * np.asarray(b, dtype=float)
        return np.linalg.solve(self.lifted_lower, np.concatenate([top, bottom]))

    def apply(self, z: np.ndarray, c: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.matrix @ z + self.offset(c, b)


def iteration_map(H, A, beta: float, order: UpdateOrder) -> IterationMap:
    """Assemble the sweep map for one block order."""
    Hd, Ad = _dense_pair(H, A)
    m, n = Ad.shape
    S = Hd + beta * (Ad.T @ Ad)
    L = gauss_seidel_matrix(Hd, Ad, beta, order)
    R = L - S
    lifted_lower = np.block([
        [L, np.zeros((n, m))],
        [beta * Ad, np.eye(m)],
    ])
    lifted_remainder = np.block([
        [R, Ad.T],
        [np.zeros((m, n)), np.eye(m)],
    ])
    try:
        M = np.linalg.solve(lifted_lower, lifted_remainder)
    except np.linalg.LinAlgError as exc:
        raise BlockDefinitenessError(
            "the sweep's Gauss-Seidel matrix is singular; a block violates "
            "the positive-definiteness assumption") from exc
    return IterationMap(beta=beta, A=Ad, lower=L, remainder=R,
                        lifted_lower=lifted_lower,
                        lifted_remainder=lifted_remainder, matrix=M)


def expected_operators(H, A, beta: float, p: int
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform expectations over every admissible order.

    Returns (Q, S, M) where S is the coupling matrix, Q the average of the
    inverted Gauss-Seidel matrices, and M the expected sweep map assembled
    from the closed block formula

        M = [[I - QS, QA'], [-beta A + beta A QS, I - beta A Q A']].

    The formula is cross-checked against the directly averaged sweep maps;
    disagreement beyond 1e-10 raises, since the two constructions must
    coincide.
    """
    Hd, Ad = _dense_pair(H, A)
    m, n = Ad.shape
    orders = enumerate_orders(n, p)
    S = Hd + beta * (Ad.T @ Ad)
    Q = np.zeros((n, n))
    M_avg = np.zeros((n + m, n + m))
    for order in orders:
        bundle = iteration_map(Hd, Ad, beta, order)
        Q += np.linalg.inv(bundle.lower)
        M_avg += bundle.matrix
    Q /= len(orders)
    M_avg /= len(orders)
    QS = Q @ S
    M = np.block([
        [np.eye(n) - QS, Q @ Ad.T],
        [-beta * Ad + beta * (Ad @ QS), np.eye(m) - beta * (Ad @ Q @ Ad.T)],
    ])
    if np.max(np.abs(M - M_avg)) > 1e-10:
        raise ArithmeticError(
            "expected sweep map disagrees between block formula and direct "
            f"average by {np.max(np.abs(M - M_avg)):.3e}")
    return Q, S, M


def _psd_root(S: np.ndarray) -> Optional[np.ndarray]:
    """S^{1/2} for PSD S (tiny negative dust clamped); None if S is indefinite."""
    w, V = np.linalg.eigh(S)
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        return None
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def _congruent_spectrum(Q: np.ndarray, root: np.ndarray) -> np.ndarray:
    """eig(QS) through the symmetric congruence S^{1/2} Q S^{1/2}.

    For symmetric Q and PSD S the two products share their nonzero spectrum,
    so the symmetric eigenproblem returns the exactly real eigenvalues of QS
    (zeros included when S is singular).
    """
    sym = root @ Q @ root
    return np.linalg.eigvalsh((sym + sym.T) / 2.0)


@dataclass
class ConvergenceCertificate:
    """Numerically checked convergence conditions for one instance.

    Spectra are stored as complex arrays; booleans are recomputable from
    them. Fields are None when the underlying computation was impossible
    (singular sweep matrix) or skipped (Kronecker check over the size cap).
    """

    n: int
    m: int
    p: int
    beta: float
    assumption1_ok: bool
    eig_qs: Optional[np.ndarray] = None
    eig_m: Optional[np.ndarray] = None
    rho_kron: Optional[float] = None
    lemma2_ok: Optional[bool] = None
    as_ok: Optional[bool] = None
    partition_max_eigs: Optional[list[float]] = None
    partitions_ok: Optional[bool] = None
    weyl_ok: Optional[bool] = None

    def to_json_dict(self) -> dict:
        def cplx(arr):
            if arr is None:
                return None
            return [[float(v.real), float(v.imag)] for v in np.asarray(arr, dtype=complex)]

        return {
            "eig_QS": cplx(self.eig_qs),
            "eig_M": cplx(self.eig_m),
            "rho_kron": self.rho_kron,
            "assumption1_ok": self.assumption1_ok,
            "lemma2_ok": self.lemma2_ok,
            "as_ok": self.as_ok,
            "partitions_ok": self.partitions_ok,
            "weyl_ok": self.weyl_ok,
            "partition_max_eigs": self.partition_max_eigs,
            "n": self.n,
            "m": self.m,
            "p": self.p,
            "beta": self.beta,
        }


def _blocks_positive_definite(S: np.ndarray, s: int) -> bool:
    """Every possible size-s block of the coupling matrix must be SPD."""
    n = S.shape[0]
    for subset in itertools.combinations(range(n), s):
        block = S[np.ix_(subset, subset)]
        try:
            np.linalg.cholesky(block)
        except np.linalg.LinAlgError:
            return False
    return True


def certify(H, A, beta: float, p: int,
            kron: Optional[bool] = None) -> ConvergenceCertificate:
    """Compute the full convergence certificate by exhaustive enumeration.

    Checks, in order: block positive definiteness of every possible block;
    the spectrum of QS inside [0, 4/3); symmetry and positive
    semidefiniteness of the per-partition averages (whose maxima bound the
    global spectrum through eigenvalue subadditivity of Hermitian sums); the
    expected-map spectrum; and, for instances within the Kronecker cap, the
    spectral radius of the expected Kronecker square.

    ``kron=None`` computes the Kronecker check automatically when n is
    within MAX_KRON_VARS; forcing it beyond the cap raises CapacityError.
    """
    Hd, Ad = _dense_pair(H, A)
    m, n = Ad.shape
    if kron is None:
        kron = n <= MAX_KRON_VARS
    elif kron and n > MAX_KRON_VARS:
        raise CapacityError(
            f"Kronecker check limited to n <= {MAX_KRON_VARS}; got n={n}")
    if n % p != 0:
        raise ValueError(f"p must divide n; got n={n}, p={p}")
    s = n // p
    S = Hd + beta * (Ad.T @ Ad)
    cert = ConvergenceCertificate(
        n=n, m=m, p=p, beta=beta,
        assumption1_ok=_blocks_positive_definite(S, s))

    try:
        Q, S, M = expected_operators(Hd, Ad, beta, p)
    except (np.linalg.LinAlgError, BlockDefinitenessError, ArithmeticError):
        # singular or numerically untrustworthy sweeps: only the block
        # positive-definiteness verdict is reportable
        return cert

    root = _psd_root(S)
    if root is not None:
        eig_qs = _congruent_spectrum(Q, root)
    else:
        eig_qs = np.linalg.eigvals(Q @ S)
    cert.eig_qs = np.asarray(eig_qs, dtype=complex)
    real_ok = np.all(np.abs(cert.eig_qs.imag) <= IMAG_TOL)
    range_ok = np.all(cert.eig_qs.real >= -EDGE_TOL) and \
        np.all(cert.eig_qs.real < SPECTRAL_BOUND - EDGE_TOL)
    cert.lemma2_ok = bool(real_ok and range_ok)

    cert.eig_m = np.linalg.eigvals(M)

    # Per-partition averaged operators: each must be a symmetric PD matrix
    # whose product with S has real spectrum under the bound (checked through
    # the congruence, which carries the same eigenvalues), and their maxima
    # must dominate the global maximum by eigenvalue subadditivity.
    maxima = []
    partitions_ok = True
    for partition in enumerate_partitions(n, p):
        Qp = np.zeros((n, n))
        count = 0
        for perm in itertools.permutations(partition.groups):
            L = gauss_seidel_matrix(Hd, Ad, beta, UpdateOrder(perm))
            Qp += np.linalg.inv(L)
            count += 1
        Qp /= count
        asym = float(np.max(np.abs(Qp - Qp.T)))
        if root is not None:
            eigs = _congruent_spectrum(Qp, root)
        else:
            eigs = np.sort(np.linalg.eigvals(Qp @ S).real)
        maxima.append(float(eigs[-1]))
        q_min = float(np.linalg.eigvalsh((Qp + Qp.T) / 2.0)[0])
        if asym > EDGE_TOL or q_min <= 0.0 or eigs[0] < -EDGE_TOL or \
                eigs[-1] >= SPECTRAL_BOUND - EDGE_TOL:
            partitions_ok = False
    cert.partition_max_eigs = maxima
    cert.partitions_ok = partitions_ok
    lam1 = float(np.max(cert.eig_qs.real))
    cert.weyl_ok = bool(lam1 <= float(np.mean(maxima)) + EDGE_TOL)

    if kron:
        dim = n + m
        K = np.zeros((dim * dim, dim * dim))
        orders = enumerate_orders(n, p)
        for order in orders:
            Ms = iteration_map(Hd, Ad, beta, order).matrix
            K += np.kron(Ms, Ms)
        K /= len(orders)
        cert.rho_kron = float(np.max(np.abs(np.linalg.eigvals(K))))
        cert.as_ok = bool(cert.rho_kron < 1.0)
    return cert


def kkt_residual(problem: QpProblem, x: np.ndarray, y: np.ndarray) -> float:
    """Distance of (x, y) from the KKT conditions of a box QP.

    Maximum of the equality violation and the box-projected stationarity
    step, each in the inf-norm; zero exactly at KKT pairs. Kept as a direct
    formula so it can cross-check the sweep engine's residual tracking.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    feas = 0.0
    grad = np.array(problem.c, dtype=float)
    if problem.H is not None:
        grad += as_dense(problem.H) @ x
    if problem.A is not None:
        Ad = as_dense(problem.A)
        feas = float(np.max(np.abs(Ad @ x - problem.b)))
        grad -= Ad.T @ y
    stationarity = float(np.max(np.abs(
        np.minimum(np.maximum(x - grad, problem.lower), problem.upper) - x)))
    return max(feas, stationarity)


def kkt_solve(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """Direct dense solve of the equality-constrained KKT system.

    Ignores box bounds; intended as the reference solution for unbounded
    instances with a nonsingular KKT matrix.
    """
    n, m = problem.n, problem.m
    H = np.zeros((n, n)) if problem.H is None else as_dense(problem.H)
    if m == 0:
        return np.linalg.solve(H, -problem.c), np.zeros(0)
    A = as_dense(problem.A)
    K = np.block([[H, -A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([-problem.c, problem.b])
    z = np.linalg.solve(K, rhs)
    return z[:n], z[n:]
