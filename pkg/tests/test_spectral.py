import numpy as np
import pytest

from racml.engine import BlockDefinitenessError, compute_residuals, run_sweep
from racml.problems import (
    CapacityError,
    QpProblem,
    UpdateOrder,
    enumerate_orders,
)
from racml.spectral import (
    certify,
    coupling_matrix,
    expected_operators,
    gauss_seidel_matrix,
    iteration_map,
    kkt_residual,
    kkt_solve,
)


def random_instance(seed, n=4, m=2, h_zero=False):
    rng = np.random.default_rng(seed)
    if h_zero:
        H = np.zeros((n, n))
    else:
        G = rng.standard_normal((n, n))
        H = G @ G.T + 0.4 * np.eye(n)
    A = rng.standard_normal((m, n))
    return H, A


class TestGaussSeidelMatrix:
    def test_identity_data_gives_identity(self):
        L = gauss_seidel_matrix(None, np.eye(2), 1.0,
                                UpdateOrder(((0,), (1,))))
        np.testing.assert_array_equal(L, np.eye(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_entrywise_reconstruction(self, seed):
        # L keeps exactly the diagonal-and-below blocks of the coupling
        # matrix; transposing the strictly-below part restores the rest
        H, A = random_instance(seed)
        S = coupling_matrix(H, A, 0.7)
        for order in enumerate_orders(4, 2):
            L = gauss_seidel_matrix(H, A, 0.7, order)
            g1, g2 = order.ordered_groups
            np.testing.assert_allclose(L[np.ix_(g1, g1)], S[np.ix_(g1, g1)])
            np.testing.assert_allclose(L[np.ix_(g2, g2)], S[np.ix_(g2, g2)])
            np.testing.assert_allclose(L[np.ix_(g2, g1)], S[np.ix_(g2, g1)])
            np.testing.assert_array_equal(L[np.ix_(g1, g2)],
                                          np.zeros((len(g1), len(g2))))

    def test_lower_left_is_cross_coupling(self):
        H, A = random_instance(11)
        beta = 1.3
        order = UpdateOrder(((1, 3), (0, 2)))
        L = gauss_seidel_matrix(H, A, beta, order)
        expected = H[np.ix_((0, 2), (1, 3))] + \
            beta * A[:, (0, 2)].T @ A[:, (1, 3)]
        np.testing.assert_allclose(L[np.ix_((0, 2), (1, 3))], expected)


class TestIterationMap:
    def test_single_block_hand_computation(self):
        im = iteration_map(None, np.eye(1), 1.0, UpdateOrder(((0,),)))
        np.testing.assert_allclose(im.matrix, [[0.0, 1.0], [0.0, 0.0]])

    @pytest.mark.parametrize("seed", range(4))
    def test_kkt_point_is_fixed_point(self, seed):
        H, A = random_instance(seed, n=4, m=2)
        rng = np.random.default_rng(seed + 100)
        c = rng.standard_normal(4)
        b = rng.standard_normal(2)
        prob = QpProblem(c=c, H=H, A=A, b=b)
        xs, ys = kkt_solve(prob)
        z = np.concatenate([xs, ys])
        for order in enumerate_orders(4, 2):
            im = iteration_map(H, A, 1.0, order)
            np.testing.assert_allclose(im.apply(z, c, b), z, atol=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_engine_sweep_agreement(self, seed):
        # one unbounded engine sweep must equal the affine map exactly
        H, A = random_instance(seed, n=6, m=2)
        rng = np.random.default_rng(seed + 50)
        c = rng.standard_normal(6)
        b = rng.standard_normal(2)
        beta = float(rng.uniform(0.3, 2.0))
        prob = QpProblem(c=c, H=H, A=A, b=b)
        z = rng.standard_normal(8)
        order = enumerate_orders(6, 3)[seed * 7]
        x1, y1 = run_sweep(prob, z[:6], z[6:], order.ordered_groups, beta)
        im = iteration_map(H, A, beta, order)
        np.testing.assert_allclose(np.concatenate([x1, y1]),
                                   im.apply(z, c, b), atol=1e-10)

    def test_singular_sweep_matrix_raises(self):
        A = np.array([[1.0, 0.0], [2.0, 0.0]])  # zero column
        with pytest.raises(BlockDefinitenessError):
            iteration_map(None, A, 1.0, UpdateOrder(((0,), (1,))))


class TestExpectedOperators:
    def test_identity_case(self):
        Q, S, M = expected_operators(None, np.eye(2), 1.0, 2)
        np.testing.assert_allclose(Q, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(S, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(Q @ S, np.eye(2), atol=1e-14)

    def test_average_over_exactly_six_orders(self):
        H, A = random_instance(21)
        orders = enumerate_orders(4, 2)
        assert len(orders) == 6
        manual = np.zeros((4, 4))
        for o in orders:
            manual += np.linalg.inv(gauss_seidel_matrix(H, A, 1.0, o))
        manual /= 6
        Q, _, _ = expected_operators(H, A, 1.0, 2)
        np.testing.assert_allclose(Q, manual, atol=1e-14)

    @pytest.mark.parametrize("seed", range(6))
    def test_formula_matches_direct_average(self, seed):
        # the block formula for the expected map against brute averaging
        H, A = random_instance(seed, n=4, m=2)
        beta = [0.1, 1.0, 10.0][seed % 3]
        Q, S, M = expected_operators(H, A, beta, 2)
        direct = np.zeros((6, 6))
        orders = enumerate_orders(4, 2)
        for o in orders:
            direct += iteration_map(H, A, beta, o).matrix
        direct /= len(orders)
        assert np.max(np.abs(M - direct)) <= 1e-10


class TestCertify:
    def test_identity_case_certificate(self):
        cert = certify(None, np.eye(2), 1.0, 2)
        np.testing.assert_allclose(np.sort(cert.eig_qs.real), [1.0, 1.0],
                                   atol=1e-12)
        assert cert.assumption1_ok
        assert cert.lemma2_ok
        assert cert.partitions_ok
        assert cert.weyl_ok
        # each sweep map is nilpotent here, so the Kronecker radius vanishes
        assert cert.rho_kron == pytest.approx(0.0, abs=1e-12)
        assert cert.as_ok

    @pytest.mark.parametrize("seed", range(10))
    def test_random_instances_certify(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.choice([4, 6]))
        p = int(rng.choice([2, n]))
        beta = float(rng.choice([0.1, 1.0, 10.0]))
        if rng.random() < 0.5:
            H, A = random_instance(seed, n=n, m=int(rng.integers(1, 3)))
        else:
            H, A = random_instance(seed, n=n, m=n, h_zero=True)
        cert = certify(H, A, beta, p)
        assert cert.assumption1_ok
        assert cert.lemma2_ok
        assert cert.partitions_ok
        assert cert.weyl_ok
        # expected-map eigenvalues: inside the unit circle, or exactly one
        mags = np.abs(cert.eig_m)
        assert np.all(mags < 1.0 + 1e-9)
        near_unit = mags > 1.0 - 1e-6
        assert np.all(np.abs(cert.eig_m[near_unit] - 1.0) <= 1e-6)

    def test_degenerate_block_flagged(self):
        A = np.array([[1.0, 0.0], [2.0, 0.0]])
        cert = certify(None, A, 1.0, 2)
        assert cert.assumption1_ok is False
        assert cert.eig_qs is None
        assert cert.lemma2_ok is None

    def test_kron_capacity_guard(self):
        H, A = random_instance(0, n=4, m=2)
        with pytest.raises(ValueError):
            certify(H, A, 1.0, 3)  # p must divide n
        with pytest.raises(CapacityError):
            certify(np.eye(10), np.ones((1, 10)), 1.0, 10, kron=True)

    def test_json_schema_keys(self):
        cert = certify(None, np.eye(2), 1.0, 2)
        doc = cert.to_json_dict()
        for key in ("eig_QS", "eig_M", "rho_kron", "assumption1_ok",
                    "lemma2_ok", "as_ok", "n", "m", "p", "beta"):
            assert key in doc
        assert doc["eig_QS"] == [[1.0, 0.0], [1.0, 0.0]]


class TestKktResidual:
    def test_zero_at_solution(self):
        prob = QpProblem(c=np.zeros(2), H=np.eye(2),
                         A=np.array([[1.0, 1.0]]), b=np.array([2.0]))
        assert kkt_residual(prob, np.array([1.0, 1.0]),
                            np.array([1.0])) == 0.0

    def test_perturbation_grows_residual(self):
        H, A = random_instance(33, n=4, m=2)
        rng = np.random.default_rng(33)
        prob = QpProblem(c=rng.standard_normal(4), H=H, A=A,
                         b=rng.standard_normal(2))
        xs, ys = kkt_solve(prob)
        base = kkt_residual(prob, xs, ys)
        assert base < 1e-10
        mu = np.linalg.eigvalsh(H)[0]
        for delta in (1e-4, 1e-3, 1e-2):
            x = xs.copy()
            x[0] += delta
            # strongly convex H: the stationarity residual grows at least
            # linearly with the free-coordinate perturbation
            assert kkt_residual(prob, x, ys) >= 0.5 * mu * delta

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_engine_residuals(self, seed):
        rng = np.random.default_rng(seed)
        H, A = random_instance(seed, n=5, m=2)
        prob = QpProblem(c=rng.standard_normal(5), H=H, A=A,
                         b=rng.standard_normal(2),
                         lower=np.full(5, -0.5), upper=np.full(5, 0.5))
        x = np.clip(rng.standard_normal(5), prob.lower, prob.upper)
        y = rng.standard_normal(2)
        res = compute_residuals(prob, x, y)
        assert abs(kkt_residual(prob, x, y) - max(res.primal, res.dual)) \
            <= 1e-14
