import math

import numpy as np
import pytest
import scipy.sparse as sp

from racml.problems import (
    CapacityError,
    QpProblem,
    enumerate_orders,
    enumerate_partitions,
    load_qp_manifest,
    make_partition,
    matrix_violations,
    validate_problem,
)


class TestValidateProblem:
    def test_consistent_problem_is_clean(self):
        p = QpProblem(c=np.zeros(2), H=np.eye(2),
                      A=np.array([[1.0, 1.0]]), b=np.array([2.0]))
        assert validate_problem(p).ok

    def test_asymmetric_h_reported(self):
        p = QpProblem(c=np.zeros(2), H=np.array([[1.0, 2.0], [0.0, 1.0]]))
        report = validate_problem(p)
        assert not report.ok
        assert any("symmetric" in msg for msg in report.issues)

    def test_bound_order_reported(self):
        p = QpProblem(c=np.zeros(1), lower=np.array([1.0]),
                      upper=np.array([0.0]))
        report = validate_problem(p)
        assert any("lower > upper" in msg for msg in report.issues)

    def test_validation_never_raises_on_garbage(self):
        p = QpProblem(c=np.array([np.nan, 1.0]),
                      H=np.full((2, 2), np.inf),
                      A=np.zeros((3, 5)), b=np.zeros(2))
        report = validate_problem(p)
        assert len(report.issues) >= 3

    def test_b_without_a(self):
        p = QpProblem(c=np.zeros(2), b=np.array([1.0]))
        assert any("without A" in msg for msg in validate_problem(p).issues)


class TestMatrixViolations:
    def test_dense_nan(self):
        assert matrix_violations(np.array([[np.nan]]))

    def test_sparse_clean(self):
        m = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, 2.0]]))
        assert matrix_violations(m) == []

    def test_sparse_duplicate_indices(self):
        m = sp.csc_matrix((np.array([1.0, 2.0]), np.array([0, 0]),
                           np.array([0, 2])), shape=(2, 1))
        assert any("duplicate" in msg for msg in matrix_violations(m))


class TestMakePartition:
    def test_consecutive_chunks(self):
        part = make_partition(4, 2, randomize=False)
        assert part.groups == ((0, 1), (2, 3))

    def test_remainder_block(self):
        part = make_partition(5, 2, randomize=False)
        assert part.groups == ((0, 1), (2, 3), (4,))

    def test_randomized_is_deterministic(self):
        a = make_partition(12, 5, seed=99, randomize=True)
        b = make_partition(12, 5, seed=99, randomize=True)
        assert a == b
        assert a != make_partition(12, 5, seed=100, randomize=True)

    @pytest.mark.parametrize("seed", range(20))
    def test_disjoint_cover_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 40))
        s = int(rng.integers(1, n + 1))
        part = make_partition(n, s, seed=seed, randomize=bool(seed % 2))
        assert part.covers(n)
        sizes = [len(g) for g in part.groups]
        assert all(sz == s for sz in sizes[:-1])
        assert sizes[-1] == (n % s or s)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            make_partition(4, 0)
        with pytest.raises(ValueError):
            make_partition(4, 5)


class TestEnumeration:
    def test_counts_match_formulas(self):
        for n, p in [(4, 2), (2, 2), (2, 1), (6, 3), (6, 2), (6, 6)]:
            s = n // p
            orders = enumerate_orders(n, p)
            expected = math.factorial(n) // math.factorial(s) ** p
            assert len(orders) == expected
            assert len(set(o.ordered_groups for o in orders)) == expected
            partitions = enumerate_partitions(n, p)
            expected_parts = expected // math.factorial(p)
            assert len(partitions) == expected_parts
            # the partitions underlying the orders are exactly these
            assert len({o.partition_key() for o in orders}) == expected_parts

    def test_spec_counts(self):
        assert len(enumerate_orders(4, 2)) == 6
        assert len(enumerate_orders(2, 2)) == 2
        assert len(enumerate_orders(2, 1)) == 1

    def test_each_order_covers(self):
        for o in enumerate_orders(4, 2):
            assert sorted(i for g in o.ordered_groups for i in g) == [0, 1, 2, 3]

    def test_guards(self):
        with pytest.raises(ValueError):
            enumerate_orders(4, 3)
        with pytest.raises(CapacityError):
            enumerate_orders(12, 2)
        with pytest.raises(CapacityError):
            enumerate_partitions(12, 6)


class TestManifest:
    def test_round_trip(self, tmp_path):
        import json
        import scipy.io

        H = np.array([[2.0, 0.5], [0.5, 1.0]])
        A = sp.csc_matrix(np.array([[1.0, 1.0]]))
        scipy.io.mmwrite(tmp_path / "H.mtx", sp.csc_matrix(H))
        scipy.io.mmwrite(tmp_path / "A.mtx", A)
        (tmp_path / "c.txt").write_text("1.0\n-2.0\n")
        (tmp_path / "b.txt").write_text("3.0\n")
        (tmp_path / "lower.txt").write_text("0.0\n0.0\n")
        manifest = {
            "n": 2, "m": 1, "H": "H.mtx", "A": "A.mtx", "c": "c.txt",
            "b": "b.txt", "lower": "lower.txt", "upper": None,
        }
        path = tmp_path / "problem.json"
        path.write_text(json.dumps(manifest))
        prob = load_qp_manifest(path)
        np.testing.assert_allclose(np.asarray(prob.H.todense()) if sp.issparse(prob.H)
                                   else prob.H, H)
        np.testing.assert_allclose(prob.c, [1.0, -2.0])
        np.testing.assert_allclose(prob.b, [3.0])
        np.testing.assert_allclose(prob.lower, [0.0, 0.0])
        assert np.all(np.isinf(prob.upper))
        assert validate_problem(prob).ok

    def test_dimension_mismatch(self, tmp_path):
        import json

        (tmp_path / "c.txt").write_text("1.0\n")
        path = tmp_path / "problem.json"
        path.write_text(json.dumps({"n": 2, "m": 0, "c": "c.txt"}))
        with pytest.raises(ValueError):
            load_qp_manifest(path)


class TestSolverConfig:
    def test_rejects_bad_parameters(self):
        from racml.problems import SolverConfig

        with pytest.raises(ValueError, match="beta"):
            SolverConfig(beta_penalty=0.0, block_size=1).validate(4)
        with pytest.raises(ValueError, match="block_size"):
            SolverConfig(block_size=9).validate(4)
        with pytest.raises(ValueError, match="tolerances"):
            SolverConfig(block_size=2, tol_primal=0.0).validate(4)
        with pytest.raises(ValueError, match="max_iters"):
            SolverConfig(block_size=2, max_iters=0).validate(4)
        SolverConfig(block_size=2).validate(4)  # clean config passes


class TestGeneratorCompatibility:
    def test_problems_built_from_generated_data_validate(self):
        # QPs assembled from generator output must pass validation
        from racml.data_io import gen_blobs, gen_regression

        ds, _ = gen_regression(20, 8, x_density=0.7, seed=0)
        X = np.asarray(ds.X.todense()) if sp.issparse(ds.X) else ds.X
        ridge_qp = QpProblem(c=-X.T @ ds.y / 20, H=X.T @ X / 20 + np.eye(8))
        assert validate_problem(ridge_qp).ok

        blobs = gen_blobs(10, 2, 6.0, seed=1)
        n = blobs.X.shape[0]
        dual_qp = QpProblem(
            c=-np.ones(n), A=blobs.y.reshape(1, -1), b=np.zeros(1),
            lower=np.zeros(n), upper=np.full(n, 1.0))
        assert validate_problem(dual_qp).ok
