import numpy as np
import pytest

from dynfuse import linalg
from dynfuse.errors import NonFiniteError, ShapeMismatchError
from dynfuse.linalg import CpTensor, FusionTensor, finite_diff_check


def oracle_mode3(t, s):
    """Triple-loop contraction oracle over (z, p, q) storage."""
    z, p, q = t.shape
    out = np.zeros((p, q))
    for zi in range(z):
        for pi in range(p):
            for qi in range(q):
                out[pi, qi] += t[zi, pi, qi] * s[zi]
    return out


def oracle_materialize(a, b, c):
    """Elementwise rank-one expansion: t[p,q,z] = sum_r a[p,r] b[q,r] c[z,r]."""
    p, r = a.shape
    q, z = b.shape[0], c.shape[0]
    t = np.zeros((z, p, q))
    for zi in range(z):
        for pi in range(p):
            for qi in range(q):
                for ri in range(r):
                    t[zi, pi, qi] += a[pi, ri] * b[qi, ri] * c[zi, ri]
    return t


def rand_tensor(rng, p, q, z):
    return FusionTensor(rng.standard_normal((z, p, q)))


class TestMode3Contract:
    def test_one_hot_selects_slice(self):
        rng = np.random.default_rng(0)
        t = rand_tensor(rng, 4, 5, 3)
        for k in range(3):
            s = np.zeros(3)
            s[k] = 1.0
            np.testing.assert_array_equal(linalg.mode3_contract(t, s), t.data[k])

    def test_zero_vector_gives_zero_matrix(self):
        t = rand_tensor(np.random.default_rng(1), 2, 3, 4)
        assert np.all(linalg.mode3_contract(t, np.zeros(4)) == 0.0)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        t = rand_tensor(rng, 2, 3, 2)
        s = rng.standard_normal(2)
        got = linalg.mode3_contract(t, s)
        np.testing.assert_allclose(got, oracle_mode3(t.data, s), atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        t = rand_tensor(rng, 5, 4, 6)
        s1, s2 = rng.standard_normal(6), rng.standard_normal(6)
        alpha, beta = 0.7, -2.3
        lhs = linalg.mode3_contract(t, alpha * s1 + beta * s2)
        rhs = (alpha * linalg.mode3_contract(t, s1)
               + beta * linalg.mode3_contract(t, s2))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dimension_mismatch_names_both_shapes(self):
        t = rand_tensor(np.random.default_rng(4), 2, 2, 3)
        with pytest.raises(ShapeMismatchError) as err:
            linalg.mode3_contract(t, np.zeros(4))
        assert "3" in str(err.value) and "4" in str(err.value)


class TestCpContract:
    def test_rank_one_unit_case(self):
        e = np.zeros((3, 1))
        e[0, 0] = 1.0
        t = CpTensor(e, e.copy(), e.copy())
        out = linalg.cp_contract(t, np.array([1.0, 0.0, 0.0]))
        expected = np.zeros((3, 3))
        expected[0, 0] = 1.0
        np.testing.assert_array_equal(out, expected)

    def test_zero_vector_gives_zero_matrix(self):
        rng = np.random.default_rng(5)
        t = CpTensor(rng.standard_normal((4, 2)), rng.standard_normal((5, 2)),
                     rng.standard_normal((3, 2)))
        assert np.all(linalg.cp_contract(t, np.zeros(3)) == 0.0)

    def test_matches_materialized_contraction(self):
        rng = np.random.default_rng(6)
        t = CpTensor(rng.standard_normal((5, 4)), rng.standard_normal((7, 4)),
                     rng.standard_normal((3, 4)))
        s = rng.standard_normal(3)
        full = FusionTensor(oracle_materialize(t.a, t.b, t.c))
        np.testing.assert_allclose(linalg.cp_contract(t, s),
                                   linalg.mode3_contract(full, s), atol=1e-10)
        np.testing.assert_allclose(t.materialize().data, full.data, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(7)
        t = CpTensor(rng.standard_normal((3, 2)), rng.standard_normal((6, 2)),
                     rng.standard_normal((4, 2)))
        s1, s2 = rng.standard_normal(4), rng.standard_normal(4)
        lhs = linalg.cp_contract(t, 1.5 * s1 - 0.5 * s2)
        rhs = 1.5 * linalg.cp_contract(t, s1) - 0.5 * linalg.cp_contract(t, s2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_param_count_law(self):
        rng = np.random.default_rng(8)
        for p, q, z, r in [(4, 6, 3, 2), (8, 16, 8, 6), (1, 1, 1, 1)]:
            cp = CpTensor(rng.standard_normal((p, r)), rng.standard_normal((q, r)),
                          rng.standard_normal((z, r)))
            full = rand_tensor(rng, p, q, z)
            assert cp.param_count() == r * (p + q + z)
            assert full.param_count() == p * q * z


class TestBackwards:
    def test_mode3_zero_upstream(self):
        rng = np.random.default_rng(9)
        t = rand_tensor(rng, 3, 4, 2)
        dt, ds = linalg.mode3_contract_backward(t, rng.standard_normal(2),
                                                np.zeros((3, 4)))
        assert np.all(dt.data == 0.0) and np.all(ds == 0.0)

    def test_mode3_hand_case(self):
        # t all-ones with p=q=1, z=2; s=(1,2); g=[[3]]
        t = FusionTensor(np.ones((2, 1, 1)))
        dt, ds = linalg.mode3_contract_backward(t, np.array([1.0, 2.0]),
                                                np.array([[3.0]]))
        np.testing.assert_array_equal(dt.data[:, 0, 0], [3.0, 6.0])
        np.testing.assert_array_equal(ds, [3.0, 3.0])

    def test_cp_zero_upstream(self):
        rng = np.random.default_rng(10)
        t = CpTensor(rng.standard_normal((2, 3)), rng.standard_normal((4, 3)),
                     rng.standard_normal((5, 3)))
        da, db, dc, ds = linalg.cp_contract_backward(
            t, rng.standard_normal(5), np.zeros((2, 4)))
        for g in (da, db, dc, ds):
            assert np.all(g == 0.0)

    def test_cp_scalar_hand_case(self):
        t = CpTensor(np.array([[2.0]]), np.array([[3.0]]), np.array([[5.0]]))
        da, db, dc, ds = linalg.cp_contract_backward(
            t, np.array([1.0]), np.array([[1.0]]))
        assert da[0, 0] == pytest.approx(15.0)
        assert db[0, 0] == pytest.approx(10.0)
        assert dc[0, 0] == pytest.approx(6.0)
        assert ds[0] == pytest.approx(30.0)

    @pytest.mark.parametrize("p,q,z", [(2, 3, 2), (8, 16, 8), (5, 7, 3)])
    def test_mode3_backward_finite_differences(self, p, q, z):
        rng = np.random.default_rng(p * 100 + q * 10 + z)
        t0 = rng.standard_normal((z, p, q))
        s0 = rng.standard_normal(z)
        g = rng.standard_normal((p, q))
        sizes = [t0.size, s0.size]

        def f(flat):
            t = FusionTensor(flat[:sizes[0]].reshape(z, p, q))
            s = flat[sizes[0]:]
            value = float((g * linalg.mode3_contract(t, s)).sum())
            dt, ds = linalg.mode3_contract_backward(t, s, g)
            return value, np.concatenate([dt.data.ravel(), ds])

        assert finite_diff_check(f, np.concatenate([t0.ravel(), s0])) < 1e-5

    @pytest.mark.parametrize("p,q,z,r", [(4, 6, 5, 3), (8, 16, 8, 6)])
    def test_cp_backward_finite_differences(self, p, q, z, r):
        rng = np.random.default_rng(p + q + z + r)
        a0, b0, c0 = (rng.standard_normal((p, r)), rng.standard_normal((q, r)),
                      rng.standard_normal((z, r)))
        s0 = rng.standard_normal(z)
        g = rng.standard_normal((p, q))
        splits = np.cumsum([a0.size, b0.size, c0.size])

        def f(flat):
            a, b, c = (flat[:splits[0]].reshape(p, r),
                       flat[splits[0]:splits[1]].reshape(q, r),
                       flat[splits[1]:splits[2]].reshape(z, r))
            s = flat[splits[2]:]
            t = CpTensor(a, b, c)
            value = float((g * linalg.cp_contract(t, s)).sum())
            da, db, dc, ds = linalg.cp_contract_backward(t, s, g)
            return value, np.concatenate([da.ravel(), db.ravel(), dc.ravel(), ds])

        x0 = np.concatenate([a0.ravel(), b0.ravel(), c0.ravel(), s0])
        assert finite_diff_check(f, x0) < 1e-5


class TestFiniteDiffCheck:
    def test_quadratic_is_nearly_exact(self):
        def f(x):
            return float(x[0] ** 2), np.array([2.0 * x[0]])

        assert finite_diff_check(f, np.array([3.0]), step=1e-5) < 1e-8

    def test_constant_function(self):
        def f(x):
            return 1.0, np.zeros_like(x)

        assert finite_diff_check(f, np.array([0.3, -2.0])) == 0.0

    def test_nonfinite_propagates(self):
        def f(x):
            return float("nan"), np.zeros_like(x)

        with pytest.raises(NonFiniteError):
            finite_diff_check(f, np.array([1.0]))

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda x: (0.0, np.zeros_like(x)), np.array([1.0]), step=0.0)


class TestContainers:
    def test_fusion_tensor_rejects_nonfinite(self):
        with pytest.raises(NonFiniteError):
            FusionTensor(np.array([[[np.nan]]]))

    def test_cp_tensor_rejects_rank_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            CpTensor(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))

    def test_fusion_tensor_dims(self):
        t = FusionTensor(np.zeros((3, 4, 5)))
        assert (t.p, t.q, t.z) == (4, 5, 3)
