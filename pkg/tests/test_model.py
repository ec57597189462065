import numpy as np
import pytest
from hypothesis import given, strategies as st

from factormle import (
    Dataset,
    FactorParams,
    IllConditionedError,
    InvalidInputError,
    foc_residuals,
    log_likelihood,
    read_dataset_csv,
    sample_second_moment,
    transpose_representation,
)
from factormle.linalg import spd_cholesky

from conftest import random_params, random_second_moment


def dense_loglik(m_zz, p):
    """Oracle: build Sigma_zz explicitly, use generic determinant/inverse."""
    n = p.n_vars
    szz = p.loadings @ p.factor_cov @ p.loadings.T + np.diag(p.idio_var)
    _, logdet = np.linalg.slogdet(szz)
    return -0.5 / n * (logdet + np.trace(m_zz @ np.linalg.inv(szz)))


class TestDataset:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[1.0, np.nan]]))
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[1.0], [2.0]]))  # T = 1
        with pytest.raises(InvalidInputError):
            Dataset(np.ones(5))

    def test_demean_idempotent(self, rng):
        d = Dataset(rng.standard_normal((4, 9)) + 3.0)
        once = d.demean()
        twice = once.demean()
        np.testing.assert_allclose(twice.values, once.values, atol=1e-14)

    def test_values_are_frozen(self, rng):
        d = Dataset(rng.standard_normal((3, 5)))
        with pytest.raises(ValueError):
            d.values[0, 0] = 1.0


class TestSampleSecondMoment:
    def test_constant_dataset_gives_zero(self):
        d = Dataset(np.tile(np.array([[2.0], [-1.0]]), (1, 6)))
        np.testing.assert_allclose(sample_second_moment(d), np.zeros((2, 2)))

    def test_single_variable_hand_computed(self):
        # values (1, -1): mean 0, (1/T) sum z^2 = (1 + 1)/2 = 1 (division by T).
        d = Dataset(np.array([[1.0, -1.0]]))
        np.testing.assert_allclose(sample_second_moment(d), np.array([[1.0]]))

    def test_matches_entrywise_oracle(self, rng):
        d = Dataset(rng.standard_normal((3, 5)))
        m = sample_second_moment(d)
        v = d.values
        zbar = v.mean(axis=1)
        oracle = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                oracle[i, j] = sum(
                    (v[i, t] - zbar[i]) * (v[j, t] - zbar[j]) for t in range(5)
                ) / 5.0
        np.testing.assert_allclose(m, oracle, atol=1e-12)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_invariant_to_constant_shift(self, seed):
        r = np.random.default_rng(seed)
        v = r.standard_normal((4, 7))
        shift = r.standard_normal(4)
        m1 = sample_second_moment(Dataset(v))
        m2 = sample_second_moment(Dataset(v + shift[:, None]))
        np.testing.assert_allclose(m1, m2, atol=1e-12)

    def test_psd_and_rank(self, rng):
        d = Dataset(rng.standard_normal((6, 4)))
        m = sample_second_moment(d)
        evals = np.linalg.eigvalsh(m)
        assert evals.min() > -1e-12
        assert np.sum(evals > 1e-10) <= 3  # rank <= T - 1


class TestLogLikelihood:
    def test_identity_case(self):
        # Lambda = 0, Sigma_ee = I, M_zz = I: value is -(1/2N) tr(I) = -1/2.
        p = FactorParams(np.zeros((4, 1)), np.ones(4), np.eye(1))
        val = log_likelihood(np.eye(4), p)
        assert val == pytest.approx(-0.5, abs=1e-12)

    def test_matches_dense_oracle_small(self, rng):
        p = random_params(rng, 4, 1)
        m = random_second_moment(rng, 4)
        assert log_likelihood(m, p) == pytest.approx(dense_loglik(m, p), rel=1e-10)

    def test_matches_dense_oracle_moderate(self, rng):
        p = random_params(rng, 200, 2)
        m = random_second_moment(rng, 200)
        assert log_likelihood(m, p) == pytest.approx(dense_loglik(m, p), rel=1e-8)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_rotation_invariance(self, seed):
        # Lambda -> Lambda R, M_ff -> R^{-1} M_ff R^{-T} leaves the value unchanged.
        r_ = np.random.default_rng(seed)
        n, r = 8, 2
        lam = r_.standard_normal((n, r))
        s2 = r_.uniform(0.5, 4.0, n)
        a = r_.standard_normal((r, r))
        mff = a @ a.T + 0.5 * np.eye(r)
        rot = r_.standard_normal((r, r)) + 2.0 * np.eye(r)
        m = random_second_moment(r_, n)
        p1 = FactorParams(lam, s2, mff)
        rot_inv = np.linalg.inv(rot)
        p2 = FactorParams(lam @ rot, s2, rot_inv @ mff @ rot_inv.T)
        assert log_likelihood(m, p1) == pytest.approx(log_likelihood(m, p2), rel=1e-9)

    def test_shape_mismatch_rejected(self, rng):
        p = random_params(rng, 5, 2)
        with pytest.raises(InvalidInputError):
            log_likelihood(np.eye(4), p)

    def test_singular_inner_matrix_raises_with_condition(self):
        with pytest.raises(IllConditionedError) as exc:
            spd_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), "test matrix")
        assert exc.value.condition is not None


class TestFactorParams:
    def test_asymmetric_factor_cov_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            FactorParams(
                rng.standard_normal((5, 2)),
                np.ones(5),
                np.array([[1.0, 0.5], [0.2, 1.0]]),
            )

    def test_nonpositive_idio_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            FactorParams(rng.standard_normal((5, 2)), np.zeros(5), np.eye(2))

    def test_r_must_be_below_n(self, rng):
        with pytest.raises(InvalidInputError):
            FactorParams(rng.standard_normal((2, 2)), np.ones(2), np.eye(2))


class TestFocResiduals:
    def test_exact_fit_gives_zero(self, rng):
        p = random_params(rng, 8, 2)
        m_zz = p.loadings @ p.factor_cov @ p.loadings.T + np.diag(p.idio_var)
        res = foc_residuals(m_zz, p)
        assert max(res) < 1e-10

    def test_matches_dense_oracle(self, rng):
        p = random_params(rng, 12, 2)
        m_zz = random_second_moment(rng, 12)
        szz = p.loadings @ p.factor_cov @ p.loadings.T + np.diag(p.idio_var)
        szz_inv = np.linalg.inv(szz)
        lam = p.loadings
        t1_lead = lam.T @ szz_inv @ m_zz
        r1 = np.linalg.norm(t1_lead - lam.T) / np.linalg.norm(t1_lead)
        d1 = np.diag(szz_inv)
        d2 = np.diag(szz_inv @ m_zz @ szz_inv)
        r2 = np.linalg.norm(d1 - d2) / np.linalg.norm(d1)
        t3_lead = lam.T @ szz_inv @ lam
        r3 = np.linalg.norm(t3_lead - lam.T @ szz_inv @ m_zz @ szz_inv @ lam)
        r3 /= np.linalg.norm(t3_lead)
        res = foc_residuals(m_zz, p)
        np.testing.assert_allclose(res, (r1, r2, r3), rtol=1e-8)

    def test_third_condition_redundant_given_first(self, rng):
        # R3 = -R1 Sigma_zz^{-1} Lambda, so the third condition adds nothing.
        p = random_params(rng, 10, 2)
        m_zz = random_second_moment(rng, 10)
        szz = p.loadings @ p.factor_cov @ p.loadings.T + np.diag(p.idio_var)
        szz_inv = np.linalg.inv(szz)
        lam = p.loadings
        r1 = lam.T @ szz_inv @ (m_zz - szz)
        r3 = lam.T @ szz_inv @ lam - lam.T @ szz_inv @ m_zz @ szz_inv @ lam
        np.testing.assert_allclose(r3, -r1 @ szz_inv @ lam, atol=1e-10)


class TestTranspose:
    def test_involution_and_definition(self, rng):
        d = Dataset(rng.standard_normal((3, 5)))
        dt = transpose_representation(d)
        assert dt.values.shape == (5, 3)
        np.testing.assert_array_equal(dt.values, d.values.T)
        np.testing.assert_array_equal(transpose_representation(dt).values, d.values)

    def test_transposed_fit_estimates_score_side(self, rng):
        # With time-varying noise, fitting the transpose recovers the factor
        # scores in the loading slot and the time-dimension variances in the
        # idiosyncratic slot.
        from factormle import EMConfig, canonical_correlations, fit

        n, t, r = 80, 40, 2
        lam = rng.standard_normal((n, r))
        f = rng.standard_normal((t, r))
        tau2 = rng.uniform(0.5, 3.0, t)
        z = lam @ f.T + rng.standard_normal((n, t)) * np.sqrt(tau2)[None, :]
        est, _ = fit(transpose_representation(Dataset(z)), r, EMConfig())
        assert est.params.loadings.shape == (t, r)
        assert est.params.idio_var.shape == (t,)
        assert canonical_correlations(est.params.loadings, f)[r - 1] > 0.8
        assert np.corrcoef(est.params.idio_var, tau2)[0, 1] > 0.8


class TestCsv:
    def test_round_trip_with_header(self, tmp_path, rng):
        v = rng.standard_normal((3, 6))
        path = tmp_path / "panel.csv"
        lines = ["x1,x2,x3"]
        lines += [",".join(repr(float(x)) for x in col) for col in v.T]
        path.write_text("\n".join(lines) + "\n")
        d = read_dataset_csv(path)
        np.testing.assert_array_equal(d.values, v)

    def test_round_trip_without_header(self, tmp_path, rng):
        v = rng.standard_normal((2, 4))
        path = tmp_path / "panel.csv"
        path.write_text("\n".join(",".join(repr(float(x)) for x in col) for col in v.T))
        d = read_dataset_csv(path)
        np.testing.assert_array_equal(d.values, v)

    def test_malformed_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1.0,2.0\n3.0,oops\n")
        with pytest.raises(InvalidInputError, match="line 3"):
            read_dataset_csv(path)

    def test_missing_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n3.0,\n")
        with pytest.raises(InvalidInputError, match="line 2"):
            read_dataset_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(InvalidInputError, match="line 2"):
            read_dataset_csv(path)

    def test_nan_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\nnan,4.0\n")
        with pytest.raises(InvalidInputError, match="line 2"):
            read_dataset_csv(path)
