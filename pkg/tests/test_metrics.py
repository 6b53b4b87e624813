from itertools import combinations
from math import comb, factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from xlmimo.channel import ChannelRealization, ClusterSpec, CouplingMatrix, LinkModel, link_correlations
from xlmimo.geometry import ArrayGeometry, ClusterCenter, wavelength_from_ghz
from xlmimo.metrics import (GramSpectrum, SnrGrid, SsLinkSummary, elementary_symmetric, ergodic_se_mc,
                            gram_spectrum, op_ss_approx, outage_mc, product_exp_cdf, product_exp_pdf, se_ds_upper,
                            se_samples, se_ss_approx, se_ss_upper)
from xlmimo.numerics import RngStream, cgauss

# E{log2 det(I + W)} for a 2x2 complex Wishart W with identity covariance. Double integral of the
# joint eigenvalue density exp(-x-y)(x-y)^2/2 against log2((1+x)(1+y)), frozen.
LAGUERRE_2X2_SE = 2.5810421468126576
# E{log2(1 + XY)} for unit exponentials, from int_0^inf exp(-x) exp(1/x) E1(1/x) dx / ln 2, frozen.
PRODUCT_SE_UNIT = 0.7391768906633736
# 1 - 2 K1(2), frozen from the Bessel oracle.
PRODUCT_CDF_AT_ONE = 0.720268236366955

LAM = wavelength_from_ghz(7.0)


def summary(varpi):
    v = np.asarray(varpi, float)
    one = np.ones_like(v)
    return SsLinkSummary(v, one, one, one, one)


def unit_products(seed, n):
    rng = np.random.default_rng(seed)
    return rng.exponential(size=n) * rng.exponential(size=n)


class TestSnrGrid:
    def test_valid(self):
        g = SnrGrid.from_db([-10, 0, 10])
        assert list(g) == pytest.approx([0.1, 1, 10])
        assert len(g) == 3

    @pytest.mark.parametrize("vals", [[], [1, 1], [2, 1], [0, 1], [-1], [np.inf]])
    def test_invalid(self, vals):
        with pytest.raises(ValueError):
            SnrGrid(tuple(vals))


class TestErgodicMc:
    def test_zero_channel(self):
        h = np.zeros((5, 3, 2))
        for g in (0.1, 1.0, 100.0):
            assert ergodic_se_mc(h, g).mean == 0.0

    def test_scalar(self):
        for g in (0.0, 0.5, 3.0):
            assert ergodic_se_mc(np.ones((1, 1)), g).mean == np.log2(1 + g)

    def test_laguerre_oracle(self):
        h = cgauss(np.random.default_rng(1), (10 ** 6, 2, 2))
        est = ergodic_se_mc(h, 1.0)
        assert est.mean == pytest.approx(LAGUERRE_2X2_SE, rel=0.005)
        assert abs(est.mean - LAGUERRE_2X2_SE) < 4 * est.stderr

    def test_unitary_invariance(self):
        rng = np.random.default_rng(2)
        h = cgauss(rng, (200, 5, 3))
        u, _ = np.linalg.qr(cgauss(rng, (5, 5)))
        v, _ = np.linalg.qr(cgauss(rng, (3, 3)))
        a = se_samples(gram_spectrum(h), 2.0)
        b = se_samples(gram_spectrum(u @ h @ v), 2.0)
        assert np.allclose(a, b, rtol=1e-12)

    def test_sources(self):
        rng = np.random.default_rng(3)
        h = cgauss(rng, (40, 4, 6))
        ref = ergodic_se_mc(h, 1.0)
        real = ChannelRealization(h, "analytical", RngStream(0))
        assert ergodic_se_mc(real, 1.0) == ref
        assert ergodic_se_mc([h[:15], h[15:]], 1.0).mean == pytest.approx(ref.mean, rel=1e-14)
        assert ergodic_se_mc(gram_spectrum(h), 1.0) == ref
        assert ref.trials == 40 and ref.stderr > 0

    def test_stderr(self):
        spec = gram_spectrum(cgauss(np.random.default_rng(4), (500, 2, 2)))
        s = se_samples(spec, 1.0)
        est = ergodic_se_mc(GramSpectrum(spec.values.copy()), 1.0)
        assert est.stderr == pytest.approx(np.std(s, ddof=1) / np.sqrt(500))

    def test_rejects(self):
        with pytest.raises(ValueError):
            ergodic_se_mc(np.full((1, 2, 2), np.nan), 1.0)
        with pytest.raises(ValueError):
            ergodic_se_mc(np.ones((1, 2, 2)), -1.0)
        with pytest.raises(ValueError):
            ergodic_se_mc([], 1.0)


class TestOutageMc:
    def test_deterministic_step(self):
        h = np.diag([2.0, 1.0])[None]    # lambda_max(H^H H) = 4
        assert outage_mc(h, 1.0, 3.99).probability == 0.0
        assert outage_mc(h, 1.0, 4.0).probability == 1.0
        assert outage_mc(h, 2.0, 7.9).probability == 0.0
        assert outage_mc(h, 2.0, 8.1).probability == 1.0

    def test_limits(self):
        h = cgauss(np.random.default_rng(5), (2000, 3, 3))
        assert outage_mc(h, 1.0, 1e-12).probability == 0.0
        assert outage_mc(h, 1.0, 1e12).probability == 1.0

    def test_wilson(self):
        h = cgauss(np.random.default_rng(6), (1000, 2, 2))
        est = outage_mc(h, 1.0, 1.0)
        assert est.wilson_low <= est.probability <= est.wilson_high
        assert 0 < est.wilson_halfwidth < 0.05
        assert est.stderr == pytest.approx(np.sqrt(est.probability * (1 - est.probability) / 1000))

    def test_rejects(self):
        with pytest.raises(ValueError):
            outage_mc(np.ones((1, 2, 2)), 0.0, 1.0)


class TestProductLaw:
    def test_endpoints(self):
        assert product_exp_cdf(0.0, 1.0, 1.0) == 0.0
        assert product_exp_cdf(np.inf, 2.0, 3.0) == 1.0
        assert product_exp_cdf(1e6, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_at_one(self):
        assert special.k1(2.0) == pytest.approx((1 - PRODUCT_CDF_AT_ONE) / 2, rel=1e-14)
        assert product_exp_cdf(1.0, 1.0, 1.0) == pytest.approx(PRODUCT_CDF_AT_ONE, rel=1e-12)
        frac = np.mean(unit_products(7, 10 ** 7) <= 1.0)
        assert frac == pytest.approx(PRODUCT_CDF_AT_ONE, abs=5 * np.sqrt(0.2 / 10 ** 7))

    def test_ks_against_samples(self):
        z = unit_products(8, 10 ** 6)
        assert stats.kstest(z, lambda x: product_exp_cdf(x, 1.0, 1.0)).statistic < 0.005

    def test_rates(self):
        rng = np.random.default_rng(9)
        z = rng.exponential(1 / 2.0, 10 ** 6) * rng.exponential(1 / 0.5, 10 ** 6)
        assert stats.kstest(z, lambda x: product_exp_cdf(x, 2.0, 0.5)).statistic < 0.005

    @pytest.mark.parametrize("z", [0.1, 1.0, 10.0])
    def test_density_integrates_to_cdf(self, z):
        val = integrate.quad(product_exp_pdf, 0, z, args=(1.5, 0.7), limit=200, epsabs=1e-13)[0]
        assert val == pytest.approx(product_exp_cdf(z, 1.5, 0.7), abs=1e-6)

    def test_small_argument_branch(self):
        z = np.array([0.999e-8, 1.001e-8])
        f = product_exp_cdf(z, 1.0, 1.0)
        assert f[1] / f[0] == pytest.approx(1.001e-8 / 0.999e-8, rel=1e-3)
        assert np.all(np.diff(product_exp_cdf(np.logspace(-14, 2, 400), 1.0, 1.0)) > 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            product_exp_cdf(1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            product_exp_cdf(-1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            product_exp_pdf(0.0, 1.0, 1.0)


class TestSpecularClosedForms:
    def test_zero_gamma(self):
        s = summary([0.5, 2.0])
        assert se_ss_approx(s, 0.0) == 0.0
        assert se_ss_upper(s, 0.0) == 0.0

    def test_single_path(self):
        assert se_ss_approx(summary([1.0]), 1.0) == pytest.approx(PRODUCT_SE_UNIT, rel=1e-9)
        assert se_ss_upper(summary([1.0]), 1.0) == 1.0
        z = unit_products(10, 10 ** 7)
        assert np.mean(np.log2(1 + z)) == pytest.approx(PRODUCT_SE_UNIT, rel=0.003)

    @given(st.lists(st.floats(1e-4, 1e3), min_size=1, max_size=6), st.floats(1e-3, 1e4))
    @settings(max_examples=50, deadline=None)
    def test_upper_dominates(self, varpi, gamma):
        s = summary(varpi)
        assert se_ss_upper(s, gamma) >= se_ss_approx(s, gamma) - 1e-9

    def test_approx_monotone(self):
        s = summary([0.3, 1.0, 4.0])
        vals = [se_ss_approx(s, g) for g in np.logspace(-4, 4, 33)]
        assert np.all(np.diff(vals) > 0)

    def test_approx_matches_mc_per_path(self):
        s = summary([0.4, 2.5])
        z = unit_products(11, 2 * 10 ** 6).reshape(2, -1)
        mc = np.mean(np.log2(1 + 3.0 * 0.4 * z[0]) + np.log2(1 + 3.0 * 2.5 * z[1]))
        assert se_ss_approx(s, 3.0) == pytest.approx(mc, rel=0.003)

    def test_extreme_gamma(self):
        # high SNR: log2(a) + E log2(XY) = log2(a) - 2 euler_gamma / ln2
        a = 1e8
        assert se_ss_approx(summary([1.0]), a) == pytest.approx(np.log2(a) - 2 * np.euler_gamma / np.log(2), rel=1e-6)
        assert se_ss_approx(summary([1.0]), 1e-9) == pytest.approx(1e-9 / np.log(2), rel=1e-6)

    def test_outage_limits(self):
        s = summary([0.5, 1.0, 2.0])
        assert op_ss_approx(s, 1.0, 0.0) == 0.0
        assert op_ss_approx(s, 1.0, 1e-12) < 1e-9
        assert op_ss_approx(s, 1.0, 1e8) == pytest.approx(1.0)
        assert op_ss_approx(summary([1.0]), 1.0, 1.0) == pytest.approx(PRODUCT_CDF_AT_ONE, rel=1e-12)

    @given(st.lists(st.floats(1e-3, 1e2), min_size=1, max_size=5), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3),
           st.floats(1.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_outage_monotone(self, varpi, gbar, gth, factor):
        s = summary(varpi)
        p = op_ss_approx(s, gbar, gth)
        assert 0 <= p <= 1
        assert op_ss_approx(s, gbar, gth * factor) >= p
        assert op_ss_approx(s, gbar * factor, gth) <= p
        assert op_ss_approx(summary(np.asarray(varpi) * factor), gbar, gth) <= p

    def test_outage_matches_mc(self):
        s = summary([0.5, 1.5])
        z = unit_products(12, 2 * 10 ** 6).reshape(2, -1)
        # the strongest path decides: outage means every path falls short
        mc = np.mean((0.5 * z[0] <= 0.8) & (1.5 * z[1] <= 0.8))
        assert op_ss_approx(s, 1.0, 0.8) == pytest.approx(mc, abs=0.002)

    def test_summary_from_single_path_link(self):
        geom = ArrayGeometry.half_wavelength(16, LAM)
        link = LinkModel(tx_geom=geom, rx_geom=geom, tx_clusters=[ClusterSpec(ClusterCenter(80 * LAM, 0.2), 1e-8)],
                         rx_clusters=[ClusterSpec(ClusterCenter(300 * LAM, -0.1), 1e-8)],
                         coupling=CouplingMatrix([[1j]]))
        corr = link_correlations(link)
        s = SsLinkSummary.from_link(link, corr)
        assert s.paths == 1
        assert s.lam_rx[0] == pytest.approx(1.0) and s.lam_tx[0] == pytest.approx(1.0)
        assert s.varpi[0] == pytest.approx(corr.rx[0].eigenvalues[0] * corr.tx[0].eigenvalues[0])

    def test_summary_validation(self):
        with pytest.raises(ValueError):
            SsLinkSummary([1.0, 2.0], [1.0], [1.0], [1.0], [1.0])
        with pytest.raises(ValueError):
            SsLinkSummary([-1.0], [1.0], [1.0], [1.0], [1.0])
        with pytest.raises(ValueError):
            op_ss_approx(summary([0.0]), 1.0, 1.0)


def subset_sum(values, k):
    return sum(np.prod(c) for c in combinations(values, k)) if k else 1.0


class TestDoubleScatteringBound:
    def test_zero_gamma(self):
        assert se_ds_upper([1, 2], [3, 4, 5], [0.5], 0.0) == 0.0

    @pytest.mark.parametrize("n_r, n_t, l", [(8, 4, 3), (5, 5, 5), (12, 2, 7)])
    def test_binomial_identity(self, n_r, n_t, l):
        for gamma in (0.01, 1.0, 30.0):
            direct = sum(factorial(k) ** 2 * gamma ** k * comb(n_r, k) * comb(l, k) * comb(n_t, k)
                         for k in range(min(n_r, n_t, l) + 1))
            assert se_ds_upper(np.ones(n_r), np.ones(n_t), np.ones(l), gamma) == pytest.approx(np.log2(direct),
                                                                                                rel=1e-12)

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=7))
    @settings(max_examples=50)
    def test_elementary_symmetric(self, values):
        e = elementary_symmetric(values)
        for k in range(len(values) + 1):
            assert e[k] == pytest.approx(subset_sum(values, k), rel=1e-10, abs=1e-12)

    def test_subset_oracle(self):
        rng = np.random.default_rng(13)
        lr, lt, lc = rng.uniform(0, 3, 6), rng.uniform(0, 3, 4), rng.uniform(0, 1, 5)
        gamma = 0.7
        direct = sum(factorial(k) ** 2 * gamma ** k * subset_sum(lr, k) * subset_sum(lt, k) * subset_sum(lc, k)
                     for k in range(5))
        assert se_ds_upper(lr, lt, lc, gamma) == pytest.approx(np.log2(direct), rel=1e-12)

    def test_scalar_case_is_jensen(self):
        assert se_ds_upper([2.0], [3.0], [0.5], 0.1) == pytest.approx(np.log2(1 + 0.1 * 3.0))

    def test_monotone(self):
        vals = [se_ds_upper([1, 2, 3], [2, 1], [0.6, 0.4], g) for g in np.logspace(-3, 3, 25)]
        assert np.all(np.diff(vals) > 0)

    def test_dimension_limit(self):
        with pytest.raises(ValueError, match="Monte-Carlo"):
            se_ds_upper(np.ones(13), np.ones(2), np.ones(2), 1.0)
        assert np.isfinite(se_ds_upper(np.ones(13), np.ones(2), np.ones(2), 1.0, max_dim=16))

    def test_dominates_white_mc(self):
        h = cgauss(np.random.default_rng(14), (20000, 4, 3)) @ (np.eye(3) / np.sqrt(3)) @ \
            np.conj(np.swapaxes(cgauss(np.random.default_rng(15), (20000, 2, 3)), 1, 2))
        for g in (0.1, 1.0, 10.0, 100.0):
            est = ergodic_se_mc(h, g)
            assert se_ds_upper(np.ones(4), np.ones(2), np.full(3, 1 / 3), g) >= est.mean - 3 * est.stderr


def weak_majorization_gaps(rng, n=4):
    l1, l2 = rng.uniform(0, 2, n), rng.uniform(0, 2, n)
    a = cgauss(rng, (n, n))
    # same spectrum as diag(l1) A diag(l2) A^H, in Hermitian form
    s = np.sqrt(l1)[:, None] * a
    lhs = np.linalg.eigvalsh(s @ np.diag(l2) @ s.conj().T)[::-1]
    rhs = np.sort(l1)[::-1] * np.sort(l2)[::-1] * np.sort(np.linalg.eigvalsh(a @ a.conj().T))[::-1]
    return np.cumsum(rhs) - np.cumsum(lhs)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=200)
def test_weak_majorization(seed):
    assert np.all(weak_majorization_gaps(np.random.default_rng(seed)) >= -1e-9)
