import math

import mpmath
import numpy as np
import pytest

from mixedergo import (
    CertificateUnavailable,
    DomainError,
    PriorSpec,
    build_oneway,
    build_twoway,
    build_report,
    check_corollary1,
    check_oneway,
    check_theorem1,
    digamma,
    drift_certificate,
    estimate_K,
    gamma_ratio,
    h_norm,
    lhs_condition_e,
    lhs_condition_u,
    search_witness_s,
    summarize_design,
    validate_model,
)
from mixedergo.ergodicity import detect_oneway, detect_twoway

from _helpers import random_design, random_valid_prior

mpmath.mp.dps = 50

EULER_GAMMA = 0.57721566490153286060651209008240243


def _twoway_paper_model(seed=101):
    rng = np.random.default_rng(seed)
    design = build_twoway(5, 6, 1.5 + rng.standard_normal(30))
    prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5, -0.5], b=[0.0, 0.0])
    return design, prior


class TestDigamma:
    def test_at_one(self):
        assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-13)

    def test_at_half(self):
        assert digamma(0.5) == pytest.approx(-EULER_GAMMA - 2.0 * math.log(2.0), abs=1e-13)

    def test_against_mpmath_over_range(self):
        rng = np.random.default_rng(0)
        xs = 10.0 ** rng.uniform(-3, 6, size=400)
        for x in xs:
            ref = float(mpmath.digamma(x))
            assert digamma(float(x)) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_recurrence_identity(self):
        rng = np.random.default_rng(1)
        for x in 10.0 ** rng.uniform(-2, 3, size=200):
            lhs = digamma(x + 1.0)
            rhs = digamma(float(x)) + 1.0 / x
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            digamma(0.0)
        with pytest.raises(DomainError):
            digamma(-1.0)


class TestGammaRatio:
    def test_unit_case(self):
        assert gamma_ratio(2.0, 1.0) == pytest.approx(0.5, rel=1e-15)

    def test_zero_exponent_is_exact_one(self):
        assert gamma_ratio(7.3, 0.0) == 1.0

    def test_against_mpmath(self):
        for x, s in [(15.0, 0.9), (2.0, -0.3), (0.7, 0.2), (140.0, 1.0), (3.5, -2.0)]:
            ref = float(2.0 ** (-s) * mpmath.gamma(x - s) / mpmath.gamma(x))
            assert gamma_ratio(x, s) == pytest.approx(ref, rel=1e-12)

    def test_large_argument_no_overflow(self):
        # direct Gamma would overflow past ~170; log space must not
        val = gamma_ratio(500.0, 0.9)
        assert 0.0 < val < 1.0

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_ratio(0.0, 0.5)
        with pytest.raises(DomainError):
            gamma_ratio(1.0, 1.0)

    def test_ratio_decreasing_in_x(self):
        # for fixed z in (0, 1], Gamma(x - z)/Gamma(x) decreases in x
        for z in (0.1, 0.5, 1.0):
            xs = np.linspace(z + 0.05, z + 20.0, 300)
            vals = [gamma_ratio(float(x), z) * 2.0 ** z for x in xs]
            assert np.all(np.diff(vals) < 0.0)


class TestPropertyChecks:
    def test_oneway_diffuse_proper(self):
        rng = np.random.default_rng(2)
        d = build_oneway(3, [2, 2, 2], rng.standard_normal(6))
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5], b=[0.0])
        res = check_theorem1(summarize_design(d), prior)
        assert res.verdict
        assert res.condition_b == (True,)   # 2 > 1
        assert res.c_threshold == pytest.approx(2.0)

    def test_oneway_c2_fails_block_inequality(self):
        rng = np.random.default_rng(3)
        d = build_oneway(2, [2, 2], rng.standard_normal(4))
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5], b=[0.0])
        res = check_theorem1(summarize_design(d), prior)
        assert not res.verdict
        assert res.condition_b == (False,)  # 1 > 1 fails strictly

    def test_positive_b_trivial_parts(self):
        rng = np.random.default_rng(4)
        d = random_design(rng)
        s = summarize_design(d)
        prior = PriorSpec(a_e=0.0, b_e=1.0, a=[0.0] * d.r, b=[1.0] * d.r)
        res = check_theorem1(s, prior)
        assert all(res.condition_a) and res.condition_c and res.condition_d
        expect_b = tuple(qi > s.q - s.t for qi in s.q_sizes)
        assert res.condition_b == expect_b

    def test_corollary_twoway_six_by_six(self):
        rng = np.random.default_rng(5)
        d = build_twoway(6, 6, rng.standard_normal(36))
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5, -0.5], b=[0.0, 0.0])
        assert check_corollary1(summarize_design(d), prior).verdict

    def test_corollary_twoway_five_by_six_inapplicable(self):
        d, prior = _twoway_paper_model()
        res = check_corollary1(summarize_design(d), prior)
        assert not res.verdict
        assert res.condition_b[0] is False  # 4 > 4 fails strictly

    def test_corollary_implies_propriety_conditions(self):
        rng = np.random.default_rng(6)
        hits = 0
        for _ in range(1000):
            d = random_design(rng, n_max=20, p_max=3, r_max=3, q_max=5)
            prior = random_valid_prior(rng, d)
            s = summarize_design(d)
            cor = check_corollary1(s, prior)
            if cor.verdict:
                hits += 1
                assert check_theorem1(s, prior).verdict
        assert hits >= 20  # the property must actually be exercised


class TestLhsConditions:
    def test_twoway_at_one(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        assert lhs_condition_e(1.0, s, prior) == pytest.approx(10.0 / 28.0, rel=1e-12)

    def test_twoway_near_paper_value(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        both = max(lhs_condition_e(0.9, s, prior), lhs_condition_u(0.9, s, prior))
        assert 0.86 <= both <= 0.88

    def test_continuity_at_zero(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        assert abs(lhs_condition_e(1e-9, s, prior) - 1.0) <= 1e-6
        # the block sum approaches the number of contributing blocks
        assert abs(lhs_condition_u(1e-9, s, prior) - 2.0) <= 1e-6

    def test_oneway_reduction_against_mpmath(self):
        rng = np.random.default_rng(7)
        d = build_oneway(3, [2, 2, 1], rng.standard_normal(5))
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5], b=[0.0])
        s = summarize_design(d)
        got_e = lhs_condition_e(0.5, s, prior)
        got_u = lhs_condition_u(0.5, s, prior)
        ref_e = float(2.0 ** -0.5 * 3.0 ** 0.5 * mpmath.gamma(2.0) / mpmath.gamma(2.5))
        ref_u = float(2.0 ** -0.5 * mpmath.gamma(0.5) / mpmath.gamma(1.0))
        assert got_e == pytest.approx(ref_e, rel=1e-12)
        assert got_u == pytest.approx(ref_u, rel=1e-12)

    def test_zero_trace_blocks_contribute_nothing(self):
        # t = q: every block is fully identified and the sum is empty
        rng = np.random.default_rng(8)
        d = random_design(rng, n_max=25, p_max=2, r_max=2, q_max=3)
        s = summarize_design(d)
        if s.t < s.q:
            pytest.skip("needs a fully identified design")
        prior = PriorSpec(a_e=0.0, b_e=1.0, a=[0.5] * d.r, b=[1.0] * d.r)
        assert lhs_condition_u(0.5, s, prior) == 0.0

    def test_domain_error_outside_interval(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        with pytest.raises(DomainError):
            lhs_condition_e(0.0, s, prior)
        with pytest.raises(DomainError):
            lhs_condition_e(1.5, s, prior)
        with pytest.raises(DomainError):
            lhs_condition_u(2.0 + 1e-9, s, prior)  # s_tilde/2 = 2

    def test_smoothness_on_grid(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        grid = np.linspace(0.05, 0.99, 120)
        h = grid[1] - grid[0]
        for f in (lhs_condition_e, lhs_condition_u):
            vals = np.array([f(float(x), s, prior) for x in grid])
            assert np.all(np.isfinite(vals))
            tiny = h / 10.0
            for k in range(len(grid) - 1):
                slope = abs(
                    f(float(grid[k] + tiny), s, prior) - f(float(grid[k] - tiny), s, prior)
                ) / (2.0 * tiny)
                assert abs(vals[k + 1] - vals[k]) <= 10.0 * h * (slope + 1e-6)


class TestWitnessSearch:
    def test_twoway_paper_model_found(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        res = search_witness_s(s, prior)
        assert res.verdict
        assert 0.0 < res.witness <= 1.0
        assert max(res.lhs_e_at_witness, res.lhs_u_at_witness) < 1.0

    def test_gate_on_prior_shape_condition(self):
        # a zero-b block with a_i >= 0 disables the whole criterion
        d, _ = _twoway_paper_model()
        s = summarize_design(d)
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[0.1, -0.5], b=[0.0, 0.0])
        res = search_witness_s(s, prior)
        assert not res.verdict and res.condition1 == (False, True)

    def test_precheck_short_circuit(self):
        # N + 2 a_e <= p + t leaves no admissible witness
        rng = np.random.default_rng(9)
        d = build_oneway(10, [2, 2] + [1] * 8, rng.standard_normal(12))
        s = summarize_design(d)
        prior = PriorSpec(a_e=-1.0, b_e=0.0, a=[-0.5], b=[0.0])
        res = search_witness_s(s, prior)
        assert not res.precheck_e
        assert res.witness is None

    def test_corollary_implies_unit_witness(self):
        rng = np.random.default_rng(10)
        hits = 0
        for _ in range(150):
            d = random_design(rng, n_max=25, p_max=3, r_max=2, q_max=5)
            prior = random_valid_prior(rng, d)
            s = summarize_design(d)
            if not check_corollary1(s, prior).verdict:
                continue
            hits += 1
            res = search_witness_s(s, prior)
            assert res.verdict
            assert lhs_condition_e(1.0, s, prior) < 1.0
            assert lhs_condition_u(1.0, s, prior) < 1.0
        assert hits >= 10


class TestOnewayClosedForm:
    def test_diffuse_margin_value(self):
        res = check_oneway(3, 9, 0.0, -0.5, n_sizes=[3, 3, 3])
        ref = float(2.0 * mpmath.exp(mpmath.digamma(1.0)))
        assert res.digamma_margin == pytest.approx(ref, rel=1e-12)
        assert res.digamma_margin == pytest.approx(1.1229, abs=5e-4)
        assert res.verdict

    def test_verdict_boundary_in_n(self):
        # c = 3 diffuse: sharp condition needs N >= 5
        for n_obs, expect in [(4, False), (5, True), (6, True)]:
            sizes = [1, 1, n_obs - 2]
            res = check_oneway(3, n_obs, 0.0, -0.5, n_sizes=sizes)
            assert res.verdict is expect

    def test_conservative_factor_at_least_one(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            c = int(rng.integers(2, 12))
            sizes = [int(v) for v in rng.integers(1, 8, size=c)]
            n_obs = sum(sizes)
            a1 = -float(rng.uniform(0.01, c / 2.0 - 0.01))
            res = check_oneway(c, n_obs, float(rng.uniform(-1, 2)), a1, n_sizes=sizes)
            assert res.conservative_factor >= 1.0 - 1e-12

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            check_oneway(1, 5, 0.0, -0.5)
        with pytest.raises(DomainError):
            check_oneway(3, 9, 0.0, -1.5)  # c/2 + a_1 = 0


class TestDriftCertificate:
    def test_twoway_paper_model(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        k_est = estimate_K(s, d, budget=100)
        cert = drift_certificate(s, prior, 0.9, k_estimate=k_est)
        assert 0.0 <= cert.rho < 1.0
        d1, d2, d3, d4, d5 = cert.delta
        recomputed = max(d1 + d2 / cert.alpha, d3, d4 / cert.alpha, d5)
        assert recomputed == cert.rho
        assert cert.big_l > 0.0 and math.isfinite(cert.big_l)

    def test_case_without_zero_b_blocks(self):
        rng = np.random.default_rng(12)
        d = random_design(rng, n_max=25, p_max=2, r_max=2, q_max=3)
        prior = PriorSpec(a_e=1.0, b_e=1.0, a=[1.0] * d.r, b=[1.0] * d.r)
        s = summarize_design(d)
        res = search_witness_s(s, prior)
        assert res.verdict
        # c is unrestricted beyond positivity here
        cert = drift_certificate(s, prior, res.witness, c=7.0, k_estimate=1.0)
        assert cert.delta[3] == 0.0 and cert.delta[4] == 0.0
        assert cert.rho == max(cert.delta[0] + cert.delta[1] / cert.alpha, cert.delta[2])
        assert cert.rho < 1.0

    def test_delta5_below_one_on_admissible_c(self):
        rng = np.random.default_rng(13)
        count = 0
        while count < 100:
            d = random_design(rng, n_max=20, p_max=2, r_max=3, q_max=4)
            prior = random_valid_prior(rng, d, zero_b_prob=1.0)
            if not validate_model(d, prior).passed:
                continue
            s = summarize_design(d)
            res = search_witness_s(s, prior)
            if not res.verdict:
                continue
            count += 1
            cert = drift_certificate(s, prior, res.witness, k_estimate=0.0)
            assert cert.delta[4] < 1.0

    def test_unavailable_when_delta1_exceeds_one(self):
        # small N relative to p + t: the error-variance factor stays >= 1
        rng = np.random.default_rng(14)
        d = build_oneway(3, [1, 1, 2], rng.standard_normal(4))
        s = summarize_design(d)
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5], b=[0.0])
        assert lhs_condition_e(0.5, s, prior) > 1.0
        with pytest.raises(CertificateUnavailable):
            drift_certificate(s, prior, 0.5, k_estimate=0.0)

    def test_c_domain_validation(self):
        d, prior = _twoway_paper_model()
        s = summarize_design(d)
        with pytest.raises(DomainError):
            drift_certificate(s, prior, 0.9, c=0.6, k_estimate=0.0)
        with pytest.raises(DomainError):
            drift_certificate(s, prior, 0.9, c=0.5, k_estimate=0.0)  # needs < a_tilde = 1/2


class TestHNormAndK:
    def test_zero_projected_response(self):
        d = build_oneway(3, [2, 2, 2], np.zeros(6))
        s = summarize_design(d)
        assert h_norm(s, d, [1.0, 1.0]) == 0.0

    def test_vanishes_for_large_error_variance(self):
        rng = np.random.default_rng(15)
        d = random_design(rng, n_max=15, p_max=2, r_max=2, q_max=3)
        s = summarize_design(d)
        su = np.full(d.r, 0.7)
        vals = [h_norm(s, d, np.concatenate([[se], su])) for se in (1.0, 1e4, 1e8, 1e12)]
        assert vals[-1] < vals[-2] < vals[-3]
        assert vals[-1] <= 1e-8 * max(vals)

    def test_bounded_over_log_grid(self):
        rng = np.random.default_rng(16)
        d = random_design(rng, n_max=15, p_max=2, r_max=2, q_max=4)
        s = summarize_design(d)
        k_est = estimate_K(s, d, budget=300)
        worst = 0.0
        for _ in range(10_000):
            sigma2 = 10.0 ** rng.uniform(-8, 8, size=d.r + 1)
            val = h_norm(s, d, sigma2)
            assert math.isfinite(val)
            worst = max(worst, val)
        assert worst <= k_est

    def test_k_zero_for_zero_response(self):
        d = build_oneway(3, [2, 2, 2], np.zeros(6))
        s = summarize_design(d)
        assert estimate_K(s, d, budget=50) == 0.0

    def test_k_monotone_in_budget(self):
        rng = np.random.default_rng(17)
        d = random_design(rng, n_max=15, p_max=2, r_max=2, q_max=3)
        s = summarize_design(d)
        k1 = estimate_K(s, d, budget=40)
        k2 = estimate_K(s, d, budget=80)
        k3 = estimate_K(s, d, budget=160)
        assert k1 <= k2 <= k3


class TestStructureDetection:
    def test_oneway_detected(self):
        d = build_oneway(4, [2, 1, 3, 2], np.arange(8.0))
        assert detect_oneway(d) == (4, (2, 1, 3, 2))

    def test_twoway_detected(self):
        d = build_twoway(3, 4, np.arange(12.0))
        assert detect_twoway(d) == (3, 4)

    def test_generic_design_not_detected(self):
        rng = np.random.default_rng(18)
        d = random_design(rng)
        assert detect_oneway(d) is None
        assert detect_twoway(d) is None


class TestReport:
    def test_twoway_paper_report(self):
        d, prior = _twoway_paper_model()
        rep = build_report(d, prior)
        assert not rep.corollary1.verdict
        assert rep.theorem2.verdict
        assert rep.certified_geometric and rep.propriety_established
        assert rep.twoway is not None and rep.twoway.t_matches and rep.twoway.zeta_matches
        assert rep.drift is not None and rep.drift.rho < 1.0

    def test_report_serializes_with_estimate_flags(self):
        import json

        d, prior = _twoway_paper_model()
        rep = build_report(d, prior)
        payload = rep.to_dict()
        text = json.dumps(payload)
        back = json.loads(text)
        assert back["drift_certificate"]["k_estimate_estimated"] is True
        assert back["drift_certificate"]["bound_constant_L_estimated"] is True
        assert back["witness_search"]["verdict"] is True

    def test_witness_interval_invariant(self):
        rng = np.random.default_rng(19)
        for _ in range(100):
            d = random_design(rng, n_max=20, p_max=3, r_max=2, q_max=4)
            prior = random_valid_prior(rng, d)
            s = summarize_design(d)
            res = search_witness_s(s, prior)
            if res.witness is not None:
                assert 0.0 < res.witness <= 1.0
                assert res.witness < res.s_tilde / 2.0
                assert res.lhs_e_at_witness < 1.0 and res.lhs_u_at_witness < 1.0
