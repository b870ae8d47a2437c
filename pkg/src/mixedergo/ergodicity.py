"""Propriety and geometric-ergodicity certification.

Three layers of checks, all evaluated before any sampling:

* posterior propriety via four checkable conditions on (design, prior);
* a strictly stronger four-condition variant whose truth certifies a
  geometric convergence rate outright;
* the sharp two-condition criterion, whose second condition asks for a
  witness exponent s in (0, 1] (also below s_tilde / 2) at which two
  gamma-ratio expressions both fall below one.  The witness is located
  by a grid search, as the expressions are smooth but not provably
  unimodal.

When a witness exists, :func:`drift_certificate` assembles the explicit
drift inequality E(v(sigma2') | sigma2) <= rho v(sigma2) + L for

    v(sigma2) = alpha se^s + sum_i su_i^s + alpha se^-c + sum_i su_i^-c,

reporting rho < 1 and the constants behind it.  The additive constant L
depends on a scalar K that bounds the norm of the u-block conditional
mean uniformly over the variances; K is finite but has no closed form,
so it is estimated numerically and every K-dependent output is flagged
as an estimate.  rho itself never depends on K.

All strict inequalities are evaluated exactly on the given floats, with
no epsilon slack: boundary cases fail, matching the statements being
checked.  All gamma-function arithmetic runs in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

from .errors import CertificateUnavailable, DomainError
from .model import summarize_design, validate_model

SEARCH_EPS = 1e-8
DEFAULT_GRID_SIZE = 4096
_K_SEARCH_SEED = 0x5EED_0C7A
_K_LOG_LO, _K_LOG_HI = math.log(1e-8), math.log(1e8)


# ---------------------------------------------------------------------------
# Special functions

def digamma(x):
    """Derivative of log Gamma, via upward recurrence into the asymptotic
    regime and a Bernoulli-number tail series.

    Accurate to ~1e-13 relative for x in [1e-3, 1e6].
    """
    x = float(x)
    if not (math.isfinite(x) and x > 0.0):
        raise DomainError(f"digamma requires x > 0, got {x}")
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = inv2 * (
        1.0 / 12.0
        - inv2 * (
            1.0 / 120.0
            - inv2 * (
                1.0 / 252.0
                - inv2 * (
                    1.0 / 240.0
                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))
                )
            )
        )
    )
    return acc + math.log(x) - 0.5 / x - tail


def gamma_ratio(x, s):
    """2^-s Gamma(x - s) / Gamma(x), via log-gamma differences.

    Both gamma arguments must be positive; s may be negative (used with
    s = -c for the inverse-moment factors).  Exactly 1.0 at s = 0.
    """
    x = float(x)
    s = float(s)
    if not (math.isfinite(x) and math.isfinite(s)):
        raise DomainError("gamma_ratio requires finite arguments")
    if x <= 0.0 or x - s <= 0.0:
        raise DomainError(f"gamma_ratio requires x > 0 and x - s > 0, got x={x}, s={s}")
    return float(math.exp(gammaln(x - s) - gammaln(x) - s * math.log(2.0)))


def _gamma_ratio_grid(x, s_grid):
    # vectorized over the witness grid; overflow to inf is fine (value >= 1)
    with np.errstate(over="ignore"):
        return np.exp(gammaln(x - s_grid) - gammaln(x) - s_grid * np.log(2.0))


# ---------------------------------------------------------------------------
# Propriety / geometric-ergodicity condition records

@dataclass(frozen=True)
class ConditionCheck:
    """Four-condition verdict: per-block prior-shape condition (A), a
    per-block inequality on q_i + 2 a_i (B), a sample-size inequality
    (C), and positive residual mass (D)."""

    condition_a: tuple
    condition_b: tuple
    condition_c: bool
    condition_d: bool
    b_threshold: float
    c_threshold: float

    @property
    def verdict(self):
        return all(self.condition_a) and all(self.condition_b) and self.condition_c and self.condition_d

    def to_dict(self):
        return {
            "condition_a_per_block": list(self.condition_a),
            "condition_b_per_block": list(self.condition_b),
            "condition_b_threshold": self.b_threshold,
            "condition_c": self.condition_c,
            "condition_c_threshold": self.c_threshold,
            "condition_d": self.condition_d,
            "verdict": self.verdict,
        }


def _condition_a(prior):
    return tuple(
        bool((ai < 0.0 and bi == 0.0) or bi > 0.0) for ai, bi in zip(prior.a, prior.b)
    )


def check_theorem1(summary, prior):
    """Sufficient conditions for posterior propriety.

    (A) per block, a_i < b_i = 0 or b_i > 0;
    (B) per block, q_i + 2 a_i > q - t;
    (C) N + 2 a_e > p - 2 sum_i a_i 1(a_i < 0);
    (D) 2 b_e + SSE > 0.
    """
    b_thr = float(summary.q - summary.t)
    c_thr = summary.p - 2.0 * float(np.sum(prior.a[prior.a < 0.0]))
    return ConditionCheck(
        condition_a=_condition_a(prior),
        condition_b=tuple(
            bool(qi + 2.0 * ai > b_thr) for qi, ai in zip(summary.q_sizes, prior.a)
        ),
        condition_c=bool(summary.n_obs + 2.0 * prior.a_e > c_thr),
        condition_d=bool(2.0 * prior.b_e + summary.sse > 0.0),
        b_threshold=b_thr,
        c_threshold=float(c_thr),
    )


def check_corollary1(summary, prior):
    """Strengthened conditions that certify geometric ergodicity outright:
    (B') q_i + 2 a_i > q - t + 2 and (C') N + 2 a_e > p + t + 2, with
    (A) and (D) as in :func:`check_theorem1`."""
    b_thr = float(summary.q - summary.t + 2)
    c_thr = float(summary.p + summary.t + 2)
    return ConditionCheck(
        condition_a=_condition_a(prior),
        condition_b=tuple(
            bool(qi + 2.0 * ai > b_thr) for qi, ai in zip(summary.q_sizes, prior.a)
        ),
        condition_c=bool(summary.n_obs + 2.0 * prior.a_e > c_thr),
        condition_d=bool(2.0 * prior.b_e + summary.sse > 0.0),
        b_threshold=b_thr,
        c_threshold=c_thr,
    )


# ---------------------------------------------------------------------------
# The sharp criterion: witness search over s

def _witness_interval(summary, prior):
    s_tilde = prior.s_tilde(summary.q_sizes, summary.n_obs)
    return s_tilde, min(1.0, s_tilde / 2.0 - SEARCH_EPS)


def _require_valid_s(summary, prior, s):
    s = float(s)
    s_tilde = prior.s_tilde(summary.q_sizes, summary.n_obs)
    if not (0.0 < s <= 1.0 and s < s_tilde / 2.0):
        raise DomainError(
            f"s={s} outside (0, 1] intersected with (0, s_tilde/2) where s_tilde={s_tilde}"
        )
    return s


def lhs_condition_e(s, summary, prior):
    """Error-variance side of the sharp criterion:
    2^-s (p + t)^s Gamma(N/2 + a_e - s) / Gamma(N/2 + a_e)."""
    s = _require_valid_s(summary, prior, s)
    return gamma_ratio(summary.n_obs / 2.0 + prior.a_e, s) * (summary.p + summary.t) ** s


def lhs_condition_u(s, summary, prior):
    """Random-effects side of the sharp criterion:
    2^-s sum_i [Gamma(q_i/2 + a_i - s) / Gamma(q_i/2 + a_i)] zeta_i^s,
    with the convention 0^s = 0 so fully identified blocks drop out."""
    s = _require_valid_s(summary, prior, s)
    total = 0.0
    for qi, ai, zi in zip(summary.q_sizes, prior.a, summary.zeta):
        if zi > 0.0:
            total += gamma_ratio(qi / 2.0 + ai, s) * zi ** s
    return total


@dataclass(frozen=True)
class WitnessSearch:
    """Outcome of the grid search for the witness exponent."""

    condition1: tuple
    precheck_e: bool
    precheck_u: tuple
    witness: Optional[float]
    lhs_e_at_witness: Optional[float]
    lhs_u_at_witness: Optional[float]
    grid_size: int
    s_tilde: float

    @property
    def verdict(self):
        return self.witness is not None

    def to_dict(self):
        return {
            "condition1_per_block": list(self.condition1),
            "precheck_sample_size": self.precheck_e,
            "precheck_per_block": list(self.precheck_u),
            "witness_s": self.witness,
            "lhs_e_at_witness": self.lhs_e_at_witness,
            "lhs_u_at_witness": self.lhs_u_at_witness,
            "grid_size": self.grid_size,
            "s_tilde": self.s_tilde,
            "verdict": self.verdict,
        }


def search_witness_s(summary, prior, grid_size=DEFAULT_GRID_SIZE):
    """Grid search for an s with both criterion sides strictly below one.

    Returns the search record; ``.witness`` carries the minimizing s when
    one exists at this resolution, else None.  Cheap necessary conditions
    (N + 2 a_e > p + t, and q_i + 2 a_i > zeta_i per block) short-circuit
    the search, as does failure of the per-block prior-shape condition.
    """
    grid_size = int(grid_size)
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    cond1 = _condition_a(prior)
    s_tilde, hi = _witness_interval(summary, prior)
    precheck_e = bool(summary.n_obs + 2.0 * prior.a_e > summary.p + summary.t)
    precheck_u = tuple(
        bool(qi + 2.0 * ai > zi)
        for qi, ai, zi in zip(summary.q_sizes, prior.a, summary.zeta)
    )
    base = dict(
        condition1=cond1,
        precheck_e=precheck_e,
        precheck_u=precheck_u,
        witness=None,
        lhs_e_at_witness=None,
        lhs_u_at_witness=None,
        grid_size=grid_size,
        s_tilde=s_tilde,
    )
    if not all(cond1) or not precheck_e or not all(precheck_u) or hi <= SEARCH_EPS:
        return WitnessSearch(**base)

    grid = np.geomspace(SEARCH_EPS, hi, grid_size + 1)[1:]
    le = _gamma_ratio_grid(summary.n_obs / 2.0 + prior.a_e, grid) * (
        float(summary.p + summary.t) ** grid
    )
    lu = np.zeros_like(grid)
    for qi, ai, zi in zip(summary.q_sizes, prior.a, summary.zeta):
        if zi > 0.0:
            lu += _gamma_ratio_grid(qi / 2.0 + ai, grid) * zi ** grid
    worst = np.maximum(le, lu)
    k = int(np.argmin(worst))
    if worst[k] < 1.0:
        base.update(
            witness=float(grid[k]),
            lhs_e_at_witness=float(le[k]),
            lhs_u_at_witness=float(lu[k]),
        )
    return WitnessSearch(**base)


# ---------------------------------------------------------------------------
# One-way closed forms

@dataclass(frozen=True)
class OnewayCheck:
    """Closed-form geometric-ergodicity conditions for the one-way model.

    ``verdict`` is the sharper condition (N + 2 a_e >= c + 2 together
    with 1 < 2 exp(psi(c/2 + a_1))).  ``conservative_verdict`` is the
    older group-size-dependent condition (N + 2 a_e >= c + 3 and
    c min{ (sum n_i/(n_i+1))^-1, max_i n_i / N } < 2 exp(psi(c/2 + a_1)));
    it implies the sharper one, which ``conservative_implies_verdict``
    records.  The sharper condition is sufficient, not necessary: the
    direct witness search can certify instances this form rejects.
    """

    c: int
    n_obs: int
    digamma_margin: float
    sample_size_ok: bool
    digamma_ok: bool
    verdict: bool
    conservative_factor: Optional[float]
    conservative_verdict: Optional[bool]

    @property
    def conservative_implies_verdict(self):
        if self.conservative_verdict is None:
            return None
        return (not self.conservative_verdict) or self.verdict

    def to_dict(self):
        return {
            "c": self.c,
            "n_obs": self.n_obs,
            "digamma_margin": self.digamma_margin,
            "sample_size_ok": self.sample_size_ok,
            "digamma_ok": self.digamma_ok,
            "verdict": self.verdict,
            "conservative_factor": self.conservative_factor,
            "conservative_verdict": self.conservative_verdict,
            "conservative_implies_verdict": self.conservative_implies_verdict,
        }


def check_oneway(c, n_obs, a_e, a_1, n_sizes=None):
    """Evaluate the one-way closed forms; group sizes are only needed for
    the conservative criterion's min term."""
    c = int(c)
    if c < 2:
        raise DomainError("one-way check requires c >= 2")
    if not c / 2.0 + a_1 > 0.0:
        raise DomainError(f"digamma argument c/2 + a_1 = {c / 2.0 + a_1} must be positive")
    margin = 2.0 * math.exp(digamma(c / 2.0 + a_1))
    size_ok = bool(n_obs + 2.0 * a_e >= c + 2.0)
    dig_ok = bool(1.0 < margin)
    factor = None
    conservative = None
    if n_sizes is not None:
        n_sizes = [int(v) for v in n_sizes]
        if len(n_sizes) != c or any(v < 1 for v in n_sizes):
            raise DomainError("n_sizes must list a positive size per group")
        if sum(n_sizes) != int(n_obs):
            raise DomainError("n_sizes must sum to n_obs")
        harm = sum(ni / (ni + 1.0) for ni in n_sizes)
        factor = float(c * min(1.0 / harm, max(n_sizes) / float(n_obs)))
        conservative = bool(n_obs + 2.0 * a_e >= c + 3.0 and factor < margin)
    return OnewayCheck(
        c=c,
        n_obs=int(n_obs),
        digamma_margin=float(margin),
        sample_size_ok=size_ok,
        digamma_ok=dig_ok,
        verdict=size_ok and dig_ok,
        conservative_factor=factor,
        conservative_verdict=conservative,
    )


# ---------------------------------------------------------------------------
# Drift certificate

@dataclass(frozen=True)
class DriftCertificate:
    """Explicit constants for the geometric drift inequality.

    rho = max{delta1 + delta2/alpha, delta3, delta4/alpha, delta5} < 1;
    when no block has b_i = 0, delta4 = delta5 = 0 and the same maximum
    applies.  L is additive and depends on ``k_estimate``, a numerically
    estimated lower bound for the true (finite, closed-form-free) K, so
    L is itself flagged as an estimate; rho is exact.
    """

    s: float
    c: float
    alpha: float
    rho: float
    big_l: float
    delta: tuple
    kappa: float
    k_estimate: float
    k_is_estimate: bool = True
    zero_b_blocks: tuple = field(default_factory=tuple)

    def drift_function(self, sigma2):
        """Evaluate v(sigma2) = alpha se^s + sum su^s + alpha se^-c + sum su^-c."""
        sigma2 = np.asarray(sigma2, dtype=float).reshape(-1)
        se, su = sigma2[0], sigma2[1:]
        return float(
            self.alpha * se ** self.s
            + np.sum(su ** self.s)
            + self.alpha * se ** (-self.c)
            + np.sum(su ** (-self.c))
        )

    def to_dict(self):
        return {
            "s": self.s,
            "c": self.c,
            "alpha": self.alpha,
            "rho": self.rho,
            "bound_constant_L": self.big_l,
            "bound_constant_L_estimated": True,
            "delta": list(self.delta),
            "kappa": self.kappa,
            "k_estimate": self.k_estimate,
            "k_estimate_estimated": True,
            "zero_b_blocks": list(self.zero_b_blocks),
        }


def drift_certificate(summary, prior, s, c=None, k_estimate=0.0):
    """Assemble the drift certificate at witness s.

    When some block has b_i = 0, c must lie in (0, 1/2) and below
    a_tilde = -max over those blocks of a_i (default: min(1/4, a_tilde/2));
    otherwise any c > 0 works (default 1/4).

    Raises CertificateUnavailable when delta1 >= 1, delta3 >= 1, or (with
    zero-b blocks present) delta5 >= 1: no alpha can close the bound then.
    """
    s = _require_valid_s(summary, prior, s)
    k_estimate = float(k_estimate)
    if not (math.isfinite(k_estimate) and k_estimate >= 0.0):
        raise ValueError("k_estimate must be a finite nonnegative float")
    if not 2.0 * prior.b_e + summary.sse > 0.0:
        raise DomainError(
            "model violates the residual-mass condition (2 b_e + SSE > 0); "
            "the drift construction is undefined"
        )
    a_blocks = prior.zero_b_blocks
    if a_blocks:
        if not all(prior.a[i] < 0.0 for i in a_blocks):
            raise CertificateUnavailable(
                "a zero-b block has a_i >= 0; the per-block prior-shape condition fails"
            )
        a_tilde = -max(float(prior.a[i]) for i in a_blocks)
        if c is None:
            c = min(0.25, a_tilde / 2.0)
        c = float(c)
        if not (0.0 < c < 0.5 and c < a_tilde):
            raise DomainError(
                f"c={c} outside (0, 1/2) intersected with (0, a_tilde) where a_tilde={a_tilde}"
            )
    else:
        c = 0.25 if c is None else float(c)
        if not c > 0.0:
            raise DomainError("c must be positive")

    nu = summary.n_obs / 2.0 + prior.a_e
    g0_s = gamma_ratio(nu, s)
    g_s = [gamma_ratio(qi / 2.0 + ai, s) for qi, ai in zip(summary.q_sizes, prior.a)]
    g0_neg = gamma_ratio(nu, -c)
    g_neg = [gamma_ratio(qi / 2.0 + ai, -c) for qi, ai in zip(summary.q_sizes, prior.a)]
    # central inverse-moment factor Gamma(q_i/2 - c) / Gamma(q_i/2)
    chi_fac = [
        math.exp(gammaln(qi / 2.0 - c) - gammaln(qi / 2.0)) for qi in summary.q_sizes
    ]

    delta1 = g0_s * (summary.p + summary.t) ** s
    delta2 = sum(
        xi ** s * gi for xi, gi in zip(summary.xi, g_s) if xi > 0.0
    )
    delta3 = sum(
        zi ** s * gi for zi, gi in zip(summary.zeta, g_s) if zi > 0.0
    )
    if a_blocks:
        delta4 = (
            2.0 ** (-c)
            * summary.lambda_max ** c
            * sum(g_neg[i] * chi_fac[i] for i in a_blocks)
        )
        delta5 = 2.0 ** (-c) * max(g_neg[i] * chi_fac[i] for i in a_blocks)
    else:
        delta4 = 0.0
        delta5 = 0.0

    if delta1 >= 1.0 or delta3 >= 1.0 or (a_blocks and delta5 >= 1.0):
        raise CertificateUnavailable(
            f"no drift certificate at s={s}, c={c}: "
            f"delta1={delta1:.6g}, delta3={delta3:.6g}, delta5={delta5:.6g}"
        )

    threshold = max(delta2 / (1.0 - delta1), delta4)
    # any alpha strictly above the threshold closes the bound; doubling keeps
    # rho comfortably below one, and a degenerate zero threshold (both terms
    # vanish, e.g. Z = 0) admits any positive alpha
    alpha = 2.0 * threshold if threshold > 0.0 else 1.0

    kappa = (
        alpha * 2.0 ** s * g0_s * prior.b_e ** s
        + 2.0 ** s * sum(gi * bi ** s for gi, bi in zip(g_s, prior.b))
        + alpha * 2.0 ** (-c) * g0_neg * (prior.b_e + summary.sse / 2.0) ** (-c)
        + sum(
            g_neg[i] * (2.0 * prior.b[i]) ** (-c)
            for i in range(summary.r)
            if prior.b[i] > 0.0
        )
    )
    big_l = (
        kappa
        + alpha * g0_s * (summary.norm_izx_y + summary.fro_izx_z * k_estimate) ** (2.0 * s)
        + sum(
            g_s[i] * (math.sqrt(summary.q_sizes[i]) * k_estimate) ** (2.0 * s)
            for i in range(summary.r)
        )
    )
    rho = max(delta1 + delta2 / alpha, delta3, delta4 / alpha, delta5)
    return DriftCertificate(
        s=s,
        c=c,
        alpha=float(alpha),
        rho=float(rho),
        big_l=float(big_l),
        delta=(float(delta1), float(delta2), float(delta3), float(delta4), float(delta5)),
        kappa=float(kappa),
        k_estimate=k_estimate,
        zero_b_blocks=a_blocks,
    )


# ---------------------------------------------------------------------------
# The K bound: exact evaluation of h and a numerical estimate of its sup

def h_norm(summary, design, sigma2):
    """Norm of the u-block conditional mean,
    h(sigma2) = || (M + sigma2_e D^-1)^-1 Z^T (I - P_X) y ||.

    The right-hand side is projected onto range(M) (an exact-arithmetic
    identity) before solving, which keeps extreme variance ratios from
    amplifying rounding noise along the null space.
    """
    sigma2 = np.asarray(sigma2, dtype=float).reshape(-1)
    se, su = float(sigma2[0]), sigma2[1:]
    if not (np.all(np.isfinite(sigma2)) and np.all(sigma2 > 0.0)):
        raise DomainError("variances must be finite and strictly positive")
    rhs = summary.project_onto_range(summary.ztilde_y)
    b_mat = summary.ztz_ipx + se * np.diag(summary.d_inv_diag(su))
    try:
        sol = cho_solve(cho_factor(b_mat, lower=True), rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(b_mat, rhs, rcond=None)
    return float(np.linalg.norm(sol))


def _k_probe_points(summary, budget, extra_corners=True):
    """Deterministic probe set: `budget` log-uniform points (a prefix
    property across budgets makes the estimate monotone in budget) plus
    box corners and the all-ones point."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(_K_SEARCH_SEED)))
    dim = summary.r + 1
    pts = np.exp(rng.uniform(_K_LOG_LO, _K_LOG_HI, size=(int(budget), dim)))
    extras = [np.ones(dim)]
    if extra_corners:
        if 2 ** dim <= 64:
            from itertools import product

            for combo in product((math.exp(_K_LOG_LO), math.exp(_K_LOG_HI)), repeat=dim):
                extras.append(np.array(combo))
        else:
            lo, hi = math.exp(_K_LOG_LO), math.exp(_K_LOG_HI)
            extras.append(np.full(dim, lo))
            extras.append(np.full(dim, hi))
            for j in range(dim):
                v = np.full(dim, lo)
                v[j] = hi
                extras.append(v.copy())
                v = np.full(dim, hi)
                v[j] = lo
                extras.append(v.copy())
    return np.vstack([pts] + [e.reshape(1, -1) for e in extras])


def estimate_K(summary, design, budget=200):
    """Numerically estimated lower bound for the uniform h bound K.

    Two routes share one probe set: the direct maximum of h, and the
    per-observation route sum_i |y_i| * sup_i-term, whose true value
    always dominates the h route.  The larger estimate is returned.  The
    result is an *estimate* (a lower bound on the true K), never an
    upper bound.
    """
    if int(budget) < 1:
        raise ValueError("budget must be at least 1")
    if np.all(design.y == 0.0):
        return 0.0
    points = _k_probe_points(summary, budget)
    zt_clean = summary.project_onto_range(summary.izx_z.T)  # q x N columns z~_i
    abs_y = np.abs(design.y)
    best_h = 0.0
    per_term = np.zeros(design.n_obs)
    rhs_h = summary.project_onto_range(summary.ztilde_y)
    for sigma2 in points:
        se, su = sigma2[0], sigma2[1:]
        b_mat = summary.ztz_ipx + se * np.diag(summary.d_inv_diag(su))
        try:
            cho = cho_factor(b_mat, lower=True)
            sol_h = cho_solve(cho, rhs_h)
            sol_terms = cho_solve(cho, zt_clean)
        except np.linalg.LinAlgError:
            sol_h, *_ = np.linalg.lstsq(b_mat, rhs_h, rcond=None)
            sol_terms, *_ = np.linalg.lstsq(b_mat, zt_clean, rcond=None)
        best_h = max(best_h, float(np.linalg.norm(sol_h)))
        per_term = np.maximum(per_term, np.linalg.norm(sol_terms, axis=0))
    route_terms = float(abs_y @ per_term)
    return max(best_h, route_terms)


# ---------------------------------------------------------------------------
# Structure detection and the aggregate report

def detect_oneway(design):
    """Return (c, n_sizes) when the design is a one-way layout (constant
    column for X, one block of one-hot group indicators), else None."""
    if design.r != 1 or design.p != 1:
        return None
    if not np.allclose(design.x, 1.0):
        return None
    z = design.z_blocks[0]
    if not np.all((z == 0.0) | (z == 1.0)):
        return None
    if not np.all(z.sum(axis=1) == 1.0):
        return None
    counts = z.sum(axis=0).astype(int)
    if np.any(counts < 1):
        return None
    return int(z.shape[1]), tuple(int(v) for v in counts)


def detect_twoway(design):
    """Return (m, n) when the design is the two-way crossed layout with
    one observation per cell in lexicographic order, else None."""
    if design.r != 2 or design.p != 1:
        return None
    if not np.allclose(design.x, 1.0):
        return None
    m, n = design.q_sizes
    if design.n_obs != m * n:
        return None
    z1 = np.kron(np.eye(m), np.ones((n, 1)))
    z2 = np.kron(np.ones((m, 1)), np.eye(n))
    if np.array_equal(design.z_blocks[0], z1) and np.array_equal(design.z_blocks[1], z2):
        return int(m), int(n)
    return None


@dataclass(frozen=True)
class TwowayCheck:
    """Consistency record for the two-way layout: the rank and per-block
    traces have closed forms (t = m + n - 2, both traces equal 1)."""

    m: int
    n: int
    t_closed_form: int
    t_matches: bool
    zeta_matches: bool

    def to_dict(self):
        return {
            "m": self.m,
            "n": self.n,
            "t_closed_form": self.t_closed_form,
            "t_matches": self.t_matches,
            "zeta_matches": self.zeta_matches,
        }


@dataclass(frozen=True)
class ErgodicityReport:
    """Aggregate verdicts: well-definedness, propriety, the strengthened
    closed-form certificate, the witness search, optional closed-form
    specializations, and the drift certificate when available."""

    s_tilde: float
    proposition1: object
    theorem1: ConditionCheck
    corollary1: ConditionCheck
    theorem2: WitnessSearch
    oneway: Optional[OnewayCheck]
    twoway: Optional[TwowayCheck]
    drift: Optional[DriftCertificate]
    cutoff_gap: float
    rank_tol: float

    @property
    def certified_geometric(self):
        return self.theorem2.verdict

    @property
    def propriety_established(self):
        # a geometric chain has a proper invariant distribution, so either
        # route establishes propriety
        return self.theorem1.verdict or self.theorem2.verdict

    def to_dict(self):
        return {
            "s_tilde": self.s_tilde,
            "well_defined": self.proposition1.to_dict(),
            "propriety": self.theorem1.to_dict(),
            "strict_geometric": self.corollary1.to_dict(),
            "witness_search": self.theorem2.to_dict(),
            "oneway": self.oneway.to_dict() if self.oneway else None,
            "twoway": self.twoway.to_dict() if self.twoway else None,
            "drift_certificate": self.drift.to_dict() if self.drift else None,
            "certified_geometric": self.certified_geometric,
            "propriety_established": self.propriety_established,
            "eigenvalue_cutoff_gap": None if math.isinf(self.cutoff_gap) else self.cutoff_gap,
            "rank_tol": self.rank_tol,
        }


def build_report(
    design,
    prior,
    rank_tol=None,
    grid_size=DEFAULT_GRID_SIZE,
    k_budget=200,
    want_drift=True,
):
    """Run every check on (design, prior) and aggregate the verdicts.

    The drift certificate is attached only when the witness search
    succeeds and the certificate construction goes through.
    """
    from .model import DEFAULT_RANK_TOL

    rank_tol = DEFAULT_RANK_TOL if rank_tol is None else rank_tol
    summary = summarize_design(design, rank_tol=rank_tol)
    prop1 = validate_model(design, prior, rank_tol=rank_tol)
    thm1 = check_theorem1(summary, prior)
    cor1 = check_corollary1(summary, prior)
    search = search_witness_s(summary, prior, grid_size=grid_size)

    oneway = None
    ow = detect_oneway(design)
    if ow is not None:
        c, n_sizes = ow
        try:
            oneway = check_oneway(
                c, design.n_obs, prior.a_e, float(prior.a[0]), n_sizes=n_sizes
            )
        except DomainError:
            oneway = None

    twoway = None
    tw = detect_twoway(design)
    if tw is not None:
        m, n = tw
        t_cf = m + n - 2
        twoway = TwowayCheck(
            m=m,
            n=n,
            t_closed_form=t_cf,
            t_matches=bool(summary.t == t_cf),
            zeta_matches=bool(np.allclose(summary.zeta, 1.0, atol=1e-8)),
        )

    drift = None
    if want_drift and search.witness is not None:
        try:
            k_est = estimate_K(summary, design, budget=k_budget)
            drift = drift_certificate(summary, prior, search.witness, k_estimate=k_est)
        except (CertificateUnavailable, DomainError):
            drift = None

    return ErgodicityReport(
        s_tilde=prop1.s_tilde,
        proposition1=prop1,
        theorem1=thm1,
        corollary1=cor1,
        theorem2=search,
        oneway=oneway,
        twoway=twoway,
        drift=drift,
        cutoff_gap=summary.cutoff_gap,
        rank_tol=summary.rank_tol,
    )
