"""Independent brute-force verification tools.

Nothing here is used by the sampler itself; these are the oracles the
test suite (and the CLI ``verify``-style workflows) use to cross-check
it:

* a deterministic quadrature of the marginal density of the variance
  components for models with at most two random-effect blocks (the
  effects integrate out in closed form, leaving a 2- or 3-dimensional
  log-grid integral);
* Monte Carlo verification of the drift inequality at random starting
  variances;
* numerical checks of the trace/inverse-moment inequalities that the
  drift construction rests on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DomainError, GridTooCoarse
from .kernel import RngStream, sample_sigma2, sample_theta, theta_conditional_moments
from .model import summarize_design

_CHUNK = 1 << 15
MAX_TOTAL_POINTS = 10_000_000
BOUNDARY_TOL = 1e-6


@dataclass(frozen=True)
class QuadratureSpec:
    """Per-component log grids: bounds[k] = (lo, hi) and counts[k] points
    for component k (error variance first).  At most two random-effect
    blocks (three grid dimensions) are supported."""

    bounds: tuple
    counts: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        counts = tuple(int(n) for n in self.counts)
        if len(bounds) != len(counts):
            raise ValueError("bounds and counts must have equal length")
        if not 2 <= len(bounds) <= 3:
            raise ValueError("quadrature supports r in {1, 2} (2 or 3 components)")
        for lo, hi in bounds:
            if not (0.0 < lo < hi and math.isfinite(hi)):
                raise ValueError("each bound pair needs 0 < lo < hi < inf")
        if any(n < 4 for n in counts):
            raise ValueError("need at least 4 points per dimension")
        if int(np.prod(counts)) > MAX_TOTAL_POINTS:
            raise ValueError(f"total grid exceeds {MAX_TOTAL_POINTS} points")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class QuadratureResult:
    log_m_y: float
    mean: np.ndarray
    variance: np.ndarray
    boundary_fraction: float

    def to_dict(self):
        return {
            "log_m_y": self.log_m_y,
            "mean": [float(v) for v in self.mean],
            "variance": [float(v) for v in self.variance],
            "boundary_fraction": self.boundary_fraction,
        }


def _trapezoid_log_weights(w):
    """Trapezoid weights for an ordered 1-d grid of log-variances."""
    lw = np.empty_like(w)
    lw[0] = 0.5 * (w[1] - w[0])
    lw[-1] = 0.5 * (w[-1] - w[-2])
    if w.size > 2:
        lw[1:-1] = 0.5 * (w[2:] - w[:-2])
    return np.log(lw)


def sigma2_marginal_quadrature(design, prior, spec):
    """Deterministic integral of the unnormalized posterior over the
    variance components, with the effects integrated out analytically.

    For each grid point the effect integral contributes

        -(N - p)/2 log(2 pi se) - 1/2 log det(X^T X) - 1/2 log det D
        - 1/2 log det Q - (||(I-P_X) y||^2 / se - c^T Q^-1 c) / 2,

    with Q = M / se + D^-1 and c = Z^T (I-P_X) y / se; the remaining
    integral over the variances runs on a trapezoid rule in log space.

    Returns log m(y) (up to grid truncation) and the posterior mean and
    variance of each component.  Raises GridTooCoarse when more than
    1e-6 of the captured mass sits on the outermost grid layer, which is
    both a resolution guard and the detector for improper posteriors
    (their mass never leaves the boundary as the grid expands).
    """
    if design.r != len(spec.bounds) - 1:
        raise ValueError(
            f"spec has {len(spec.bounds)} components but design needs {design.r + 1}"
        )
    if design.r > 2:
        raise ValueError("quadrature supports r <= 2")
    summary = summarize_design(design)
    n, p, q = summary.n_obs, summary.p, summary.q
    logdet_xtx = 2.0 * float(np.sum(np.log(np.abs(np.diag(summary.rx)))))
    m_mat = summary.ztz_ipx
    ztilde = summary.ztilde_y
    q_sizes = np.array(summary.q_sizes, dtype=float)

    axes_w = [np.linspace(math.log(lo), math.log(hi), c) for (lo, hi), c in zip(spec.bounds, spec.counts)]
    axes_logwt = [_trapezoid_log_weights(w) for w in axes_w]
    mesh = np.meshgrid(*axes_w, indexing="ij")
    w_flat = np.stack([m.reshape(-1) for m in mesh], axis=1)
    logwt = np.zeros(w_flat.shape[0])
    boundary = np.zeros(w_flat.shape[0], dtype=bool)
    idx_mesh = np.meshgrid(*[np.arange(c) for c in spec.counts], indexing="ij")
    for d, (ax_logwt, cnt) in enumerate(zip(axes_logwt, spec.counts)):
        idx = idx_mesh[d].reshape(-1)
        logwt += ax_logwt[idx]
        boundary |= (idx == 0) | (idx == cnt - 1)

    const = (
        -0.5 * (n - p) * math.log(2.0 * math.pi)
        - 0.5 * logdet_xtx
        + 0.5 * p * 0.0
    )
    norm_izx_y2 = summary.norm_izx_y ** 2

    log_g = np.empty(w_flat.shape[0])
    for start in range(0, w_flat.shape[0], _CHUNK):
        chunk = w_flat[start : start + _CHUNK]
        se = np.exp(chunk[:, 0])
        su = np.exp(chunk[:, 1:])
        d_inv = np.repeat(1.0 / su, summary.q_sizes, axis=1)  # (B, q)
        q_batch = m_mat[None, :, :] / se[:, None, None]
        q_batch = q_batch + d_inv[:, :, None] * np.eye(q)[None, :, :]
        sign, logdet_q = np.linalg.slogdet(q_batch)
        sol = np.linalg.solve(q_batch, np.broadcast_to(ztilde, (chunk.shape[0], q))[..., None])[..., 0]
        quad_form = (sol @ ztilde) / se ** 2
        val = (
            const
            - 0.5 * (n - p) * chunk[:, 0]
            - 0.5 * (q_sizes[None, :] * chunk[:, 1:]).sum(axis=1)
            - 0.5 * logdet_q
            - 0.5 * (norm_izx_y2 / se - quad_form)
        )
        # prior factor and the log-space change of measure
        val += -(prior.a_e + 1.0) * chunk[:, 0] - prior.b_e / se
        val += (-(np.asarray(prior.a)[None, :] + 1.0) * chunk[:, 1:]).sum(axis=1)
        val += (-np.asarray(prior.b)[None, :] / su).sum(axis=1)
        val += chunk.sum(axis=1)
        log_g[start : start + chunk.shape[0]] = val

    log_terms = log_g + logwt
    log_m = float(logsumexp(log_terms))
    if not math.isfinite(log_m):
        raise GridTooCoarse(
            "quadrature mass is not finite on this grid", boundary_fraction=1.0, log_mass=log_m
        )
    log_boundary = float(logsumexp(log_terms[boundary])) if boundary.any() else -np.inf
    frac = math.exp(log_boundary - log_m)
    if frac > BOUNDARY_TOL:
        raise GridTooCoarse(
            f"boundary mass fraction {frac:.3e} exceeds {BOUNDARY_TOL:.0e}; "
            "widen the grid (an improper posterior never passes this gate)",
            boundary_fraction=frac,
            log_mass=log_m,
        )

    dim = len(spec.bounds)
    mean = np.empty(dim)
    var = np.empty(dim)
    for k in range(dim):
        m1 = math.exp(logsumexp(log_terms + w_flat[:, k]) - log_m)
        m2 = math.exp(logsumexp(log_terms + 2.0 * w_flat[:, k]) - log_m)
        mean[k] = m1
        var[k] = m2 - m1 * m1
    return QuadratureResult(
        log_m_y=log_m, mean=mean, variance=var, boundary_fraction=float(frac)
    )


# ---------------------------------------------------------------------------
# Drift inequality, by simulation

@dataclass(frozen=True)
class DriftPointCheck:
    sigma2_tilde: np.ndarray
    v_at_start: float
    estimate: float
    std_error: float
    bound: float
    violated: bool

    def to_dict(self):
        return {
            "sigma2_tilde": [float(v) for v in self.sigma2_tilde],
            "v_at_start": self.v_at_start,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "bound": self.bound,
            "violated": self.violated,
        }


@dataclass(frozen=True)
class DriftCheckReport:
    points: tuple
    n_violations: int

    def to_dict(self):
        return {
            "points": [p.to_dict() for p in self.points],
            "n_violations": self.n_violations,
        }


def mc_check_drift(
    summary,
    design,
    prior,
    cert,
    n_points=20,
    n_mc=10_000,
    seed=0,
    log_lo=-4.0,
    log_hi=4.0,
):
    """Estimate E(v(sigma2') | sigma2) at random starting variances and
    compare against rho v(sigma2) + L + 3 std errors.

    Because L is built from a numerically *estimated* K, a flagged
    violation points at a K underestimate first and a certificate bug
    second.
    """
    rng = RngStream(seed)
    points = []
    n_viol = 0
    for _ in range(int(n_points)):
        sigma2 = 10.0 ** rng.uniform(log_lo, log_hi, size=summary.r + 1)
        vals = np.empty(int(n_mc))
        for k in range(int(n_mc)):
            theta = sample_theta(summary, design, sigma2, rng)
            s2 = sample_sigma2(design, prior, theta, rng)
            vals[k] = cert.drift_function(s2)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
        v0 = cert.drift_function(sigma2)
        bound = cert.rho * v0 + cert.big_l
        violated = bool(est > bound + 3.0 * se)
        n_viol += violated
        points.append(
            DriftPointCheck(
                sigma2_tilde=sigma2,
                v_at_start=float(v0),
                estimate=est,
                std_error=se,
                bound=float(bound),
                violated=violated,
            )
        )
    return DriftCheckReport(points=tuple(points), n_violations=n_viol)


# ---------------------------------------------------------------------------
# Trace / inverse-moment inequalities behind the drift construction

@dataclass(frozen=True)
class TraceBoundsReport:
    """Outcome of the three matrix inequalities at one variance point:
    (1) the covariance bound on Q^-1, (2) the trace bound on the
    projected smoother, (3) the per-block eigenvalue bound on the
    inverse of the u-block covariance."""

    psd_margin: float
    psd_ok: bool
    trace_lhs: float
    trace_rhs: float
    trace_ok: bool
    block_margins: tuple
    blocks_ok: tuple

    @property
    def all_ok(self):
        return self.psd_ok and self.trace_ok and all(self.blocks_ok)

    def to_dict(self):
        return {
            "psd_margin": self.psd_margin,
            "psd_ok": self.psd_ok,
            "trace_lhs": self.trace_lhs,
            "trace_rhs": self.trace_rhs,
            "trace_ok": self.trace_ok,
            "block_margins": list(self.block_margins),
            "blocks_ok": list(self.blocks_ok),
            "all_ok": self.all_ok,
        }


def check_lemma_a1(summary, sigma2, tol=1e-8):
    """Numerically verify the three inequalities at one variance point."""
    sigma2 = np.asarray(sigma2, dtype=float).reshape(-1)
    se, su = float(sigma2[0]), sigma2[1:]
    if not (np.all(np.isfinite(sigma2)) and np.all(sigma2 > 0.0)):
        raise DomainError("variances must be finite and strictly positive")
    q = summary.q
    q_mat = summary.ztz_ipx / se + np.diag(summary.d_inv_diag(su))
    q_inv = np.linalg.inv(q_mat)
    q_inv = 0.5 * (q_inv + q_inv.T)

    s_total = float(np.sum(su))
    bound1 = summary.pseudo_inverse() * se + (np.eye(q) - summary.range_projection()) * s_total
    gap = bound1 - q_inv
    gap = 0.5 * (gap + gap.T)
    scale1 = max(1.0, float(np.linalg.norm(bound1, 2)))
    min_eig = float(np.linalg.eigvalsh(gap).min())
    psd_ok = bool(min_eig >= -tol * scale1)

    trace_lhs = float(np.trace(q_inv @ summary.ztz_ipx))
    trace_rhs = float(summary.t * se)
    trace_ok = bool(trace_lhs <= trace_rhs + tol * max(1.0, trace_rhs))

    margins = []
    oks = []
    for i, sl in enumerate(summary.block_slices):
        block = q_inv[sl, sl]
        block_inv = np.linalg.inv(block)
        block_inv = 0.5 * (block_inv + block_inv.T)
        lam = summary.lambda_max / se + 1.0 / su[i]
        gap_i = lam * np.eye(block.shape[0]) - block_inv
        m = float(np.linalg.eigvalsh(gap_i).min())
        margins.append(m)
        oks.append(bool(m >= -tol * max(1.0, lam)))
    return TraceBoundsReport(
        psd_margin=min_eig,
        psd_ok=psd_ok,
        trace_lhs=trace_lhs,
        trace_rhs=trace_rhs,
        trace_ok=trace_ok,
        block_margins=tuple(margins),
        blocks_ok=tuple(oks),
    )


@dataclass(frozen=True)
class ChisqMomentReport:
    estimate: float
    std_error: float
    bound: float
    passed: bool

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "bound": self.bound,
            "passed": self.passed,
        }


def check_chisq_moment_bound(k, mu, gamma, n_mc=100_000, seed=0):
    """Monte Carlo check that E[J^-gamma] for J ~ noncentral chi-square
    with k dof and noncentrality mu stays below the central closed form
    2^-gamma Gamma(k/2 - gamma) / Gamma(k/2)."""
    if not (k > 0 and 0.0 < gamma < k / 2.0 and mu >= 0.0):
        raise DomainError("need k > 0, 0 < gamma < k/2, mu >= 0")
    rng = RngStream(seed)
    if mu == 0.0:
        draws = rng.generator.chisquare(k, size=int(n_mc))
    else:
        draws = rng.generator.noncentral_chisquare(k, mu, size=int(n_mc))
    vals = draws ** (-gamma)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    bound = float(math.exp(gammaln(k / 2.0 - gamma) - gammaln(k / 2.0) - gamma * math.log(2.0)))
    return ChisqMomentReport(
        estimate=est, std_error=se, bound=bound, passed=bool(est <= bound + 3.0 * se)
    )


@dataclass(frozen=True)
class ExpectationBoundsReport:
    """Exact conditional second moments against their uniform-in-variance
    bounds, plus a Monte Carlo check of the negative-moment bound.

    ``*_ok_local`` re-checks with the exact h(sigma2) at the tested point
    in place of the K estimate; a failure of the K-based bound that the
    local bound passes indicts the K estimate, not the inequality.
    """

    resid_exact: float
    resid_bound: float
    resid_ok: bool
    resid_ok_local: bool
    u2_exact: tuple
    u2_bound: tuple
    u2_ok: tuple
    u2_ok_local: tuple
    neg_moment_estimates: tuple
    neg_moment_std_errors: tuple
    neg_moment_bounds: tuple
    neg_moment_ok: tuple

    @property
    def all_ok(self):
        return (
            self.resid_ok
            and all(self.u2_ok)
            and all(self.neg_moment_ok)
        )

    def to_dict(self):
        return {
            "resid_exact": self.resid_exact,
            "resid_bound": self.resid_bound,
            "resid_ok": self.resid_ok,
            "resid_ok_local": self.resid_ok_local,
            "u2_exact": list(self.u2_exact),
            "u2_bound": list(self.u2_bound),
            "u2_ok": list(self.u2_ok),
            "u2_ok_local": list(self.u2_ok_local),
            "neg_moment_estimates": list(self.neg_moment_estimates),
            "neg_moment_std_errors": list(self.neg_moment_std_errors),
            "neg_moment_bounds": list(self.neg_moment_bounds),
            "neg_moment_ok": list(self.neg_moment_ok),
            "all_ok": self.all_ok,
        }


def check_expectation_bounds(
    summary, design, prior, sigma2, n_mc=10_000, seed=0, k_estimate=0.0, c=0.25
):
    """Check the conditional-moment bounds feeding the drift inequality.

    E[||y - W theta||^2 | sigma2] = tr(W V W^T) + ||y - W m||^2 and
    E[||u_i||^2 | sigma2] = tr(V_uu,i) + ||m_u,i||^2 are computed exactly
    from the conditional moments and compared with their bounds (the K
    estimate standing in for the true K).  E[||u_i||^(-2c) | sigma2] is
    estimated by Monte Carlo against its closed-form bound; requires
    c in (0, 1/2).
    """
    if not 0.0 < c < 0.5:
        raise DomainError("c must lie in (0, 1/2)")
    sigma2 = np.asarray(sigma2, dtype=float).reshape(-1)
    se = float(sigma2[0])
    m_vec, v_mat = theta_conditional_moments(summary, design, sigma2)
    w = design.w
    wv = w @ v_mat
    resid_mean = design.y - w @ m_vec
    resid_exact = float(np.einsum("ij,ij->", wv, w) + resid_mean @ resid_mean)

    from .ergodicity import h_norm

    h_here = h_norm(summary, design, sigma2)
    resid_bound = (summary.p + summary.t) * se + (
        summary.norm_izx_y + summary.fro_izx_z * k_estimate
    ) ** 2
    resid_bound_local = (summary.p + summary.t) * se + (
        summary.norm_izx_y + summary.fro_izx_z * h_here
    ) ** 2
    tol = 1e-8 * max(1.0, resid_exact)

    p = summary.p
    s_total = float(np.sum(sigma2[1:]))
    u2_exact, u2_bound, u2_ok, u2_loc = [], [], [], []
    for i, sl in enumerate(summary.block_slices):
        sl_theta = slice(p + sl.start, p + sl.stop)
        block_cov = v_mat[sl_theta, sl_theta]
        mu_i = m_vec[sl_theta]
        exact = float(np.trace(block_cov) + mu_i @ mu_i)
        qi = summary.q_sizes[i]
        bound = summary.xi[i] * se + summary.zeta[i] * s_total + qi * k_estimate ** 2
        bound_local = summary.xi[i] * se + summary.zeta[i] * s_total + qi * h_here ** 2
        u2_exact.append(exact)
        u2_bound.append(float(bound))
        u2_ok.append(bool(exact <= bound + 1e-8 * max(1.0, exact)))
        u2_loc.append(bool(exact <= bound_local + 1e-8 * max(1.0, exact)))

    rng = RngStream(seed)
    draws = np.empty((int(n_mc), summary.q))
    for k in range(int(n_mc)):
        draws[k] = sample_theta(summary, design, sigma2, rng)[p:]
    neg_est, neg_se, neg_bound, neg_ok = [], [], [], []
    for i, sl in enumerate(summary.block_slices):
        norms2 = np.einsum("ij,ij->i", draws[:, sl], draws[:, sl])
        vals = norms2 ** (-c)
        est = float(vals.mean())
        se_i = float(vals.std(ddof=1) / math.sqrt(len(vals)))
        qi = summary.q_sizes[i]
        factor = math.exp(gammaln(qi / 2.0 - c) - gammaln(qi / 2.0) - c * math.log(2.0))
        bound = factor * (summary.lambda_max ** c * se ** (-c) + sigma2[1 + i] ** (-c))
        neg_est.append(est)
        neg_se.append(se_i)
        neg_bound.append(float(bound))
        neg_ok.append(bool(est <= bound + 3.0 * se_i))

    return ExpectationBoundsReport(
        resid_exact=resid_exact,
        resid_bound=float(resid_bound),
        resid_ok=bool(resid_exact <= resid_bound + tol),
        resid_ok_local=bool(resid_exact <= resid_bound_local + tol),
        u2_exact=tuple(u2_exact),
        u2_bound=tuple(u2_bound),
        u2_ok=tuple(u2_ok),
        u2_ok_local=tuple(u2_loc),
        neg_moment_estimates=tuple(neg_est),
        neg_moment_std_errors=tuple(neg_se),
        neg_moment_bounds=tuple(neg_bound),
        neg_moment_ok=tuple(neg_ok),
    )
