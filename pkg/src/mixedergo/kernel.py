"""The two-block Gibbs transition and its conditional densities.

One step of the chain draws, in this order,

    theta  ~ N(m, V)                  given the current variances,
    sigma2 ~ product of inverted gammas  given the fresh theta,

where theta stacks the fixed effects beta (length p) atop the random
effects u (length q).  The theta draw is performed by composition: u
first from its own q-dimensional normal, then beta given u, which
reproduces (m, V) exactly (verified against
:func:`theta_conditional_moments` in the test suite rather than
assumed).

States with ||u_i|| exactly zero for a block whose prior has b_i = 0
form a measure-zero set on which the variance conditional is undefined;
there the kernel substitutes independent IG(1, 1) draws for every
component.  Membership uses exact floating-point equality on purpose:
any epsilon ball would alter the kernel on a set of positive measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln

from .errors import InvalidShape, NonFinite, SingularQ

_JITTER_REL = 1e-12


class RngStream:
    """Deterministic, seedable, splittable pseudo-random stream.

    Wraps a PCG64 generator behind a seed sequence so that the same seed
    always yields the same draws and :meth:`split` hands out independent
    child streams.  Splitting consumes spawn state, so two successive
    ``split`` calls return different children (like drawing does).
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n):
        return [RngStream(s) for s in self._seq.spawn(int(n))]

    @property
    def generator(self):
        return self._gen

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def gamma(self, shape, scale=1.0, size=None):
        return self._gen.gamma(shape, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)


@dataclass(frozen=True)
class ParamState:
    """Current Gibbs state (beta, u, sigma2_e, sigma2_u)."""

    beta: np.ndarray
    u: np.ndarray
    sigma2_e: float
    sigma2_u: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        s2u = np.asarray(self.sigma2_u, dtype=float).reshape(-1)
        s2e = float(self.sigma2_e)
        if not (np.isfinite(beta).all() and np.isfinite(u).all()):
            raise NonFinite("state effects must be finite")
        if not (math.isfinite(s2e) and s2e > 0.0):
            raise ValueError("sigma2_e must be strictly positive and finite")
        if not (np.isfinite(s2u).all() and (s2u > 0.0).all()):
            raise ValueError("every sigma2_u entry must be strictly positive and finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "sigma2_e", s2e)
        object.__setattr__(self, "sigma2_u", s2u)

    @property
    def theta(self):
        return np.concatenate([self.beta, self.u])

    @property
    def sigma2(self):
        return np.concatenate([[self.sigma2_e], self.sigma2_u])


def _split_sigma2(summary, sigma2):
    sigma2 = np.asarray(sigma2, dtype=float).reshape(-1)
    if sigma2.shape[0] != summary.r + 1:
        raise SingularQ(f"expected {summary.r + 1} variance components, got {sigma2.shape[0]}")
    if not (np.isfinite(sigma2).all() and (sigma2 > 0.0).all()):
        raise SingularQ("variance components must be finite and strictly positive")
    return float(sigma2[0]), sigma2[1:]


def _factor_q(summary, s2e, s2u):
    """Cholesky factor of Q = M / sigma2_e + D^-1, with one jittered retry.

    Q is positive definite in exact arithmetic whenever the variances are
    positive and finite; a failed factorization after jitter means the
    inputs were corrupt.
    """
    q_mat = summary.ztz_ipx / s2e
    diag_idx = np.arange(summary.q)
    q_mat[diag_idx, diag_idx] += summary.d_inv_diag(s2u)
    try:
        return cho_factor(q_mat, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_REL * np.trace(q_mat) / summary.q
    q_mat[diag_idx, diag_idx] += jitter
    try:
        return cho_factor(q_mat, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularQ("precision matrix Q could not be factorized") from exc


def theta_conditional_moments(summary, design, sigma2):
    """Mean and covariance of the normal conditional of theta.

    Returns (m, V) with m of length p + q and V of shape (p+q, p+q):

        m = [ beta_ls - R Q^-1 ztilde_y / sigma2_e ,  Q^-1 ztilde_y / sigma2_e ]
        V = [ sigma2_e (X^T X)^-1 + R Q^-1 R^T ,  -R Q^-1
              -Q^-1 R^T                         ,   Q^-1   ]

    with Q = Z^T (I-P_X) Z / sigma2_e + D^-1 and R = (X^T X)^-1 X^T Z.
    """
    s2e, s2u = _split_sigma2(summary, sigma2)
    cho = _factor_q(summary, s2e, s2u)
    q_inv = cho_solve(cho, np.eye(summary.q), check_finite=False)
    q_inv = 0.5 * (q_inv + q_inv.T)
    m_u = cho_solve(cho, summary.ztilde_y, check_finite=False) / s2e
    m_beta = summary.beta_ls - summary.r_xz @ m_u

    r_qinv = summary.r_xz @ q_inv
    p, q = summary.p, summary.q
    cov = np.empty((p + q, p + q))
    cov[:p, :p] = s2e * summary.xtx_inv + r_qinv @ summary.r_xz.T
    cov[:p, p:] = -r_qinv
    cov[p:, :p] = -r_qinv.T
    cov[p:, p:] = q_inv
    return np.concatenate([m_beta, m_u]), cov


def sample_theta(summary, design, sigma2, rng):
    """One draw from the theta conditional by composition.

    u ~ N(Q^-1 ztilde_y / sigma2_e, Q^-1) via the Cholesky factor of Q,
    then beta | u ~ N(beta_ls - R u, sigma2_e (X^T X)^-1).  The u block
    is drawn first; the order is part of the reproducibility contract.
    """
    s2e, s2u = _split_sigma2(summary, sigma2)
    cho = _factor_q(summary, s2e, s2u)
    m_u = cho_solve(cho, summary.ztilde_y, check_finite=False) / s2e
    lower_l = cho[0] if cho[1] else cho[0].T
    u = m_u + solve_triangular(
        lower_l.T, rng.standard_normal(summary.q), lower=False, check_finite=False
    )
    mean_beta = summary.beta_ls - summary.r_xz @ u
    beta = mean_beta + math.sqrt(s2e) * solve_triangular(
        summary.rx, rng.standard_normal(summary.p), lower=False, check_finite=False
    )
    return np.concatenate([beta, u])


def _draw_inverse_gamma(rng, shape, rate):
    """IG(shape, rate) as the reciprocal of a standard gamma draw.

    The reciprocal-gamma route can only misbehave if the gamma variate
    underflows to exactly zero (probability ~ rate-independent and
    below 1e-70 for shapes >= 0.25); redrawing conditions on the
    probability-one event G > 0.
    """
    g = rng.gamma(shape, 1.0 / rate)
    while g == 0.0:
        g = rng.gamma(shape, 1.0 / rate)
    return 1.0 / g


def sample_sigma2(design, prior, theta, rng):
    """One draw from the variance conditional given theta.

    Off the null set: sigma2_e ~ IG(N/2 + a_e, b_e + ||y - W theta||^2 / 2)
    and independently sigma2_ui ~ IG(q_i/2 + a_i, b_i + ||u_i||^2 / 2).
    On the null set (some zero-b block with ||u_i|| exactly 0): every
    component ~ IG(1, 1).  Component order (error variance first, then
    blocks) is part of the reproducibility contract.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if not np.all(np.isfinite(theta)):
        raise NonFinite("theta must be finite")
    p = design.p
    u = theta[p:]
    offs = design.u_offsets
    u_norm2 = np.array(
        [u[offs[i] : offs[i + 1]] @ u[offs[i] : offs[i + 1]] for i in range(design.r)]
    )

    in_null_set = any(u_norm2[i] == 0.0 for i in prior.zero_b_blocks)
    if in_null_set:
        return np.array([_draw_inverse_gamma(rng, 1.0, 1.0) for _ in range(design.r + 1)])

    resid = design.y - design.w @ theta
    shape_e = design.n_obs / 2.0 + prior.a_e
    rate_e = prior.b_e + (resid @ resid) / 2.0
    shapes_u = np.array([qi / 2.0 + ai for qi, ai in zip(design.q_sizes, prior.a)])
    rates_u = prior.b + u_norm2 / 2.0
    if shape_e <= 0.0 or np.any(shapes_u <= 0.0):
        raise InvalidShape(
            "non-positive inverted-gamma shape; the model violates the "
            "well-definedness conditions (validate before sampling)"
        )
    if rate_e <= 0.0 or np.any(rates_u <= 0.0):
        raise InvalidShape(
            "non-positive inverted-gamma scale; 2*b_e + SSE must be positive"
        )
    out = np.empty(design.r + 1)
    out[0] = _draw_inverse_gamma(rng, shape_e, rate_e)
    for i in range(design.r):
        out[i + 1] = _draw_inverse_gamma(rng, shapes_u[i], rates_u[i])
    return out


def inverse_gamma_logpdf(v, c, d):
    """log of the IG(c, d) density d^c / (Gamma(c) v^(c+1)) e^(-d/v)."""
    if not (c > 0.0 and d > 0.0):
        raise InvalidShape("inverted-gamma parameters must be strictly positive")
    v = float(v)
    if v <= 0.0:
        return float("-inf")
    return c * math.log(d) - gammaln(c) - (c + 1.0) * math.log(v) - d / v


def gibbs_step(state, summary, design, prior, rng):
    """One transition: theta from the current variances, then variances
    from the fresh theta (this order defines the kernel)."""
    theta = sample_theta(summary, design, state.sigma2, rng)
    sigma2 = sample_sigma2(design, prior, theta, rng)
    p = summary.p
    return ParamState(
        beta=theta[:p], u=theta[p:], sigma2_e=sigma2[0], sigma2_u=sigma2[1:]
    )


def default_initial_state(summary, prior):
    """beta at the fixed-effects least-squares fit, u at all ones (zero
    would sit on the null set when some b_i = 0), unit variances."""
    return ParamState(
        beta=summary.beta_ls.copy(),
        u=np.ones(summary.q),
        sigma2_e=1.0,
        sigma2_u=np.ones(summary.r),
    )


def log_unnormalized_posterior(design, prior, theta, sigma2):
    """log of the (possibly improper) unnormalized posterior density:
    Gaussian likelihood in y, Gaussian in u, prior factor on sigma2."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    sigma2 = np.asarray(sigma2, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(sigma2))):
        raise NonFinite("theta and sigma2 must be finite")
    if not np.all(sigma2 > 0.0):
        raise NonFinite("sigma2 must be strictly positive")
    s2e, s2u = float(sigma2[0]), sigma2[1:]
    p = design.p
    u = theta[p:]
    resid = design.y - design.w @ theta

    out = -0.5 * design.n_obs * math.log(2.0 * math.pi * s2e)
    out -= (resid @ resid) / (2.0 * s2e)
    offs = design.u_offsets
    for i, qi in enumerate(design.q_sizes):
        ui = u[offs[i] : offs[i + 1]]
        out -= 0.5 * qi * math.log(2.0 * math.pi * s2u[i])
        out -= (ui @ ui) / (2.0 * s2u[i])
    out -= (prior.a_e + 1.0) * math.log(s2e)
    out -= prior.b_e / s2e
    for i in range(design.r):
        out -= (prior.a[i] + 1.0) * math.log(s2u[i])
        out -= prior.b[i] / s2u[i]
    return float(out)
