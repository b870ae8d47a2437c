"""Shared generators and independent reference computations for the tests.

Everything here is deliberately written from the raw design matrices
with plain numpy, independent of the package's cached summaries, so it
can serve as an oracle for them.
"""

import numpy as np

from mixedergo import GlmmDesign, PriorSpec


def random_design(rng, n_max=30, p_max=4, r_max=3, q_max=5):
    """Random dense design with full-rank X (redrawn until it is)."""
    while True:
        r = int(rng.integers(1, r_max + 1))
        q_sizes = [int(v) for v in rng.integers(1, q_max + 1, size=r)]
        p = int(rng.integers(1, p_max + 1))
        n = int(rng.integers(max(p + 2, 4), n_max + 1))
        x = rng.standard_normal((n, p))
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[-1] < 1e-6 * sv[0]:
            continue
        zs = tuple(rng.standard_normal((n, qi)) for qi in q_sizes)
        y = rng.standard_normal(n)
        return GlmmDesign(y=y, x=x, z_blocks=zs)


def random_valid_prior(rng, design, zero_b_prob=0.5):
    """Prior satisfying the well-definedness conditions for the design:
    every q_i + 2 a_i and N + 2 a_e stay clearly positive, and zero-b
    blocks get a_i < 0."""
    a = []
    b = []
    for qi in design.q_sizes:
        if rng.random() < zero_b_prob:
            # zero-b block: a_i < 0 with q_i + 2 a_i > 0
            ai = -float(rng.uniform(0.05, qi / 2.0 - 0.05)) if qi > 1 else -float(
                rng.uniform(0.05, 0.45)
            )
            a.append(ai)
            b.append(0.0)
        else:
            a.append(float(rng.uniform(-qi / 2.0 + 0.1, 1.5)))
            b.append(float(rng.uniform(0.05, 2.0)))
    a_e = float(rng.uniform(-1.0, 2.0))
    b_e = 0.0 if rng.random() < 0.5 else float(rng.uniform(0.05, 1.0))
    return PriorSpec(a_e=a_e, b_e=b_e, a=a, b=b)


def random_sigma2(rng, r, log_lo=-2.0, log_hi=2.0):
    return 10.0 ** rng.uniform(log_lo, log_hi, size=r + 1)


def reference_conditional_moments(design, sigma2):
    """Textbook construction of the normal conditional's (m, V), written
    directly from X, Z, y with dense inverses."""
    x, y = design.x, design.y
    z = np.hstack(design.z_blocks)
    n, p = x.shape
    q = z.shape[1]
    s2e = float(sigma2[0])
    d_inv = np.diag(
        np.repeat(1.0 / np.asarray(sigma2[1:], dtype=float), design.q_sizes)
    )
    xtx_inv = np.linalg.inv(x.T @ x)
    p_x = x @ xtx_inv @ x.T
    m_mat = z.T @ (np.eye(n) - p_x) @ z
    q_mat = m_mat / s2e + d_inv
    q_inv = np.linalg.inv(q_mat)
    r_mat = xtx_inv @ x.T @ z
    mean_u = q_inv @ z.T @ (np.eye(n) - p_x) @ y / s2e
    mean_beta = xtx_inv @ x.T @ (y - z @ (q_inv @ z.T @ (np.eye(n) - p_x) @ y) / s2e)
    mean = np.concatenate([mean_beta, mean_u])
    cov = np.zeros((p + q, p + q))
    cov[:p, :p] = s2e * xtx_inv + r_mat @ q_inv @ r_mat.T
    cov[:p, p:] = -r_mat @ q_inv
    cov[p:, :p] = cov[:p, p:].T
    cov[p:, p:] = q_inv
    return mean, cov


def reference_log_theta_integral(design, prior, sigma2):
    """Closed-form log of the integral of the unnormalized posterior over
    theta at fixed variances (Gaussian integral via completion of the
    square), including the prior factor."""
    x, y = design.x, design.y
    z = np.hstack(design.z_blocks)
    n, p = x.shape
    s2e = float(sigma2[0])
    su = np.asarray(sigma2[1:], dtype=float)
    d_diag = np.repeat(su, design.q_sizes)
    xtx = x.T @ x
    p_x = x @ np.linalg.inv(xtx) @ x.T
    izx = np.eye(n) - p_x
    m_mat = z.T @ izx @ z
    q_mat = m_mat / s2e + np.diag(1.0 / d_diag)
    ztilde_y = z.T @ izx @ y
    c_vec = ztilde_y / s2e
    k_form = float(y @ izx @ y) / s2e
    quad = float(c_vec @ np.linalg.solve(q_mat, c_vec))
    out = (
        -0.5 * (n - p) * np.log(2.0 * np.pi * s2e)
        - 0.5 * np.linalg.slogdet(xtx)[1]
        - 0.5 * float(np.sum(np.log(d_diag)))
        - 0.5 * np.linalg.slogdet(q_mat)[1]
        - 0.5 * (k_form - quad)
    )
    out += -(prior.a_e + 1.0) * np.log(s2e) - prior.b_e / s2e
    out += float(np.sum(-(prior.a + 1.0) * np.log(su) - prior.b / su))
    return float(out)
