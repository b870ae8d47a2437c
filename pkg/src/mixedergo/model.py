"""Model data structures and derived linear algebra.

A variance-components model is the Gaussian linear mixed model

    y = X beta + Z1 u1 + ... + Zr ur + e,

with e ~ N(0, sigma2_e I) and each random-effect block ui ~ N(0,
sigma2_ui I).  The improper conditionally-conjugate prior is flat in
beta and puts a power-law/exponential factor on each variance
component, with hyperparameters (a_e, b_e) and per-block (a_i, b_i).

``summarize_design`` freezes every derived quantity the sampler and the
ergodicity checks need (projections, spectral decomposition, traces,
residual norms) into an immutable :class:`DesignSummary` so that all
downstream modules share one tolerance regime and never re-derive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NonFinite, RankDeficientX

DEFAULT_RANK_TOL = 1e-10


def _as_readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GlmmDesign:
    """Observed response plus fixed- and random-effects design matrices.

    Attributes:
        y: response vector, shape (N,).
        x: fixed-effects design, shape (N, p), p >= 1.
        z_blocks: tuple of r >= 1 random-effects designs, block i of
            shape (N, q_i).
    """

    y: np.ndarray
    x: np.ndarray
    z_blocks: tuple

    def __post_init__(self):
        y = _as_readonly(np.asarray(self.y).reshape(-1))
        x = np.asarray(self.x)
        if x.ndim != 2:
            raise DimensionMismatch("x must be a 2-d matrix")
        x = _as_readonly(x)
        blocks = tuple(self.z_blocks)
        if len(blocks) < 1:
            raise DimensionMismatch("at least one random-effect block is required")
        zs = []
        for i, z in enumerate(blocks):
            z = np.asarray(z)
            if z.ndim != 2:
                raise DimensionMismatch(f"z_blocks[{i}] must be a 2-d matrix")
            zs.append(_as_readonly(z))
        n = y.shape[0]
        if n < 1 or x.shape[0] != n or any(z.shape[0] != n for z in zs):
            raise DimensionMismatch(
                f"row counts disagree: len(y)={n}, x has {x.shape[0]} rows, "
                f"z blocks have {[z.shape[0] for z in zs]}"
            )
        if x.shape[1] < 1 or any(z.shape[1] < 1 for z in zs):
            raise DimensionMismatch("every design matrix needs at least one column")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z_blocks", tuple(zs))

    @property
    def n_obs(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def r(self):
        return len(self.z_blocks)

    @property
    def q_sizes(self):
        return tuple(z.shape[1] for z in self.z_blocks)

    @property
    def q(self):
        return sum(self.q_sizes)

    @cached_property
    def z(self):
        """All random-effect blocks stacked column-wise, shape (N, q)."""
        return _as_readonly(np.hstack(self.z_blocks))

    @cached_property
    def w(self):
        """Full design (X Z), shape (N, p + q); assembled once on demand."""
        return _as_readonly(np.hstack([self.x, self.z]))

    @cached_property
    def u_offsets(self):
        """Cumulative block boundaries into u: block i spans
        u[u_offsets[i] : u_offsets[i + 1]]."""
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.q_sizes)]))

    def require_finite(self):
        if not (
            np.all(np.isfinite(self.y))
            and np.all(np.isfinite(self.x))
            and all(np.all(np.isfinite(z)) for z in self.z_blocks)
        ):
            raise NonFinite("design contains NaN or infinite entries")


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the improper conditionally-conjugate prior.

    The prior density is flat in beta and proportional to

        (sigma2_e)^-(a_e+1) exp(-b_e / sigma2_e)
        * prod_i (sigma2_ui)^-(a_i+1) exp(-b_i / sigma2_ui).

    Sign constraints on b are *reported* by :func:`validate_model`
    rather than enforced here, so that invalid priors can be described
    instead of rejected at construction.
    """

    a_e: float
    b_e: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = _as_readonly(np.asarray(self.a).reshape(-1))
        b = _as_readonly(np.asarray(self.b).reshape(-1))
        if a.shape != b.shape:
            raise DimensionMismatch("a and b must have one entry per block")
        if a.size < 1:
            raise DimensionMismatch("prior needs at least one block")
        a_e = float(self.a_e)
        b_e = float(self.b_e)
        if not (np.isfinite(a_e) and np.isfinite(b_e) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NonFinite("prior hyperparameters must be finite")
        object.__setattr__(self, "a_e", a_e)
        object.__setattr__(self, "b_e", b_e)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(
            self, "_zero_b_blocks", tuple(int(i) for i in np.flatnonzero(b == 0.0))
        )

    @property
    def r(self):
        return self.a.size

    @property
    def zero_b_blocks(self):
        """Indices of blocks with b_i exactly zero (the set driving the
        measure-zero fallback and the drift-certificate case split)."""
        return self._zero_b_blocks

    def s_tilde(self, q_sizes, n_obs):
        """min over blocks of (q_i + 2 a_i), and (N + 2 a_e)."""
        vals = [q + 2.0 * ai for q, ai in zip(q_sizes, self.a)]
        vals.append(n_obs + 2.0 * self.a_e)
        return float(min(vals))


@dataclass(frozen=True)
class DesignSummary:
    """Immutable cache of everything derived from a design.

    ``eigvecs`` holds eigenvectors of M = Z^T (I - P_X) Z as *columns*,
    paired with ``eigvals`` in descending order; eigenvalues at or below
    rank_tol * lambda_max count as zero for the rank ``t``, the
    pseudo-inverse, and the projection onto range(M).
    """

    n_obs: int
    p: int
    q: int
    r: int
    q_sizes: tuple
    t: int
    sse: float
    lambda_max: float
    eigvals: np.ndarray
    eigvecs: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    fro_izx_z: float
    norm_izx_y: float
    ztilde_y: np.ndarray
    rank_tol: float
    cutoff_gap: float
    # cached intermediates consumed by the sampler and the checks
    ztz_ipx: np.ndarray      # M = Z^T (I - P_X) Z, symmetrized
    izx_z: np.ndarray        # (I - P_X) Z
    qx: np.ndarray           # orthonormal basis of col(X)
    rx: np.ndarray           # triangular factor with X = qx rx
    xtx_inv: np.ndarray      # (X^T X)^-1
    beta_ls: np.ndarray      # (X^T X)^-1 X^T y
    r_xz: np.ndarray         # (X^T X)^-1 X^T Z

    @property
    def block_slices(self):
        offs = np.concatenate([[0], np.cumsum(self.q_sizes)])
        return tuple(slice(int(offs[i]), int(offs[i + 1])) for i in range(self.r))

    def d_inv_diag(self, sigma2_u):
        """Diagonal of D^-1 for per-block variances sigma2_u."""
        return np.repeat(1.0 / np.asarray(sigma2_u, dtype=float), self.q_sizes)

    def range_projection(self):
        """Projector onto range(M), reconstructed from the kept eigenpairs."""
        v = self.eigvecs[:, : self.t]
        return v @ v.T

    def pseudo_inverse(self):
        """Moore-Penrose inverse of M from the thresholded spectrum."""
        v = self.eigvecs[:, : self.t]
        if self.t == 0:
            return np.zeros((self.q, self.q))
        return (v / self.eigvals[: self.t]) @ v.T

    def project_onto_range(self, vec_or_mat):
        """Project columns onto range(M).  Exact-arithmetic identity for
        anything of the form Z^T (I - P_X) w; used to suppress rounding
        noise that would otherwise be amplified by near-singular solves."""
        v = self.eigvecs[:, : self.t]
        return v @ (v.T @ vec_or_mat)


def _numeric_rank(mat, rank_tol):
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))


def compute_sse(design):
    """Squared residual norm of y after projecting onto the full design.

    Uses an orthogonal-factorization least-squares solve of W = (X Z);
    the residual norm is unique even when W is rank deficient.  A
    residual below 1e-12 * ||y|| is rounding dust from an exact fit and
    snaps to 0.0 so that exact-zero tests (the residual-mass condition)
    behave as in exact arithmetic.
    """
    design.require_finite()
    w = design.w
    theta_hat, *_ = np.linalg.lstsq(w, design.y, rcond=None)
    resid = design.y - w @ theta_hat
    sse = float(resid @ resid)
    if sse < 1e-24 * float(design.y @ design.y):
        return 0.0
    return sse


def summarize_design(design, rank_tol=DEFAULT_RANK_TOL):
    """Compute the immutable :class:`DesignSummary` for a design.

    Raises:
        RankDeficientX: numerical rank of X is below p (the posterior is
            improper in that case, so nothing downstream is meaningful).
        NonFinite: any input entry is NaN or infinite.
    """
    if not rank_tol > 0:
        raise ValueError("rank_tol must be positive")
    design.require_finite()
    x, y = design.x, design.y
    n, p = x.shape
    if _numeric_rank(x, rank_tol) < p:
        raise RankDeficientX(f"numerical rank of X is below p={p}")

    qx, rx = np.linalg.qr(x)
    z = design.z
    izx_z = z - qx @ (qx.T @ z)
    m = z.T @ izx_z
    m = 0.5 * (m + m.T)

    w_asc, v_asc = np.linalg.eigh(m)
    eigvals = w_asc[::-1].copy()
    eigvecs = v_asc[:, ::-1].copy()
    lambda_max = float(max(eigvals[0], 0.0)) if eigvals.size else 0.0
    if lambda_max > 0.0:
        keep = eigvals > rank_tol * lambda_max
    else:
        keep = np.zeros(eigvals.shape, dtype=bool)
    t = int(keep.sum())
    q = z.shape[1]
    if 0 < t < q:
        cutoff_gap = float(eigvals[t - 1] - eigvals[t])
    else:
        cutoff_gap = float("inf")

    v_pos = eigvecs[:, :t]
    diag_into_range = np.sum(v_pos * v_pos, axis=1)          # diag of P
    diag_complement = np.clip(1.0 - diag_into_range, 0.0, 1.0)
    if t == 0:
        diag_pinv = np.zeros(q)
    else:
        diag_pinv = np.sum(v_pos * (v_pos / eigvals[:t]), axis=1)

    q_sizes = design.q_sizes
    offs = np.concatenate([[0], np.cumsum(q_sizes)])
    zeta = np.empty(len(q_sizes))
    xi = np.empty(len(q_sizes))
    snap = 1e-12 * max(q, 1)
    for i in range(len(q_sizes)):
        s = slice(int(offs[i]), int(offs[i + 1]))
        zi = float(diag_complement[s].sum())
        zeta[i] = 0.0 if zi < snap else zi
        xi[i] = float(max(diag_pinv[s].sum(), 0.0))

    izx_y = y - qx @ (qx.T @ y)
    ztilde_y = z.T @ izx_y
    beta_ls = solve_triangular(rx, qx.T @ y, lower=False)
    rx_inv = solve_triangular(rx, np.eye(p), lower=False)
    xtx_inv = rx_inv @ rx_inv.T
    r_xz = solve_triangular(rx, qx.T @ z, lower=False)

    return DesignSummary(
        n_obs=n,
        p=p,
        q=q,
        r=design.r,
        q_sizes=q_sizes,
        t=t,
        sse=compute_sse(design),
        lambda_max=lambda_max,
        eigvals=_as_readonly(eigvals),
        eigvecs=_as_readonly(eigvecs),
        zeta=_as_readonly(zeta),
        xi=_as_readonly(xi),
        fro_izx_z=float(np.linalg.norm(izx_z)),
        norm_izx_y=float(np.linalg.norm(izx_y)),
        ztilde_y=_as_readonly(ztilde_y),
        rank_tol=float(rank_tol),
        cutoff_gap=cutoff_gap,
        ztz_ipx=_as_readonly(m),
        izx_z=_as_readonly(izx_z),
        qx=_as_readonly(qx),
        rx=_as_readonly(rx),
        xtx_inv=_as_readonly(xtx_inv),
        beta_ls=_as_readonly(beta_ls),
        r_xz=_as_readonly(r_xz),
    )


@dataclass(frozen=True)
class ValidationReport:
    """Pass/fail record of the four well-definedness conditions.

    s1: numerical rank(X) = p
    s2: min_i b_i >= 0
    s3: 2 b_e + SSE > 0
    s4: s_tilde > 0, with s_tilde = min{q_1+2a_1, ..., q_r+2a_r, N+2a_e}
    """

    s1: bool
    s2: bool
    s3: bool
    s4: bool
    s_tilde: float
    sse: float

    @property
    def passed(self):
        return self.s1 and self.s2 and self.s3 and self.s4

    def to_dict(self):
        return {
            "s1_rank_x": self.s1,
            "s2_nonnegative_b": self.s2,
            "s3_residual_mass": self.s3,
            "s4_positive_s_tilde": self.s4,
            "s_tilde": self.s_tilde,
            "sse": self.sse,
            "passed": self.passed,
        }


def validate_model(design, prior, rank_tol=DEFAULT_RANK_TOL):
    """Report whether the two conditional densities are well defined.

    Failures are data, not exceptions: an all-False report is a valid
    return value describing a broken model.
    """
    design.require_finite()
    if prior.r != design.r:
        raise DimensionMismatch(
            f"prior has {prior.r} blocks but design has {design.r}"
        )
    sse = compute_sse(design)
    s_tilde = prior.s_tilde(design.q_sizes, design.n_obs)
    return ValidationReport(
        s1=_numeric_rank(design.x, rank_tol) == design.p,
        s2=bool(np.min(prior.b) >= 0.0),
        s3=bool(2.0 * prior.b_e + sse > 0.0),
        s4=bool(s_tilde > 0.0),
        s_tilde=s_tilde,
        sse=sse,
    )


def build_oneway(c, n_sizes, y):
    """One-way random-effects design: common intercept plus one grouping
    factor with c levels of sizes n_sizes."""
    c = int(c)
    n_sizes = [int(v) for v in n_sizes]
    if c < 2:
        raise DimensionMismatch("one-way model needs at least two groups")
    if len(n_sizes) != c or any(v < 1 for v in n_sizes):
        raise DimensionMismatch("n_sizes must list a positive size per group")
    y = np.asarray(y, dtype=float).reshape(-1)
    n = sum(n_sizes)
    if y.shape[0] != n:
        raise DimensionMismatch(f"len(y)={y.shape[0]} but group sizes sum to {n}")
    x = np.ones((n, 1))
    z = np.zeros((n, c))
    row = 0
    for g, size in enumerate(n_sizes):
        z[row : row + size, g] = 1.0
        row += size
    return GlmmDesign(y=y, x=x, z_blocks=(z,))


def build_twoway(m, n, y):
    """Two-way crossed random-effects design with one observation per
    cell, rows ordered lexicographically (cell (i, j) at row i*n + j)."""
    m, n = int(m), int(n)
    if m < 2 or n < 2:
        raise DimensionMismatch("two-way model needs m, n >= 2")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != m * n:
        raise DimensionMismatch(f"len(y)={y.shape[0]} but grid has {m * n} cells")
    x = np.ones((m * n, 1))
    z1 = np.kron(np.eye(m), np.ones((n, 1)))
    z2 = np.kron(np.ones((m, 1)), np.eye(n))
    return GlmmDesign(y=y, x=x, z_blocks=(z1, z2))


# ---------------------------------------------------------------------------
# File formats: design manifest (JSON + headerless CSV) and prior JSON.

def save_design(design, directory, manifest_name="design.json"):
    """Write y/x/z CSV files plus a manifest referencing them.

    CSV values carry 17 significant digits so a round trip is exact.
    Returns the manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "y.csv", design.y.reshape(-1, 1), fmt="%.17g", delimiter=",")
    np.savetxt(directory / "x.csv", design.x, fmt="%.17g", delimiter=",")
    z_names = []
    for i, z in enumerate(design.z_blocks, start=1):
        name = f"z{i}.csv"
        np.savetxt(directory / name, z, fmt="%.17g", delimiter=",")
        z_names.append(name)
    manifest = {"y": "y.csv", "x": "x.csv", "z_blocks": z_names}
    path = directory / manifest_name
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_design(manifest_path):
    """Load a design from a JSON manifest; CSV paths resolve relative to
    the manifest's directory."""
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text())
    for key in ("y", "x", "z_blocks"):
        if key not in spec:
            raise ValueError(f"design manifest is missing required key {key!r}")
    base = manifest_path.parent

    def _read(name, ndmin):
        return np.loadtxt(base / name, delimiter=",", ndmin=ndmin)

    y = _read(spec["y"], 1).reshape(-1)
    x = _read(spec["x"], 2)
    zs = tuple(_read(name, 2) for name in spec["z_blocks"])
    return GlmmDesign(y=y, x=x, z_blocks=zs)


def save_prior(prior, path):
    payload = {
        "a_e": prior.a_e,
        "b_e": prior.b_e,
        "a": [float(v) for v in prior.a],
        "b": [float(v) for v in prior.b],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
    return Path(path)


def load_prior(path):
    """Load a prior from flat JSON; every hyperparameter must be explicit
    (no defaulting, since sign conventions are error prone)."""
    spec = json.loads(Path(path).read_text())
    missing = [k for k in ("a_e", "b_e", "a", "b") if k not in spec]
    if missing:
        raise ValueError(f"prior file is missing required keys: {missing}")
    return PriorSpec(a_e=spec["a_e"], b_e=spec["b_e"], a=spec["a"], b=spec["b"])
