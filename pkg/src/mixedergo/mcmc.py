"""Chain execution and output analysis.

Runs the two-block Gibbs kernel for a configured number of iterations
and computes ergodic averages with batch-means standard errors.  The
standard errors are asymptotically valid when the chain carries a
geometric-ergodicity certificate and the summand has the needed
moments; the moment condition on user-supplied functions cannot be
verified here and is treated as an assumption.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import NonFinite, TooFewSamples, ValidationFailed
from .kernel import RngStream, default_initial_state, sample_sigma2, sample_theta
from .model import DEFAULT_RANK_TOL, summarize_design, validate_model


@dataclass(frozen=True)
class ChainConfig:
    n_samples: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be at least 1")
        if int(self.burn_in) < 0:
            raise ValueError("burn_in must be nonnegative")
        if int(self.thin) < 1:
            raise ValueError("thin must be at least 1")
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "burn_in", int(self.burn_in))
        object.__setattr__(self, "thin", int(self.thin))
        object.__setattr__(self, "seed", int(self.seed))


def _fingerprint_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def design_fingerprint(design):
    return _fingerprint_arrays(design.y, design.x, *design.z_blocks)


def prior_fingerprint(prior):
    return _fingerprint_arrays(
        np.array([prior.a_e, prior.b_e]), np.asarray(prior.a), np.asarray(prior.b)
    )


def _column_names(p, q_sizes, r):
    names = [f"beta_{j}" for j in range(p)]
    for i, qi in enumerate(q_sizes):
        names.extend(f"u_{i}_{k}" for k in range(qi))
    names.append("sigma2_e")
    names.extend(f"sigma2_u_{i}" for i in range(r))
    return tuple(names)


@dataclass(frozen=True)
class ChainRun:
    """Retained draws plus the configuration and provenance that produced
    them.  Row layout: (beta, u, sigma2_e, sigma2_u)."""

    config: ChainConfig
    draws: np.ndarray
    column_names: tuple
    p: int
    q_sizes: tuple
    meta: dict

    @property
    def n_samples(self):
        return self.draws.shape[0]

    def column(self, name):
        try:
            idx = self.column_names.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None
        return self.draws[:, idx]


def run_chain(design, prior, config, init=None, rank_tol=DEFAULT_RANK_TOL):
    """Run the Gibbs chain; deterministic given the config seed.

    Raises ValidationFailed when the well-definedness conditions do not
    all hold (carrying the offending report).
    """
    report = validate_model(design, prior, rank_tol=rank_tol)
    if not report.passed:
        raise ValidationFailed(
            "model fails the well-definedness conditions; refusing to sample",
            report=report,
        )
    summary = summarize_design(design, rank_tol=rank_tol)
    rng = RngStream(config.seed)
    state = default_initial_state(summary, prior) if init is None else init

    n_cols = summary.p + summary.q + 1 + summary.r
    draws = np.empty((config.n_samples, n_cols))
    t0 = time.perf_counter()
    # tight loop over the same two sub-draws gibbs_step performs, keeping
    # plain arrays between iterations; the draw sequence is identical
    sigma2 = state.sigma2
    theta = state.theta
    p, q = summary.p, summary.q
    for _ in range(config.burn_in):
        theta = sample_theta(summary, design, sigma2, rng)
        sigma2 = sample_sigma2(design, prior, theta, rng)
    for k in range(config.n_samples):
        for _ in range(config.thin):
            theta = sample_theta(summary, design, sigma2, rng)
            sigma2 = sample_sigma2(design, prior, theta, rng)
        draws[k, : p + q] = theta
        draws[k, p + q :] = sigma2
    wall = time.perf_counter() - t0

    meta = {
        "wall_time_s": wall,
        "design_fingerprint": design_fingerprint(design),
        "prior_fingerprint": prior_fingerprint(prior),
        "n_samples": config.n_samples,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "seed": config.seed,
        "p": summary.p,
        "q_sizes": list(summary.q_sizes),
    }
    return ChainRun(
        config=config,
        draws=draws,
        column_names=_column_names(summary.p, summary.q_sizes, summary.r),
        p=summary.p,
        q_sizes=summary.q_sizes,
        meta=meta,
    )


def _g_values(run, g):
    if isinstance(g, str):
        values = run.column(g).astype(float)
    else:
        values = np.array([float(g(row)) for row in run.draws])
    if not np.all(np.isfinite(values)):
        raise NonFinite("g produced non-finite values")
    return values


def ergodic_average(run, g):
    """Plain average of g over the retained draws; g is a column name or
    a callable taking one draw row."""
    if run.n_samples < 1:
        raise TooFewSamples("empty chain")
    return float(np.mean(_g_values(run, g)))


def batch_means_mcse(run, g, n_batches=None):
    """Batch-means point estimate and Monte Carlo standard error.

    Splits the retained draws into n_batches equal contiguous batches
    (default floor(sqrt(m)); the remainder past n_batches * batch_size
    is dropped) and returns (mean over the truncated sample,
    sqrt(sample variance of the batch means / n_batches)).
    """
    values = _g_values(run, g)
    m = values.shape[0]
    if n_batches is None:
        n_batches = int(math.floor(math.sqrt(m)))
    n_batches = int(n_batches)
    if n_batches < 2 or m < 2 * n_batches:
        raise TooFewSamples(
            f"need n_batches >= 2 and n_samples >= 2 * n_batches; "
            f"got n_batches={n_batches}, n_samples={m}"
        )
    b = m // n_batches
    used = values[: n_batches * b]
    batch_means = used.reshape(n_batches, b).mean(axis=1)
    estimate = float(used.mean())
    std_error = float(math.sqrt(batch_means.var(ddof=1) / n_batches))
    return estimate, std_error


def truncate_run(run, m):
    """First m retained draws as a new run (prefix; used for scaling
    diagnostics)."""
    if not 1 <= m <= run.n_samples:
        raise TooFewSamples(f"cannot truncate to {m} of {run.n_samples} draws")
    cfg = replace(run.config, n_samples=int(m))
    return replace(run, config=cfg, draws=run.draws[:m])


# ---------------------------------------------------------------------------
# On-disk format: headerless CSV + JSON sidecar naming the columns.

def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def save_run(run, directory, certificate_status=None):
    """Write draws.csv (headerless, 17 significant digits), columns.json,
    and meta.json atomically.  Returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = "\n".join(
        ",".join(f"{v:.17g}" for v in row) for row in run.draws
    )
    _atomic_write(directory / "draws.csv", lines + "\n")
    sidecar = {
        "columns": list(run.column_names),
        "p": run.p,
        "q_sizes": list(run.q_sizes),
    }
    _atomic_write(directory / "columns.json", json.dumps(sidecar, indent=2) + "\n")
    meta = dict(run.meta)
    if certificate_status is not None:
        meta["certificate_status"] = certificate_status
    _atomic_write(directory / "meta.json", json.dumps(meta, indent=2) + "\n")
    return directory


def load_run(directory):
    """Rehydrate a ChainRun written by :func:`save_run`."""
    directory = Path(directory)
    sidecar = json.loads((directory / "columns.json").read_text())
    meta = json.loads((directory / "meta.json").read_text())
    draws = np.loadtxt(directory / "draws.csv", delimiter=",", ndmin=2)
    config = ChainConfig(
        n_samples=draws.shape[0],
        burn_in=int(meta.get("burn_in", 0)),
        thin=int(meta.get("thin", 1)),
        seed=int(meta.get("seed", 0)),
    )
    return ChainRun(
        config=config,
        draws=draws,
        column_names=tuple(sidecar["columns"]),
        p=int(sidecar["p"]),
        q_sizes=tuple(int(v) for v in sidecar["q_sizes"]),
        meta=meta,
    )
