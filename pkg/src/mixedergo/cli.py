"""Command-line front end.

Subcommands:

* ``check``   validate a model and certify convergence before sampling;
* ``sample``  run the Gibbs chain and write draws + metadata;
* ``analyze`` batch-means estimates from a written draws directory;
* ``demo``    generate a worked one-way or two-way example end to end.

Exit codes are a stable contract: 0 when geometric ergodicity is
certified, 3 when the posterior is proper but no witness was found,
4 when propriety could not be established, 2 on input or I/O errors.
Set MIXEDERGO_LOG to error/warn/info/debug to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import MixedErgoError, TooFewSamples
from .ergodicity import build_report
from .kernel import RngStream
from .mcmc import ChainConfig, batch_means_mcse, load_run, run_chain, save_run
from .model import (
    build_oneway,
    build_twoway,
    load_design,
    load_prior,
    PriorSpec,
    save_design,
    save_prior,
    validate_model,
)

EXIT_CERTIFIED = 0
EXIT_INPUT_ERROR = 2
EXIT_PROPER_UNCERTIFIED = 3
EXIT_UNESTABLISHED = 4


def load_schema(name):
    """Load one of the shipped output schemas (report, meta, columns,
    estimates) as a dict."""
    from importlib import resources

    ref = resources.files("mixedergo").joinpath(f"schemas/{name}.schema.json")
    return json.loads(ref.read_text())

log = logging.getLogger("mixedergo")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging():
    level = os.environ.get("MIXEDERGO_LOG", "warn").strip().lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _atomic_write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n")
    tmp.replace(path)


def _load_inputs(args):
    design = load_design(args.design)
    prior = load_prior(args.prior)
    return design, prior


def _report_exit_code(report):
    if report.theorem2.verdict:
        return EXIT_CERTIFIED
    if report.theorem1.verdict:
        return EXIT_PROPER_UNCERTIFIED
    return EXIT_UNESTABLISHED


def cmd_check(args):
    design, prior = _load_inputs(args)
    report = build_report(design, prior, grid_size=args.grid_size)
    payload = report.to_dict()
    print(json.dumps(payload, indent=2))
    if args.out:
        _atomic_write_json(Path(args.out) / "report.json", payload)
    code = _report_exit_code(report)
    log.info("check verdict: certified=%s exit=%d", report.certified_geometric, code)
    return code


def _certificate_status(report):
    if report.theorem2.verdict:
        return "certified-geometric"
    if report.theorem1.verdict:
        return "proper-uncertified"
    return "unestablished"


def cmd_sample(args):
    design, prior = _load_inputs(args)
    validation = validate_model(design, prior)
    if not validation.passed:
        # the conditional densities themselves are undefined; --force cannot help
        print("well-definedness conditions fail; the kernel is undefined", file=sys.stderr)
        return EXIT_INPUT_ERROR if args.force else EXIT_UNESTABLISHED
    report = build_report(design, prior, grid_size=args.grid_size, want_drift=False)
    status = _certificate_status(report)
    if status == "unestablished":
        if not args.force:
            print(
                "posterior propriety is not established; refusing to sample "
                "(pass --force to override)",
                file=sys.stderr,
            )
            return EXIT_UNESTABLISHED
        log.warning(
            "sampling without certification: an improper posterior cannot "
            "yield a geometrically ergodic chain and averages may diverge"
        )
    config = ChainConfig(
        n_samples=args.samples, burn_in=args.burn_in, thin=args.thin, seed=args.seed
    )
    run = run_chain(design, prior, config)
    out = Path(args.out)
    save_run(run, out, certificate_status=status)
    print(json.dumps({"out": str(out), "n_samples": run.n_samples, "status": status}))
    return EXIT_CERTIFIED


def cmd_analyze(args):
    directory = Path(args.out)
    run = load_run(directory)
    if args.batches is not None and (
        args.batches < 2 or run.n_samples < 2 * args.batches
    ):
        print(
            f"n_batches={args.batches} incompatible with {run.n_samples} draws",
            file=sys.stderr,
        )
        return EXIT_INPUT_ERROR
    estimates = {}
    for name in run.column_names:
        try:
            est, se = batch_means_mcse(run, name, n_batches=args.batches)
        except TooFewSamples as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_INPUT_ERROR
        estimates[name] = {"mean": est, "mcse": se}
    payload = {
        "estimates": estimates,
        "n_samples": run.n_samples,
        "certificate_status": run.meta.get("certificate_status"),
    }
    print(json.dumps(payload, indent=2))
    _atomic_write_json(directory / "estimates.json", payload)
    return EXIT_CERTIFIED


_DEMO_SEED = 20240901


def _demo_model(name, n_obs=None):
    rng = RngStream(_DEMO_SEED)
    if name == "twoway":
        m, n = 5, 6
        y = 1.5 + rng.standard_normal(m * n)
        design = build_twoway(m, n, y)
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5, -0.5], b=[0.0, 0.0])
    else:
        c = 3
        n_total = 9 if n_obs is None else int(n_obs)
        if n_total < c + 1:
            raise ValueError("one-way demo needs at least c + 1 observations")
        sizes = [1] * c
        sizes[-1] += n_total - c
        y = 0.5 + rng.standard_normal(n_total)
        design = build_oneway(c, sizes, y)
        prior = PriorSpec(a_e=0.0, b_e=0.0, a=[-0.5], b=[0.0])
    return design, prior


def _demo_summary_lines(report):
    lines = []
    wd = report.proposition1
    lines.append(f"well-defined: {wd.passed} (s_tilde = {wd.s_tilde:g}, SSE = {wd.sse:.6g})")
    lines.append(f"propriety conditions: {report.theorem1.verdict}")
    cor = report.corollary1
    if cor.verdict:
        lines.append("strict closed-form conditions hold: geometric ergodicity certified outright")
    else:
        failed_b = [i for i, ok in enumerate(cor.condition_b) if not ok]
        why = []
        if failed_b:
            why.append(
                f"per-block inequality fails for block(s) {failed_b} "
                f"(needs q_i + 2 a_i > {cor.b_threshold:g})"
            )
        if not cor.condition_c:
            why.append(f"sample-size inequality fails (needs N + 2 a_e > {cor.c_threshold:g})")
        lines.append("strict closed-form conditions do not apply: " + "; ".join(why or ["prior-shape condition fails"]))
    ws = report.theorem2
    if ws.verdict:
        lines.append(
            f"witness search: s = {ws.witness:.6g} gives "
            f"max(lhs_e, lhs_u) = {max(ws.lhs_e_at_witness, ws.lhs_u_at_witness):.4f} < 1 "
            "so the chain is certified geometrically ergodic"
        )
    else:
        lines.append("witness search: no s found at this grid resolution")
    if report.oneway is not None:
        ow = report.oneway
        lines.append(
            f"one-way closed form: verdict {ow.verdict} "
            f"(sample size ok: {ow.sample_size_ok}, digamma margin {ow.digamma_margin:.4f})"
        )
    if report.drift is not None:
        d = report.drift
        lines.append(
            f"drift certificate: rho = {d.rho:.4f} at s = {d.s:.4g}, c = {d.c:.4g} "
            f"(L = {d.big_l:.4g}, from an estimated K = {d.k_estimate:.4g})"
        )
    return lines


def cmd_demo(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    design, prior = _demo_model(args.name, n_obs=args.n_obs)
    manifest = save_design(design, out / "inputs")
    prior_path = save_prior(prior, out / "inputs" / "prior.json")
    report = build_report(design, prior, grid_size=args.grid_size)
    _atomic_write_json(out / "report.json", report.to_dict())

    status = _certificate_status(report)
    config = ChainConfig(n_samples=args.samples, burn_in=args.burn_in, thin=args.thin, seed=args.seed)
    run = run_chain(design, prior, config)
    save_run(run, out / "draws", certificate_status=status)
    estimates = {}
    for name in run.column_names:
        est, se = batch_means_mcse(run, name)
        estimates[name] = {"mean": est, "mcse": se}
    _atomic_write_json(
        out / "draws" / "estimates.json",
        {
            "estimates": estimates,
            "n_samples": run.n_samples,
            "certificate_status": status,
        },
    )

    lines = [f"demo: {args.name} model", f"inputs: {manifest}, {prior_path}"]
    lines += _demo_summary_lines(report)
    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return _report_exit_code(report)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mixedergo",
        description=(
            "Gibbs sampling for variance-components models under improper "
            "conditionally-conjugate priors, with pre-run convergence certification"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p):
        p.add_argument("--design", required=True, help="path to the design manifest JSON")
        p.add_argument("--prior", required=True, help="path to the prior JSON")

    p_check = sub.add_parser("check", help="certify propriety and geometric ergodicity")
    add_io(p_check)
    p_check.add_argument("--grid-size", type=int, default=4096)
    p_check.add_argument("--out", default=None, help="directory for report.json")
    p_check.set_defaults(func=cmd_check)

    p_sample = sub.add_parser("sample", help="run the Gibbs chain and write draws")
    add_io(p_sample)
    p_sample.add_argument("--grid-size", type=int, default=4096)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--burn-in", type=int, default=0)
    p_sample.add_argument("--samples", type=int, required=True)
    p_sample.add_argument("--thin", type=int, default=1)
    p_sample.add_argument("--out", required=True, help="output directory")
    p_sample.add_argument("--force", action="store_true", help="sample even without certification")
    p_sample.set_defaults(func=cmd_sample)

    p_analyze = sub.add_parser("analyze", help="batch-means estimates for written draws")
    p_analyze.add_argument("--out", required=True, help="directory holding draws.csv")
    p_analyze.add_argument("--batches", type=int, default=None)
    p_analyze.set_defaults(func=cmd_analyze)

    p_demo = sub.add_parser("demo", help="generate and analyze a worked example")
    p_demo.add_argument("name", choices=["oneway", "twoway"])
    p_demo.add_argument("--out", required=True)
    p_demo.add_argument("--grid-size", type=int, default=4096)
    p_demo.add_argument("--seed", type=int, default=_DEMO_SEED)
    p_demo.add_argument("--burn-in", type=int, default=500)
    p_demo.add_argument("--samples", type=int, default=4000)
    p_demo.add_argument("--thin", type=int, default=1)
    p_demo.add_argument("--n-obs", type=int, default=None, help="override N for the one-way demo")
    p_demo.set_defaults(func=cmd_demo)

    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, ValueError, MixedErgoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
