"""Command line interface: ``design``, ``simulate``, ``certify`` and ``inspect``.

Exit codes
    0  success
    2  usage, config schema or input-file error
    3  design infeasible (empty sets, non-stabilizing K, ...)
    4  stability certificate failed (the artifact is still written)
    5  resource limit exceeded
    6  a gated statistical check of ``simulate`` failed
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .artifact import ArtifactError, ControllerArtifact
from .config import settings
from .configfile import ConfigError, load_problem
from .designer import certify, design
from .geometry import ResourceError
from .prediction import DesignError
from .simulator import Campaign, CampaignError, run_campaign, run_online_scenario_baseline, write_summary, write_trajectories

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_CERTIFICATE = 4
EXIT_RESOURCE = 5
EXIT_STATISTICS = 6


def _print(msg=""):
    print(msg, flush=True)


def cmd_design(args) -> int:
    prob = load_problem(args.config)
    d = prob.design
    seed = d["seed"] if args.seed is None else args.seed
    result = design(prob.model, prob.spec, seed=seed, mc_samples=d["mc_samples"],
                    terminal_draws=d["terminal_draws"], n_probe=d["n_probe"])
    art = result.artifact
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    art.save(args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("\n".join([f"seed: {seed}"] + result.log) + "\n")
    for line in result.log:
        if not line.startswith("budget"):
            _print(line)
    _print(f"artifact written to {args.out}")
    if not art.certificate["passed"]:
        _print(f"warning: stability certificate failed at vertices {art.certificate['failing_vertices']}")
        return EXIT_CERTIFICATE
    return EXIT_OK


def cmd_simulate(args) -> int:
    art = ControllerArtifact.load(args.artifact)
    prob = load_problem(args.config)
    s = prob.simulate
    seed = s["seed"] if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x0 = np.asarray(s["x0"]["points"], dtype=float) if "points" in s["x0"] else None
    mode = s["x0"].get("mode", "mixed")
    summaries, timing = [], {}
    passed = True
    for dist in s["disturbances"]:
        c = Campaign(art, prob.model, n_rollouts=s["n_rollouts"], steps=s["steps"], seed=seed, disturbance=dist,
                     x0=x0, x0_mode=mode, threshold=s["threshold"])
        res = run_campaign(c)
        write_trajectories(res.records, art, out / f"trajectories_{dist}.csv")
        summaries.append(res.summary)
        timing[dist] = res.timing
        passed &= res.summary["statistical_suite_passed"]
        _print(f"{dist}: infeasible={res.summary['infeasible_solves']} "
               f"suite={'pass' if res.summary['statistical_suite_passed'] else 'FAIL'}")
    baseline = None
    if args.baseline or s["baseline"]:
        c = Campaign(art, prob.model, n_rollouts=s["baseline_rollouts"], steps=s["steps"], seed=seed,
                     disturbance="stochastic", x0=x0, x0_mode=mode, threshold=s["threshold"])
        res = run_online_scenario_baseline(c)
        write_trajectories(res.records, art, out / "trajectories_baseline.csv")
        baseline = res.summary
        timing["baseline"] = res.timing
        _print(f"baseline: {res.summary['baseline']['rows_per_solve']} rows per solve vs "
               f"{res.summary['baseline']['artifact_rows']} in the artifact; "
               f"infeasible={res.summary['infeasible_solves']}")
    summary = {
        "format_version": "offline-smpc-simulation/1",
        "artifact_checksum": json.loads(Path(args.artifact).read_text())["checksum"],
        "seed": int(seed),
        "campaigns": summaries,
        "baseline": baseline,
        "passed": bool(passed),
    }
    write_summary(summary, out / "summary.json")
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=1) + "\n")
    _print(f"summary written to {out / 'summary.json'}")
    return EXIT_OK if passed else EXIT_STATISTICS


def cmd_certify(args) -> int:
    art = ControllerArtifact.load(args.artifact)
    prob = load_problem(args.config)
    seed = prob.design["seed"] if args.seed is None else args.seed
    probes = prob.design["n_probe"] if args.probes is None else args.probes
    spec = prob.spec
    if spec.K.shape != art.K.shape or not np.array_equal(spec.K, art.K):
        spec = dataclasses.replace(spec, K=art.K)
    cert = certify(art, prob.model, spec, probes, seed)
    for j, e in enumerate(cert["min_eigenvalues"]):
        _print(f"vertex {j}: lambda_min = {e:.6g}")
    if not cert["min_eigenvalues"]:
        for j in cert["failing_vertices"]:
            _print(f"vertex {j}: not evaluated, the eps_f bound reached 1")
    _print(f"eps_f (95% upper bound) = {cert['eps_f']:.6g}; certificate {'passed' if cert['passed'] else 'FAILED'}")
    text = json.dumps(cert, sort_keys=True, indent=1, allow_nan=False) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if cert["passed"] else EXIT_CERTIFICATE


def inspect_report(art: ControllerArtifact) -> dict:
    """Every recorded scalar of an artifact, keyed by a dotted name."""
    st = art.stats
    rep = {
        "format_version": art.format_version,
        "dims.n": art.n,
        "dims.m": art.m,
        "dims.T": art.T,
        "rows.D": art.D.n_rows,
        "rows.D_R": art.D_R.n_rows,
        "rows.C_T": art.C_T.n_rows,
        "rows.C_inf": art.C_inf.n_rows,
        "rows.X_T": art.X_T.n_rows,
        "delta": art.delta,
        "eps_h": art.eps_h,
    }
    for j, e in enumerate(art.eps_x):
        rep[f"eps_x.{j}"] = float(e)
    for j, e in enumerate(art.input_directions):
        rep[f"input_directions.{j}"] = float(e)
    for fam, cnt in st.get("rows_by_family", {}).items():
        rep[f"rows.D.{fam}"] = cnt
    for key in ("rows_sampled", "rows_reduced", "rows_first_step", "invariance_iterations", "sampled_sets",
                "confidence_per_set", "confidence_union_bound", "cost_exact"):
        if key in st:
            rep[f"stats.{key}"] = st[key]
    for key, val in art.seeds.items():
        rep[f"seeds.{key}"] = val
    for b in art.budgets:
        rep[f"budget.{b['family']}.{b['row']}.{b['stage']}"] = b["count"]
    if art.certificate:
        for key in ("passed", "eps_f", "lambda_min", "lambda"):
            if key in art.certificate:
                rep[f"certificate.{key}"] = art.certificate[key]
        for j, e in enumerate(art.certificate.get("min_eigenvalues", [])):
            rep[f"certificate.min_eigenvalue.{j}"] = e
    return rep


def cmd_inspect(args) -> int:
    art = ControllerArtifact.load(args.artifact)
    rep = inspect_report(art)
    if args.json:
        sys.stdout.write(json.dumps(rep, sort_keys=True, indent=1) + "\n")
        return EXIT_OK
    width = max(len(k) for k in rep)
    for key, val in rep.items():
        _print(f"{key:<{width}}  {val!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offline-smpc", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", type=int, default=1, help="worker threads for parallel stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="run the offline design and write the controller artifact")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="design log path (default: <out>.log)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=None, dest="threads_sub")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="closed-loop Monte Carlo campaigns")
    p.add_argument("--artifact", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--baseline", action="store_true", help="also run the online scenario baseline")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=None, dest="threads_sub")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify", help="estimate eps_f and the stability certificate")
    p.add_argument("--artifact", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--probes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=None, dest="threads_sub")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("inspect", help="human-readable artifact report")
    p.add_argument("--artifact", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    threads = getattr(args, "threads_sub", None) or args.threads
    if threads < 1:
        _print("error: --threads must be >= 1")
        return EXIT_USAGE
    settings.threads = threads
    try:
        return args.func(args)
    except (ConfigError, ArtifactError, CampaignError, FileNotFoundError, KeyError) as exc:
        _print(f"error: {exc}")
        return EXIT_USAGE
    except DesignError as exc:
        _print(f"design infeasible: {exc}")
        return EXIT_INFEASIBLE
    except ResourceError as exc:
        _print(f"resource limit: {exc}")
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
