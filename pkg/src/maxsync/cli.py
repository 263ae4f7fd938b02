"""Experiment runner: ``maxsync {generate,run,diverging,bench,verify}``.

Exit codes: 0 success, 1 property or assumption failure, 2 usage error.
Agents are 0-based in files and 1-based in printed output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dynamics as dyn
from . import oracle
from .network import (
    AssumptionWarning,
    InstanceError,
    TradeNetwork,
    load_network,
    random_instance,
    random_state,
    save_network,
    state_from_json,
    state_to_json,
    validate,
)
from .tropical import NEG_INF, decode_scalar, encode_scalar

log = logging.getLogger("maxsync")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# a trial counts as "alpha -> 0" when its last alpha is below this
ALPHA_ZERO = 1e-6


class UsageError(Exception):
    pass


@dataclass
class GenerateParams:
    n_agents: int = 20
    edge_prob: float = 0.2
    n_alternatives: int = 10
    cost_range: tuple[float, float] = (-1.0, 1.0)
    weight_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def build(self) -> TradeNetwork:
        return random_instance(
            self.n_agents, self.n_alternatives, self.edge_prob, self.cost_range, self.weight_range, self.seed
        )


@dataclass
class BenchParams:
    agent_counts: list[int] = field(default_factory=lambda: [100, 200, 400, 800])
    alternatives: list[int] = field(default_factory=lambda: [20])
    edge_prob: float = 0.2
    repetitions: int = 3


@dataclass
class ExperimentSpec:
    """One experiment: where the instance comes from and how to run it."""

    generate: GenerateParams | None = None
    instance_path: Path | None = None
    n_trials: int = 20
    config: dyn.RunConfig = field(default_factory=dyn.RunConfig)
    out: Path = Path(".")
    seed: int = 0
    value_range: tuple[float, float] = (-1.0, 1.0)
    strict: bool = False
    workers: int = 1
    bench: BenchParams | None = None

    def __post_init__(self):
        if (self.generate is None) == (self.instance_path is None):
            raise UsageError("exactly one instance source (generate or file) is required")
        if self.n_trials < 1:
            raise UsageError("n_trials must be >= 1")

    def load_instance(self) -> TradeNetwork:
        if self.instance_path is not None:
            return read_instance(self.instance_path, self.strict)
        net = self.generate.build()
        if self.strict and validate(net):
            raise InstanceError("generated instance violates assumptions")
        return net


def read_instance(path: Path, strict: bool = False) -> TradeNetwork:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read instance {path}: {exc}") from None
    return load_network(data, strict=strict)


# ------------------------------------------------------------------ generate


def cmd_generate(args) -> int:
    params = _generate_params(args)
    net = params.build()
    out = _outdir(args.out)
    path = out / "instance.json"
    path.write_bytes(save_network(net))
    eps = net.auto_epsilon()
    if eps == NEG_INF:
        log.warning("instance has no edges; epsilon = max edge weight is undefined")
        print("epsilon = -inf (undefined: no edges)")
    else:
        print(f"epsilon = {eps!r}")
    print(f"wrote {path} ({net.n_agents} agents, {net.n_edges} edges, d={net.n_alternatives})")
    return EXIT_OK


# ----------------------------------------------------------------------- run


def _run_trial(net: TradeNetwork, trial: int, seed: int, value_range, cfg: dyn.RunConfig):
    X0 = random_state(net.n_agents, net.n_alternatives, value_range, seed=seed, stream=trial)
    X, trace = dyn.rraggu(net, X0, cfg)
    return trial, X, trace


def run_experiment(spec: ExperimentSpec, net: TradeNetwork | None = None) -> dict:
    """Run every trial of ``spec`` and write traces, states and the summary.

    Trial ``k`` draws X(0) from state stream ``k``, so the content written
    does not depend on ``spec.workers``.
    """
    net = net if net is not None else spec.load_instance()
    out = _outdir(spec.out)
    for sub in ("traces", "states", "windows"):
        (out / sub).mkdir(exist_ok=True)
    (out / "instance.json").write_bytes(save_network(net))

    args = [(net, k, spec.seed, spec.value_range, spec.config) for k in range(spec.n_trials)]
    if spec.workers > 1 and spec.n_trials > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_trial, *zip(*args)))
    else:
        results = [_run_trial(*a) for a in args]
    results.sort(key=lambda r: r[0])

    trials = []
    for k, X, trace in results:
        if not trace.alpha_nonincreasing():
            raise AssertionError(
                f"trial {k}: alpha sequence is not non-increasing: {trace.alphas.tolist()}"
            )
        (out / "traces" / f"trial_{k:03d}.csv").write_text(trace.to_csv())
        (out / "states" / f"trial_{k:03d}.json").write_text(json.dumps(state_to_json(X)))
        (out / "windows" / f"trial_{k:03d}.json").write_text(
            json.dumps([state_to_json(S) for S in trace.window])
        )
        trials.append(
            {
                "trial": k,
                "status": trace.status,
                "sweeps": len(trace.records),
                "final_alpha": encode_scalar(trace.final_alpha),
                "final_loss": encode_scalar(trace.final_loss),
                "alpha_to_zero": bool(trace.final_alpha <= ALPHA_ZERO),
                "loss_within_epsilon": bool(trace.final_loss <= trace.epsilon + 1e-9),
                "divergence_floor": encode_scalar(trace.divergence_floor),
            }
        )
    n_zero = sum(t["alpha_to_zero"] for t in trials)
    summary = {
        "epsilon": encode_scalar(results[0][2].epsilon),
        "n_trials": spec.n_trials,
        "mode": "fixed_steps" if spec.config.steps is not None else "stopping",
        "steps": spec.config.steps,
        "n_alpha_to_zero": n_zero,
        "n_alpha_positive": spec.n_trials - n_zero,
        "fraction_alpha_to_zero": n_zero / spec.n_trials,
        "trials": trials,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_run(args) -> int:
    cfg = dyn.RunConfig(
        epsilon=_parse_eps(args.eps),
        max_iters=args.max_iters or 1000,
        steps=args.steps,
        plateau_window=args.plateau_window,
        keep_states=args.keep_states,
    )
    spec = ExperimentSpec(
        generate=None if args.instance else _generate_params(args),
        instance_path=Path(args.instance) if args.instance else None,
        n_trials=args.trials,
        config=cfg,
        out=Path(args.out),
        seed=args.seed,
        value_range=tuple(args.value_range),
        strict=args.strict,
        workers=dyn.resolve_workers(_parse_workers(args.workers)),
    )
    try:
        summary = run_experiment(spec)
    except AssertionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(
        f"epsilon = {summary['epsilon']}; alpha -> 0 in {summary['n_alpha_to_zero']}/{summary['n_trials']} trials"
    )
    for t in summary["trials"]:
        print(f"  trial {t['trial']:3d}: {t['status']:<15} alpha={t['final_alpha']} loss={t['final_loss']}")
    return EXIT_OK


# ----------------------------------------------------------------- diverging


def load_run(run_dir: Path) -> tuple[TradeNetwork, dict]:
    run_dir = Path(run_dir)
    try:
        summary = json.loads((run_dir / "summary.json").read_text())
    except OSError as exc:
        raise UsageError(f"{run_dir} is not a run directory: {exc}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AssumptionWarning)
        net = read_instance(run_dir / "instance.json")
    return net, summary


def diverging_report(run_dir: Path, trial: int | None = None) -> dict[int, dyn.DivergenceReport]:
    net, summary = load_run(run_dir)
    reports = {}
    for t in summary["trials"]:
        k = t["trial"]
        if trial is not None and k != trial:
            continue
        window = json.loads((Path(run_dir) / "windows" / f"trial_{k:03d}.json").read_text())
        states = [state_from_json(s) for s in window]
        reports[k] = dyn.divergence_report(net, states=states, floor=decode_scalar(t["divergence_floor"]))
    return reports


def cmd_diverging(args) -> int:
    reports = diverging_report(Path(args.run), args.trial)
    if not reports:
        raise UsageError("no matching trials")
    for k, rep in reports.items():
        if not rep.flagged:
            print(f"trial {k}: none")
            continue
        agents = ", ".join(str(u + 1) for u in rep.agents)
        pairs = " ".join(f"({u + 1},{i + 1})" for u, i in rep.flagged)
        verdict = "connected" if rep.connected else "not connected"
        print(f"trial {k}: agents {{{agents}}} diverging, subgraph {verdict}; (agent,alternative): {pairs}")
    return EXIT_OK


# --------------------------------------------------------------------- bench


def run_bench(params: BenchParams, seed: int = 0, workers: int = 1) -> list[dict]:
    rows = []
    for d in params.alternatives:
        for N in params.agent_counts:
            net = random_instance(N, d, params.edge_prob, seed=seed)
            X = random_state(N, d, seed=seed)
            times = []
            for _ in range(params.repetitions):
                t0 = time.perf_counter()
                dyn.tarski_laplacian(net, X, workers)
                times.append(time.perf_counter() - t0)
            rows.append(
                {"N": N, "d": d, "mean_seconds": float(np.mean(times)), "std_seconds": float(np.std(times))}
            )
            log.info("N=%d d=%d edges=%d mean=%.4fs", N, d, net.n_edges, rows[-1]["mean_seconds"])
    return rows


def cmd_bench(args) -> int:
    params = BenchParams(
        agent_counts=args.agent_counts,
        alternatives=args.d,
        edge_prob=args.p,
        repetitions=args.repetitions,
    )
    if params.repetitions < 1:
        raise UsageError("repetitions must be >= 1")
    rows = run_bench(params, args.seed, dyn.resolve_workers(_parse_workers(args.workers)))
    out = _outdir(args.out)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["N", "d", "mean_seconds", "std_seconds"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    for r in rows:
        print(f"N={r['N']:5d} d={r['d']:3d} {r['mean_seconds']:.4f}s ± {r['std_seconds']:.4f}s")
    return EXIT_OK


# -------------------------------------------------------------------- verify


def verify(
    net: TradeNetwork,
    solutions: Sequence[np.ndarray] = (),
    n_trials: int = 1000,
    seed: int = 0,
    tol: float = 1e-6,
) -> list[oracle.PropertyReport]:
    """Run every oracle check that applies to ``net`` and ``solutions``."""
    reports = []
    assumptions = oracle.PropertyReport("assumptions", trials=1)
    for v in validate(net):
        assumptions.failures.append({"trial": 0, "check": v.kind, "message": v.message})
    reports.append(assumptions)
    reports.append(oracle.check_nonexpansive(net, n_trials, seed))
    if solutions:
        sol_reports = [oracle.check_solutions(net, solutions, tol)]
        sol_reports += [oracle.check_equilibrium_bound(net, X, tol) for X in solutions]
        reports.append(oracle.merge_reports("solutions: is_solution + equilibrium_bound", sol_reports))
        reports.append(oracle.check_semimodule_closure(net, solutions, min(n_trials, 100), seed, tol))
    return reports


def cmd_verify(args) -> int:
    solutions: list[np.ndarray] = []
    if args.run:
        net, summary = load_run(Path(args.run))
        for t in summary["trials"]:
            X = state_from_json(json.loads((Path(args.run) / "states" / f"trial_{t['trial']:03d}.json").read_text()))
            if dyn.is_solution(net, X, args.tol):
                solutions.append(X)
        if args.instance:
            net = read_instance(Path(args.instance), args.strict)
    elif args.instance:
        net = read_instance(Path(args.instance), args.strict)
    else:
        raise UsageError("verify needs --instance or --run")
    for path in args.solutions or ():
        try:
            solutions.append(state_from_json(json.loads(Path(path).read_text())))
        except OSError as exc:
            raise UsageError(f"cannot read solution {path}: {exc}") from None
    reports = verify(net, solutions, args.trials, args.seed, args.tol)
    for r in reports:
        print(r.summary())
    if args.out:
        out = _outdir(args.out)
        (out / "verify.json").write_text(json.dumps([r.to_json() for r in reports], indent=2))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


# ------------------------------------------------------------------- parsing


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _parse_eps(value: str):
    if value == "auto":
        return "auto"
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--eps must be a number or 'auto', got {value!r}") from None


def _parse_workers(value: str):
    if value == "auto":
        return "auto"
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"--workers must be an integer or 'auto', got {value!r}") from None


def _generate_params(args) -> GenerateParams:
    return GenerateParams(
        n_agents=args.agents,
        edge_prob=args.p,
        n_alternatives=args.d,
        cost_range=tuple(args.cost_range),
        weight_range=tuple(args.weight_range),
        seed=args.seed,
    )


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--strict", action="store_true", help="reject instances violating the assumptions")
    p.add_argument("--workers", default="1", help="worker count or 'auto'")


def _add_instance_gen(p: argparse.ArgumentParser) -> None:
    p.add_argument("--agents", "-N", type=int, default=20)
    p.add_argument("--p", type=float, default=0.2, help="edge probability")
    p.add_argument("--d", type=int, default=10, help="number of alternatives")
    p.add_argument("--cost-range", type=float, nargs=2, default=[-1.0, 1.0], metavar=("LO", "HI"))
    p.add_argument("--weight-range", type=float, nargs=2, default=[0.0, 1.0], metavar=("LO", "HI"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxsync", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random Erdős–Rényi instance")
    _add_shared(p)
    _add_instance_gen(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run RRAggU trials and write traces")
    _add_shared(p)
    _add_instance_gen(p)
    p.add_argument("--instance", help="instance JSON (otherwise one is generated)")
    p.add_argument("--trials", type=int, default=20)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--steps", type=int, help="fixed-step mode: record sweeps t = 0..T")
    mode.add_argument("--max-iters", type=int, help="stopping mode budget (default 1000)")
    p.add_argument("--eps", default="auto", help="loss threshold or 'auto' (max edge weight)")
    p.add_argument("--value-range", type=float, nargs=2, default=[-1.0, 1.0], metavar=("LO", "HI"))
    p.add_argument("--plateau-window", type=int, default=5)
    p.add_argument("--keep-states", type=int, default=5, help="trailing states kept for divergence reports")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diverging", help="report entries drifting to -inf in a run")
    p.add_argument("--run", required=True, help="run output directory")
    p.add_argument("--trial", type=int)
    p.set_defaults(func=cmd_diverging)

    p = sub.add_parser("bench", help="time one Laplacian application over an (N, d) grid")
    _add_shared(p)
    p.add_argument("--agent-counts", type=int, nargs="+", default=[100, 200, 400, 800])
    p.add_argument("--d", type=int, nargs="+", default=[20])
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--repetitions", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the oracle property checks")
    _add_shared(p)
    p.add_argument("--instance")
    p.add_argument("--run", help="run directory; its solved final states are checked")
    p.add_argument("--solutions", nargs="*", help="state JSON files claimed to be solutions")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-6)
    # verify only writes a report when asked to
    p.set_defaults(func=cmd_verify, out=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InstanceError as exc:
        print(f"instance error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
