"""Command-line entry point: schedule | gen-synthetic | run | analyze | bootstrap | plot."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .bench import NormalizationBounds, aggregate, anytime_curve, default_fraction_grid, emit_plot
from .domain import FidelityChain, RunTrace
from .errors import (
    ConfigError,
    DegenerateScenarioError,
    OracleUnavailableError,
    PlanError,
    PromptbandError,
    RangeError,
    ValidationError,
)
from .methods import METHOD_KINDS, MethodConfig, run_method
from .oracle import SyntheticSpec, bootstrap_variance, generate_synthetic
from .scenario import Scenario, load_scenario, scenario_from_spec
from .scheduler import build_plan

__all__ = ["RunConfig", "parse_config", "serialize_config", "main"]

RESULTS_HEADER = ["method", "scenario", "seed", "fraction", "valid_norm", "test_norm"]
AGGREGATE_HEADER = ["method", "fraction", "metric", "mean", "se", "n"]
TRACE_HEADER = ["calls_used", "incumbent_prompt_id", "incumbent_error", "incumbent_fidelity"]


@dataclass(frozen=True)
class RunConfig:
    """A benchmark run: scenario source, methods, repetitions, knobs."""

    methods: tuple[str, ...]
    seed: int = 0
    reps: int = 1
    budget: int = 25
    init_design: int = 10
    rho: float = 0.1
    b_min: int = 10
    eta: float = 2.0
    min_fidelity_obs: int = 4
    out: str = "results"
    jobs: int = 1
    scenario: str | None = None
    synthetic: dict | None = None


_CONFIG_KEYS = {
    "methods",
    "seed",
    "reps",
    "budget",
    "init_design",
    "rho",
    "b_min",
    "eta",
    "min_fidelity_obs",
    "out",
    "jobs",
    "scenario",
    "synthetic",
}
_SYNTHETIC_KEYS = set(SyntheticSpec.__dataclass_fields__)


def parse_config(data: dict) -> RunConfig:
    """Validate a raw config mapping; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "methods" not in data or not data["methods"]:
        raise ConfigError("config must list at least one method")
    methods = tuple(str(m) for m in data["methods"])
    for m in methods:
        if m not in METHOD_KINDS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHOD_KINDS}")
    scenario = data.get("scenario")
    synthetic = data.get("synthetic")
    if (scenario is None) == (synthetic is None):
        raise ConfigError("config needs exactly one of 'scenario' (path) or 'synthetic' (spec)")
    if synthetic is not None:
        bad = set(synthetic) - _SYNTHETIC_KEYS
        if bad:
            raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
        synthetic = asdict(SyntheticSpec(**synthetic))  # canonical full form
    cfg = RunConfig(
        methods=methods,
        seed=int(data.get("seed", 0)),
        reps=int(data.get("reps", 1)),
        budget=int(data.get("budget", 25)),
        init_design=int(data.get("init_design", 10)),
        rho=float(data.get("rho", 0.1)),
        b_min=int(data.get("b_min", 10)),
        eta=float(data.get("eta", 2.0)),
        min_fidelity_obs=int(data.get("min_fidelity_obs", 4)),
        out=str(data.get("out", "results")),
        jobs=int(data.get("jobs", 1)),
        scenario=str(scenario) if scenario is not None else None,
        synthetic=synthetic,
    )
    if cfg.reps < 1:
        raise ConfigError("reps must be positive")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be positive")
    # Surface bad method knobs now, before any oracle work.
    MethodConfig(kind=methods[0], seed=cfg.seed, budget=cfg.budget, init_design=cfg.init_design,
                 rho=cfg.rho, b_min=cfg.b_min, eta=cfg.eta, min_fidelity_obs=cfg.min_fidelity_obs)
    return cfg


def serialize_config(cfg: RunConfig) -> dict:
    data = asdict(cfg)
    data["methods"] = list(cfg.methods)
    if data["scenario"] is None:
        del data["scenario"]
    if data["synthetic"] is None:
        del data["synthetic"]
    return data


def _rep_seed(base_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([base_seed, rep]).generate_state(1)[0])


def _chain_for(scenario: Scenario, rep_seed: int, b_min: int = 1) -> FidelityChain:
    seq = np.random.SeedSequence([scenario.chain_seed, rep_seed, 7])
    return FidelityChain.from_seed(seq, scenario.n_valid, b_min=b_min)


def _load_from_config(cfg: RunConfig) -> Scenario:
    if cfg.scenario is not None:
        return load_scenario(cfg.scenario)
    return scenario_from_spec(SyntheticSpec(**cfg.synthetic))


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_rows(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_trace(path: Path, trace: RunTrace) -> None:
    rows = [
        [str(ev.calls_used), str(ev.incumbent_prompt_id), _fmt(ev.incumbent_error), str(ev.incumbent_fidelity)]
        for ev in trace.events
    ]
    _write_rows(path, TRACE_HEADER, rows)


def _execute_run(cfg: RunConfig) -> int:
    scenario = _load_from_config(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)

    fractions = default_fraction_grid(cfg.budget)
    bounds = NormalizationBounds.from_oracle(scenario.oracle)
    result_rows: list[dict] = []
    csv_rows: list[list[str]] = []

    tasks = []
    for method in cfg.methods:
        for rep in range(cfg.reps):
            seed = _rep_seed(cfg.seed, rep)
            mcfg = MethodConfig(
                kind=method,
                seed=seed,
                budget=cfg.budget,
                init_design=cfg.init_design,
                rho=cfg.rho,
                b_min=cfg.b_min,
                eta=cfg.eta,
                min_fidelity_obs=cfg.min_fidelity_obs,
            )
            tasks.append((mcfg, _chain_for(scenario, seed)))

    def flush() -> None:
        _write_rows(out / "results.csv", RESULTS_HEADER, csv_rows)

    try:
        if cfg.jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                traces = list(
                    pool.map(
                        _run_task,
                        [(m, scenario.space, scenario.oracle, c, scenario.name) for m, c in tasks],
                    )
                )
        else:
            traces = [
                run_method(m, scenario.space, scenario.oracle, c, scenario.name) for m, c in tasks
            ]
    except OracleUnavailableError:
        flush()
        raise

    for (mcfg, _), trace in zip(tasks, traces):
        _write_trace(traces_dir / f"{mcfg.kind}_seed{mcfg.seed}.csv", trace)
        valid_curve, test_curve = anytime_curve(trace, scenario.oracle, bounds, fractions)
        for f, v, t in zip(fractions, valid_curve, test_curve):
            result_rows.append(
                {"method": mcfg.kind, "fraction": float(f), "valid_norm": v, "test_norm": t}
            )
            csv_rows.append(
                [mcfg.kind, scenario.name, str(mcfg.seed), repr(float(f)), _fmt(v), _fmt(t)]
            )

    flush()
    agg = aggregate(result_rows)
    _write_aggregate(out / "aggregate.csv", agg)
    emit_plot(agg, out / "valid.svg", metric="valid", log_x=True)
    emit_plot(agg, out / "test.svg", metric="test", log_x=True)
    return 0


def _run_task(args):
    mcfg, space, oracle, chain, name = args
    return run_method(mcfg, space, oracle, chain, name)


def _write_aggregate(path: Path, agg: list[dict]) -> None:
    rows = [
        [r["method"], repr(float(r["fraction"])), r["metric"], repr(r["mean"]), repr(r["se"]), str(r["n"])]
        for r in agg
    ]
    _write_rows(path, AGGREGATE_HEADER, rows)


def _read_results(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                {
                    "method": row["method"],
                    "fraction": float(row["fraction"]),
                    "valid_norm": float(row["valid_norm"]) if row["valid_norm"] else None,
                    "test_norm": float(row["test_norm"]) if row["test_norm"] else None,
                }
            )
    return rows


def _read_aggregate(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                {
                    "method": row["method"],
                    "fraction": float(row["fraction"]),
                    "metric": row["metric"],
                    "mean": float(row["mean"]),
                    "se": float(row["se"]),
                    "n": int(row["n"]),
                }
            )
    return rows


def cmd_schedule(args) -> int:
    plan = build_plan(args.n_valid, args.b_min, args.eta)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["bracket", "stage", "instances", "prompts"])
    for row in plan.rows():
        writer.writerow(row)
    return 0


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        n_instructions=args.n_instructions,
        n_exemplars=args.n_exemplars,
        n_valid=args.n_valid,
        n_test=args.n_test,
        embedding_dim=args.embedding_dim,
        seed=args.seed if args.seed is not None else 0,
        w1=args.w1,
        w2=args.w2,
        gamma=args.gamma,
        instruction_noise=args.instruction_noise,
        exemplar_noise=args.exemplar_noise,
        order_scale=args.order_scale,
        order_jitter=args.order_jitter,
        name=args.name,
    )
    out = args.out or "scenario"
    generate_synthetic(spec, out)
    print(f"scenario written to {out}", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run requires --config")
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(json.loads(path.read_text(encoding="utf-8")))
    overrides = {}
    if args.out:
        overrides["out"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        data = serialize_config(cfg)
        data.update(overrides)
        cfg = parse_config(data)
    return _execute_run(cfg)


def cmd_analyze(args) -> int:
    rows = _read_results(Path(args.results))
    agg = aggregate(rows)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write_aggregate(out / "aggregate.csv", agg)
    emit_plot(agg, out / "valid.svg", metric="valid", log_x=True)
    emit_plot(agg, out / "test.svg", metric="test", log_x=True)
    return 0


def cmd_bootstrap(args) -> int:
    scenario = load_scenario(args.scenario)
    if not 0 <= args.prompt_id < scenario.space.n_prompts:
        raise RangeError(f"prompt_id {args.prompt_id} outside [0, {scenario.space.n_prompts})")
    row = scenario.oracle.valid_matrix[args.prompt_id]
    p_hat = float(row.mean())
    seed = args.seed if args.seed is not None else 0
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["k", "variance", "binomial_reference"])
    for k in args.k:
        var = bootstrap_variance(row, k, args.replicates, seed)
        writer.writerow([k, repr(var), repr(p_hat * (1.0 - p_hat) / k)])
    return 0


def cmd_plot(args) -> int:
    agg = _read_aggregate(Path(args.aggregate))
    out = args.out or "plot.svg"
    emit_plot(agg, out, metric=args.metric, log_x=args.log_x)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base random seed")
    common.add_argument("--out", type=str, default=None, help="output directory or file")
    common.add_argument("--jobs", type=int, default=None, help="parallel run limit")
    common.add_argument("--config", type=str, default=None, help="JSON config path")

    parser = argparse.ArgumentParser(prog="promptband", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", parents=[common], help="print a bracket/stage table as CSV")
    p.add_argument("--n-valid", type=int, required=True)
    p.add_argument("--b-min", type=int, default=10)
    p.add_argument("--eta", type=float, default=2.0)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic scenario")
    p.add_argument("--n-instructions", type=int, default=5)
    p.add_argument("--n-exemplars", type=int, default=50)
    p.add_argument("--n-valid", type=int, default=200)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--embedding-dim", type=int, default=16)
    p.add_argument("--w1", type=float, default=-0.55)
    p.add_argument("--w2", type=float, default=0.28)
    p.add_argument("--gamma", type=float, default=1.25)
    p.add_argument("--instruction-noise", type=float, default=0.5)
    p.add_argument("--exemplar-noise", type=float, default=0.5)
    p.add_argument("--order-scale", type=float, default=0.08)
    p.add_argument("--order-jitter", type=float, default=0.001)
    p.add_argument("--name", type=str, default="synthetic")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("run", parents=[common], help="run methods from a JSON config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", parents=[common], help="aggregate a results.csv")
    p.add_argument("--results", type=str, required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bootstrap", parents=[common], help="bootstrap variance of subset means")
    p.add_argument("--scenario", type=str, required=True)
    p.add_argument("--prompt-id", type=int, required=True)
    p.add_argument("--k", type=_int_list, required=True, help="comma-separated subset sizes")
    p.add_argument("--replicates", type=int, default=1000)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("plot", parents=[common], help="render an aggregate.csv as SVG")
    p.add_argument("--aggregate", type=str, required=True)
    p.add_argument("--metric", type=str, choices=("valid", "test"), default="valid")
    p.add_argument("--log-x", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OracleUnavailableError as exc:
        print(f"error: oracle unavailable: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, PlanError, RangeError, ValidationError, DegenerateScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PromptbandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
