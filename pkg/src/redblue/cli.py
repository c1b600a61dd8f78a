"""Command-line front end: config handling, the run / probe / oracle
subcommands, and deterministic CSV and report emission.

Exit codes: 0 success, 2 bad config or arguments, 3 numeric divergence
during a run, 4 one or more probes failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .agent import DivergenceError, Hyperparameters
from .env import (
    ContinualTask,
    Gaussian,
    Mixture,
    PointMass,
    Schedule,
    World,
    best_state_cvar,
    build_s_rpbp,
    build_tau_rpbp,
    dist_cvar,
    phase_from_config,
    phase_to_config,
    task_from_config,
)
from .risk import check_coherence, empirical_cvar
from .runner import (
    MetricSeries,
    RollingSeries,
    aggregate_ci,
    derive_run_seeds,
    ordering_stability_probe,
    plasticity_probe,
    rolling_cvar,
    rolling_occupancy,
    run_stream,
    stay_policy,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "build_task",
    "cmd_oracle",
    "cmd_probe",
    "cmd_run",
    "config_from_mapping",
    "config_to_mapping",
    "load_config",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_PROBE = 4

PLASTICITY_EPS_GAP = 0.02
ORDERING_MARGIN = 0.05

PROBE_NAMES = ("plasticity", "ordering", "coherence")

# steps and runs default per task so a bare `redblue run --task NAME`
# reproduces the reference experiment for that task
_TASK_DEFAULTS = {
    "tau_rpbp": {"steps": 100000, "runs": 20},
    "s_rpbp": {"steps": 120000, "runs": 10},
    "custom": {"steps": 100000, "runs": 10},
}


class ConfigError(ValueError):
    """Bad config file or flags; maps to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "tau_rpbp"
    alpha: float = 2e-2
    eta_cvar: float = 0.1
    eta_var: float = 0.1
    epsilon: float = 0.1
    tau: float | None = None  # metric tail level; defaults to the last phase's tau
    steps: int | None = None
    runs: int | None = None
    master_seed: int = 12345
    window: int = 1000
    out_dir: str = "out"
    parallel: int = 1
    phases: tuple | None = None  # custom task only
    breakpoints: tuple | None = None


def _require_int(merged: dict, key: str, minimum: int) -> int:
    v = merged[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    if v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v}")
    return v


def _require_float(merged: dict, key: str) -> float:
    v = merged[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    return float(v)


def config_from_mapping(data: Mapping) -> ExperimentConfig:
    """Build a fully resolved config from a flat mapping, applying per-task
    defaults for steps and runs. Unknown keys are an error, never ignored."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"config must be a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    merged = dict(data)
    task = merged.setdefault("task", "tau_rpbp")
    if task not in _TASK_DEFAULTS:
        raise ConfigError(f"unknown task {task!r}; choose from {sorted(_TASK_DEFAULTS)}")
    for key, default in _TASK_DEFAULTS[task].items():
        merged.setdefault(key, default)

    for key in ("alpha", "eta_cvar", "eta_var", "epsilon"):
        merged.setdefault(key, getattr(ExperimentConfig, key))
        merged[key] = _require_float(merged, key)
    try:
        Hyperparameters(
            alpha=merged["alpha"], eta_cvar=merged["eta_cvar"],
            eta_var=merged["eta_var"], epsilon=merged["epsilon"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    tau = merged.get("tau")
    if tau is not None:
        tau = _require_float(merged, "tau")
        if not 0.0 < tau < 1.0:
            raise ConfigError(f"tau must lie in the open interval (0, 1), got {tau}")

    merged.setdefault("master_seed", ExperimentConfig.master_seed)
    merged.setdefault("window", ExperimentConfig.window)
    merged.setdefault("parallel", ExperimentConfig.parallel)
    steps = _require_int(merged, "steps", 1)
    runs = _require_int(merged, "runs", 1)
    master_seed = _require_int(merged, "master_seed", 0)
    window = _require_int(merged, "window", 1)
    parallel = _require_int(merged, "parallel", 1)
    if window > steps:
        raise ConfigError(f"window must be <= steps, got {window} > {steps}")

    out_dir = merged.setdefault("out_dir", ExperimentConfig.out_dir)
    if not isinstance(out_dir, str):
        raise ConfigError(f"out_dir must be a string, got {out_dir!r}")

    phases = merged.get("phases")
    breakpoints = merged.get("breakpoints")
    if task == "custom":
        if phases is None or breakpoints is None:
            raise ConfigError("custom task needs both 'phases' and 'breakpoints'")
        try:
            # canonicalize through the task builder so bad phases fail here
            canonical = [phase_to_config(phase_from_config(p)) for p in phases]
            task_from_config({"phases": canonical, "breakpoints": list(breakpoints)})
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"bad custom task: {exc}") from exc
        phases = tuple(canonical)
        breakpoints = tuple(int(b) for b in breakpoints)
    elif phases is not None or breakpoints is not None:
        raise ConfigError("'phases' and 'breakpoints' are only valid with task = custom")

    return ExperimentConfig(
        task=task,
        alpha=merged["alpha"],
        eta_cvar=merged["eta_cvar"],
        eta_var=merged["eta_var"],
        epsilon=merged["epsilon"],
        tau=tau,
        steps=steps,
        runs=runs,
        master_seed=master_seed,
        window=window,
        out_dir=out_dir,
        parallel=parallel,
        phases=phases,
        breakpoints=breakpoints,
    )


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    """Flat JSON-friendly dict; config_from_mapping(config_to_mapping(c)) == c."""
    out = {}
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if f.name == "phases":
            v = [dict(p) for p in v]
        elif f.name == "breakpoints":
            v = list(v)
        out[f.name] = v
    return out


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_mapping(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config_to_mapping(cfg), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def build_task(cfg: ExperimentConfig) -> ContinualTask:
    if cfg.task == "tau_rpbp":
        return build_tau_rpbp()
    if cfg.task == "s_rpbp":
        return build_s_rpbp()
    return task_from_config(
        {"phases": list(cfg.phases), "breakpoints": list(cfg.breakpoints)}
    )


def _hyperparameters(cfg: ExperimentConfig) -> Hyperparameters:
    return Hyperparameters(
        alpha=cfg.alpha, eta_cvar=cfg.eta_cvar, eta_var=cfg.eta_var, epsilon=cfg.epsilon
    )


def _metric_tau(cfg: ExperimentConfig, task: ContinualTask) -> float:
    if cfg.tau is not None:
        return cfg.tau
    return task.phases[-1].tau


def _run_one(args) -> object:
    task, h, steps, seed = args
    return run_stream(task, h, steps, seed)


def _execute_runs(task, h, steps, seeds, parallel):
    jobs = [(task, h, steps, seed) for seed in seeds]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as pool:
            return list(pool.map(_run_one, jobs))  # map keeps run order
    return [_run_one(job) for job in jobs]


def _aggregate(series: Sequence[RollingSeries]) -> MetricSeries:
    if len(series) == 1:
        only = series[0]
        v = only.values
        return MetricSeries(
            times=only.times.copy(), mean=v.copy(), ci_low=v.copy(), ci_high=v.copy(),
            runs=1, window=only.window, label=only.label,
        )
    return aggregate_ci(series)


def _write_metric_csv(path, series: MetricSeries, oracle_refs=None) -> None:
    """Fixed schema: step,mean,ci_low,ci_high plus one constant oracle
    column per phase when refs are given. Cells use 6 decimal places, '.'
    separators, and '\\n' line endings so reruns are byte-identical."""
    header = "step,mean,ci_low,ci_high"
    suffix = ""
    if oracle_refs is not None:
        header += "".join(f",oracle_phase{i}" for i in range(len(oracle_refs)))
        suffix = "".join(f",{v:.6f}" for v in oracle_refs)
    times = series.times
    mean = series.mean
    lo = series.ci_low
    hi = series.ci_high
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write(header + "\n")
        for i in range(times.size):
            f.write(f"{int(times[i])},{mean[i]:.6f},{lo[i]:.6f},{hi[i]:.6f}{suffix}\n")


def cmd_run(cfg: ExperimentConfig) -> int:
    """Execute the configured runs and write occupancy.csv, cvar.csv, and
    the matching PNG figures into out_dir."""
    task = build_task(cfg)
    h = _hyperparameters(cfg)
    tau_metric = _metric_tau(cfg, task)
    seeds = derive_run_seeds(cfg.master_seed, cfg.runs)
    records = _execute_runs(task, h, cfg.steps, seeds, cfg.parallel)
    occ = _aggregate([rolling_occupancy(r, World.BLUE, cfg.window) for r in records])
    cvar = _aggregate([rolling_cvar(r, tau_metric, cfg.window) for r in records])
    # reference level per phase: the better world's oracle CVaR at the metric tau
    refs = [best_state_cvar(p, tau_metric)[1] for p in task.phases]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_metric_csv(out / "occupancy.csv", occ)
    _write_metric_csv(out / "cvar.csv", cvar, oracle_refs=refs)
    from . import figures  # deferred: keeps matplotlib off the oracle/probe paths

    figures.render_occupancy(occ, task.schedule.breakpoints, out / "occupancy.png")
    figures.render_cvar(cvar, task.schedule.breakpoints, refs, out / "cvar.png")
    return EXIT_OK


def _pf(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def cmd_probe(cfg: ExperimentConfig, selected: Sequence[str] = PROBE_NAMES) -> int:
    """Run the selected probes at the config's scale and write
    probe_report.txt; exit 0 only if every probe passes."""
    task = build_task(cfg)
    tau_metric = _metric_tau(cfg, task)
    horizon = cfg.steps
    seed_pool = iter(derive_run_seeds(cfg.master_seed, 8 * len(task.phases) + 8))
    lines = [f"task: {cfg.task}  steps: {horizon}  master_seed: {cfg.master_seed}", ""]
    all_pass = True

    if "plasticity" in selected:
        window = max(1, horizon // 10)
        for k, phase in enumerate(task.phases):
            single = ContinualTask(phases=(phase,), schedule=Schedule(()))
            for world in (World.RED, World.BLUE):
                rep = plasticity_probe(
                    single,
                    stay_policy(world),
                    variants=((World.RED, next(seed_pool)), (World.BLUE, next(seed_pool))),
                    horizon=horizon,
                    window=window,
                    eps_gap=PLASTICITY_EPS_GAP,
                )
                all_pass &= rep.passed
                lines.append(
                    f"[plasticity] phase {k} stay-{world.name.lower()}: {_pf(rep.passed)} "
                    f"(max_gap {rep.max_gap:.6f}, eps_gap {PLASTICITY_EPS_GAP:.6f})"
                )
        lines.append("")

    if "ordering" in selected:
        burn_in = max(cfg.window, horizon // 5)
        for k, phase in enumerate(task.phases):
            rep = ordering_stability_probe(
                phase,
                stay_policy(World.RED),
                stay_policy(World.BLUE),
                tau=phase.tau,
                burn_in=burn_in,
                horizon=horizon,
                margin=ORDERING_MARGIN,
                window=cfg.window,
                seeds=(next(seed_pool), next(seed_pool)),
                labels=("red", "blue"),
            )
            all_pass &= rep.passed
            detail = (
                f"dominant {rep.dominant}, sign_changes {rep.sign_changes}, "
                f"sub_margin {rep.sub_margin_fraction:.4f}"
            )
            lines.append(f"[ordering] phase {k} red-vs-blue: {_pf(rep.passed)} ({detail})")
        lines.append("")

    if "coherence" in selected:
        report = check_coherence(
            lambda v: empirical_cvar(v, tau_metric),
            trials=1000,
            seed=cfg.master_seed,
        )
        all_pass &= report.passed
        for chk in report.checks:
            lines.append(
                f"[coherence] {chk.name}: {_pf(chk.violations == 0)} "
                f"({chk.violations} violations in {chk.trials} trials, worst {chk.worst:.3e})"
            )
        lines.append("")

    lines.append(f"overall: {_pf(all_pass)}")
    text = "\n".join(lines) + "\n"
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "probe_report.txt").write_text(text, encoding="ascii")
    print(text, end="")
    return EXIT_OK if all_pass else EXIT_PROBE


def cmd_oracle(kind: str, params: Sequence[float], weights, tau) -> int:
    """Print the oracle CVaR of the given distribution to 6 decimal places."""
    if kind == "pointmass":
        if len(params) != 1:
            raise ConfigError(f"pointmass takes 1 parameter, got {len(params)}")
        # the value is every quantile at once, so tau is optional here
        dist = PointMass(params[0])
        tau = 0.5 if tau is None else tau
    elif kind == "gaussian":
        if len(params) != 2:
            raise ConfigError(f"gaussian takes 2 parameters (mu sigma), got {len(params)}")
        dist = Gaussian(params[0], params[1])
    elif kind == "mixture":
        if len(params) < 2 or len(params) % 2 != 0:
            raise ConfigError("mixture takes mu/sigma pairs, e.g. MU1 SIGMA1 MU2 SIGMA2")
        comps = tuple(Gaussian(params[i], params[i + 1]) for i in range(0, len(params), 2))
        if weights is None:
            raise ConfigError("mixture needs --weights")
        dist = Mixture(comps, tuple(weights))
    else:
        raise ConfigError(f"unknown distribution kind {kind!r}")
    if tau is None:
        raise ConfigError(f"{kind} needs --tau")
    print(f"{dist_cvar(dist, tau):.6f}")
    return EXIT_OK


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--task", choices=sorted(_TASK_DEFAULTS), help="built-in or custom task")
    p.add_argument("--runs", type=int, metavar="N")
    p.add_argument("--steps", type=int, metavar="N")
    p.add_argument("--seed", type=int, metavar="N", help="master seed for run derivation")
    p.add_argument("--window", type=int, metavar="N", help="rolling window length")
    p.add_argument("--parallel", type=int, metavar="N", help="max concurrent runs")
    p.add_argument("--out", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redblue",
        description="Risk-aware continual Q-learning on the red/blue pill worlds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute seeded runs; write CSVs and figures")
    _add_common_flags(p_run)

    p_probe = sub.add_parser("probe", help="run empirical probes; write probe_report.txt")
    _add_common_flags(p_probe)
    p_probe.add_argument(
        "--probe", action="append", choices=PROBE_NAMES, metavar="NAME",
        help="probe to run (repeatable); default: all of " + ", ".join(PROBE_NAMES),
    )

    p_oracle = sub.add_parser("oracle", help="print a distribution's oracle CVaR")
    p_oracle.add_argument("kind", choices=["pointmass", "gaussian", "mixture"])
    p_oracle.add_argument("params", nargs="+", type=float)
    p_oracle.add_argument("--weights", nargs="+", type=float)
    p_oracle.add_argument("--tau", type=float)
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {
        "task": args.task,
        "runs": args.runs,
        "steps": args.steps,
        "master_seed": args.seed,
        "window": args.window,
        "parallel": args.parallel,
        "out_dir": args.out,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return config_from_mapping(data)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_config_from_args(args))
        if args.command == "probe":
            selected = tuple(dict.fromkeys(args.probe)) if args.probe else PROBE_NAMES
            return cmd_probe(_config_from_args(args), selected)
        return cmd_oracle(args.kind, args.params, args.weights, args.tau)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # input validation from the library surfaces as a config problem
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
