"""Command-line entry point: configuration, orchestration and output files."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, SkelstopError
from .regression import BoundPolicy
from .skeleton import SkeletonConfig, num_periods, sample_batch
from .solver import (LsConfig, error_bound_report, ls_solve, markov_compressor, oracle_dp,
                     plan_resolution, variational_check)
from .structures import EulerStructure, build_structure
from .validation import exit_time_battery, kernel_battery

OUTPUT_ENV = "SKELSTOP_OUTPUT_DIR"
DEFAULT_OUTPUT = "skelstop-runs"
SUBCOMMANDS = ("solve", "oracle", "converge", "plan", "validate", "bench")
CSV_COLUMNS = ["seed", "epsilon", "d", "T", "periods", "N", "V_hat", "U0_hat", "lower_bound",
               "lower_bound_se", "oracle_value", "max_residual", "wall_ms"]
# fields that change how a run executes or where it is written, not what it computes
EXECUTION_FIELDS = ("workers", "output", "format")


def _default_structure() -> dict:
    return {"kind": "euler",
            "coefficients": {"name": "random_walk", "x0": 1.0},
            "payoff": {"name": "bounded_put", "strike": 1.0}}


@dataclass
class RunConfig:
    subcommand: str = "solve"
    epsilon: float | None = None
    k: float | None = None
    dim: int = 1
    horizon: float = 1.0
    structure: dict = field(default_factory=_default_structure)
    paths: int = 10_000
    fresh_paths: int = 0
    degree: int | None = None
    bound_policy: str = "payoff"
    bound_value: float | None = None
    payoff_bound: float | None = None
    truncation: float | None = None
    features: str = "history"
    itm_only: bool = False
    compare_oracle: bool = False
    nodes: int = 32
    max_steps: int = 6
    e1: float = 0.45
    beta: float = 0.2
    phi: str = "dyadic"
    rounding: str = "printed"
    paths_list: list = field(default_factory=lambda: [1000, 10_000])
    epsilons: list = field(default_factory=list)
    replications: int = 1
    draws: int = 100_000
    histories: int = 5
    seed: int = 0
    workers: int = 1
    output: str | None = None
    format: str = "all"

    @property
    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        if self.k is not None:
            return 2.0 ** (-float(self.k))
        return 0.5

    def skeleton(self, epsilon: float | None = None, seed: int | None = None) -> SkeletonConfig:
        return SkeletonConfig(self.resolved_epsilon if epsilon is None else epsilon, self.dim,
                              self.horizon, self.seed if seed is None else seed)


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
CHOICES = {
    "subcommand": SUBCOMMANDS,
    "bound_policy": ("constant", "payoff", "twice_sup"),
    "features": ("history", "markov"),
    "phi": ("dyadic",),
    "rounding": ("printed", "exact"),
    "format": ("table", "csv", "json", "all"),
}


def _coerce(name: str, value: Any) -> Any:
    """Check and convert a raw value for field ``name``."""
    kind = FIELD_TYPES[name]
    if value is None:
        if "None" in kind:
            return None
        raise ConfigError(f"{name}: a value is required")
    try:
        if kind.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind.startswith("float"):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if kind == "dict":
            if not isinstance(value, dict):
                raise ValueError(value)
            return value
        if kind == "list":
            if not isinstance(value, (list, tuple)):
                raise ValueError(value)
            conv = int if name == "paths_list" else float
            return [conv(v) for v in value]
        if kind.startswith("str"):
            if not isinstance(value, str):
                raise ValueError(value)
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {kind}") from None
    return value


def validate_config(cfg: RunConfig) -> RunConfig:
    for name, allowed in CHOICES.items():
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name}: must be one of {', '.join(allowed)}")
    if cfg.epsilon is not None and cfg.k is not None:
        raise ConfigError("epsilon: give either epsilon or k, not both")
    if cfg.epsilon is not None and not cfg.epsilon > 0:
        raise ConfigError("epsilon: must be positive")
    checks = [
        ("dim", cfg.dim >= 1), ("horizon", cfg.horizon > 0), ("paths", cfg.paths >= 2),
        ("fresh_paths", cfg.fresh_paths >= 0), ("degree", cfg.degree is None or cfg.degree >= 0),
        ("payoff_bound", cfg.payoff_bound is None or cfg.payoff_bound > 0),
        ("truncation", cfg.truncation is None or cfg.truncation > 0),
        ("nodes", cfg.nodes >= 2), ("max_steps", cfg.max_steps >= 1),
        ("e1", 0 < cfg.e1 < 1), ("beta", 0 < cfg.beta <= 1),
        ("paths_list", len(cfg.paths_list) > 0 and all(n >= 2 for n in cfg.paths_list)),
        ("epsilons", all(e > 0 for e in cfg.epsilons)),
        ("replications", cfg.replications >= 1), ("draws", cfg.draws >= 10),
        ("histories", cfg.histories >= 1), ("seed", 0 <= cfg.seed < 2**64),
        ("workers", cfg.workers >= 1),
    ]
    for name, ok in checks:
        if not ok:
            raise ConfigError(f"{name}: invalid value {getattr(cfg, name)!r}")
    if cfg.bound_policy == "constant" and not (cfg.bound_value and cfg.bound_value > 0):
        raise ConfigError("bound_value: the constant policy needs a positive value")
    build_structure(cfg.structure, 1)
    return cfg


def _key_lines(text: str) -> dict:
    """Line number of every top-level key in a YAML mapping."""
    node = yaml.compose(text, Loader=yaml.SafeLoader)
    if node is None or not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def load_config_text(text: str, source: str = "<config>") -> dict:
    """Parse YAML into raw field values, rejecting unknown keys with their line."""
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(f"{where}: parse error: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: the top level must be a mapping")
    for key in data:
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lines.get(key, '?')}: unknown key '{key}'")
    out = {}
    for key, value in data.items():
        try:
            out[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lines.get(key, '?')}: {exc}") from None
    return out


def config_from_values(values: dict) -> RunConfig:
    return validate_config(RunConfig(**values))


def parse_config_text(text: str) -> RunConfig:
    return config_from_values(load_config_text(text))


def emit_config(cfg: RunConfig) -> str:
    """YAML text listing every field, defaults included."""
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False, default_flow_style=None)


def config_digest(cfg: RunConfig) -> str:
    data = {k: v for k, v in dataclasses.asdict(cfg).items() if k not in EXECUTION_FIELDS}
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _inline_mapping(text: str) -> dict:
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise argparse.ArgumentTypeError(f"not a YAML mapping: {exc}") from None
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("structure must be a mapping")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skelstop", description=__doc__)
    parser.add_argument("--version", action="version", version=f"skelstop {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    S = argparse.SUPPRESS
    for name in SUBCOMMANDS:
        p = subs.add_parser(name, argument_default=S)
        p.add_argument("--config", help="YAML file; flags override its values")
        p.add_argument("--force", action="store_true", default=False,
                       help="overwrite existing output files")
        p.add_argument("--epsilon", type=float, help="level size")
        p.add_argument("--k", type=float, help="resolution label, epsilon = 2**-k")
        p.add_argument("--dim", type=int)
        p.add_argument("--horizon", type=float)
        p.add_argument("--structure", type=_inline_mapping, help="YAML mapping, e.g. '{kind: constant, value: 1}'")
        p.add_argument("--paths", type=int, help="training paths N")
        p.add_argument("--fresh-paths", type=int, dest="fresh_paths")
        p.add_argument("--degree", type=int, help="polynomial degree; default follows the schedule")
        p.add_argument("--bound-policy", dest="bound_policy", choices=CHOICES["bound_policy"])
        p.add_argument("--bound-value", type=float, dest="bound_value")
        p.add_argument("--payoff-bound", type=float, dest="payoff_bound")
        p.add_argument("--truncation", type=float)
        p.add_argument("--features", choices=CHOICES["features"])
        p.add_argument("--itm-only", dest="itm_only", action=argparse.BooleanOptionalAction,
                       help="regress and exercise only where the payoff is positive")
        p.add_argument("--compare-oracle", dest="compare_oracle", action=argparse.BooleanOptionalAction)
        p.add_argument("--nodes", type=int)
        p.add_argument("--max-steps", type=int, dest="max_steps")
        p.add_argument("--e1", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--phi", choices=CHOICES["phi"])
        p.add_argument("--rounding", choices=CHOICES["rounding"])
        p.add_argument("--paths-list", type=int, nargs="+", dest="paths_list")
        p.add_argument("--epsilons", type=float, nargs="+")
        p.add_argument("--replications", type=int)
        p.add_argument("--draws", type=int)
        p.add_argument("--histories", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        p.add_argument("--format", choices=CHOICES["format"])
    return parser


def parse_config(argv=None) -> tuple[RunConfig, bool]:
    """Config from an optional file plus flags; returns ``(config, force)``."""
    args = vars(build_parser().parse_args(argv))
    force = args.pop("force", False)
    path = args.pop("config", None)
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        values.update(load_config_text(text, path))
    for key, value in args.items():
        values[key] = _coerce(key, value)
    return config_from_values(values), force


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _structure(cfg: RunConfig, periods: int):
    return build_structure(cfg.structure, periods)


def _ls_config(cfg: RunConfig, sk: SkeletonConfig, structure, n_paths: int) -> LsConfig:
    compressor = None
    if cfg.features == "markov":
        if not isinstance(structure, EulerStructure):
            raise ConfigError("features: markov features need an euler structure")
        compressor = markov_compressor(structure.coeffs.x0, cfg.horizon)
    return LsConfig(sk, structure, n_paths, degree=cfg.degree,
                    bound_policy=BoundPolicy(cfg.bound_policy, cfg.bound_value),
                    payoff_bound=cfg.payoff_bound, fresh_paths=cfg.fresh_paths,
                    truncation=cfg.truncation, compressor=compressor, workers=cfg.workers,
                    itm_only=cfg.itm_only)


def _row(sk: SkeletonConfig, n=None, ls=None, oracle=None, residual=None, wall_ms=None) -> dict:
    return {
        "seed": sk.seed, "epsilon": sk.epsilon, "d": sk.dim, "T": sk.horizon,
        "periods": num_periods(sk), "N": n,
        "V_hat": None if ls is None else ls.value,
        "U0_hat": None if ls is None else ls.continuation0,
        "lower_bound": None if ls is None else ls.lower_bound,
        "lower_bound_se": None if ls is None else ls.lower_bound_se,
        "oracle_value": None if oracle is None else oracle.value,
        "max_residual": residual, "wall_ms": wall_ms,
    }


def _fit_summaries(ls) -> list:
    return [dataclasses.asdict(s) for s in ls.steps]


def _run_oracle(cfg: RunConfig, sk: SkeletonConfig, structure):
    t0 = time.perf_counter()
    oracle = oracle_dp(structure, sk, cfg.nodes, max_steps=cfg.max_steps)
    return oracle, variational_check(oracle), 1e3 * (time.perf_counter() - t0)


def run_solve(cfg: RunConfig) -> dict:
    sk = cfg.skeleton()
    structure = _structure(cfg, num_periods(sk))
    t0 = time.perf_counter()
    ls = ls_solve(_ls_config(cfg, sk, structure, cfg.paths))
    wall = 1e3 * (time.perf_counter() - t0)
    oracle = residual = None
    if cfg.compare_oracle:
        oracle, residual, _ = _run_oracle(cfg, sk, structure)
    rows = [_row(sk, cfg.paths, ls, oracle, residual, wall)]
    results = {"V_hat": ls.value, "U0_hat": ls.continuation0, "Z0": ls.payoff0,
               "lower_bound": ls.lower_bound, "lower_bound_se": ls.lower_bound_se,
               "oracle_value": None if oracle is None else oracle.value,
               "max_residual": residual}
    steps = [s for s in ls.steps if s.step > 0]
    if steps:
        payoff_bound = ls.metadata["payoff_bound"]
        reports = []
        for s in steps:
            rep = error_bound_report(cfg.paths, num_periods(sk), s.step, s.bound, payoff_bound,
                                     vc=float(s.basis_size + 1))
            reports.append({"step": s.step, "c_j": rep.c_j, "C_BL": rep.c_bl,
                            "log_C_jk": rep.log_c_jk, "stochastic_term": rep.stochastic_terms[0]})
        results["bound_report"] = reports
    return {"rows": rows, "results": results, "fits": _fit_summaries(ls),
            "timings_ms": ls.metadata["timings_ms"]}


def run_oracle(cfg: RunConfig) -> dict:
    sk = cfg.skeleton()
    structure = _structure(cfg, num_periods(sk))
    oracle, residual, wall = _run_oracle(cfg, sk, structure)
    results = {"oracle_value": oracle.value, "U0": oracle.continuation0, "Z0": oracle.payoff0,
               "max_residual": residual, "terminal_nodes": oracle.terminal_nodes,
               "refined_rows": oracle.refined_rows}
    row = _row(sk, None, None, oracle, residual, wall)
    row["U0_hat"] = oracle.continuation0
    return {"rows": [row], "results": results, "timings_ms": {"total": wall}}


def run_converge(cfg: RunConfig) -> dict:
    rows = []
    summary = []
    for eps in (cfg.epsilons or [cfg.resolved_epsilon]):
        sk0 = cfg.skeleton(eps)
        structure = _structure(cfg, num_periods(sk0))
        oracle, residual, _ = _run_oracle(cfg, sk0, structure)
        for n in cfg.paths_list:
            errors = []
            for rep in range(cfg.replications):
                sk = cfg.skeleton(eps, cfg.seed + rep)
                t0 = time.perf_counter()
                ls = ls_solve(_ls_config(cfg, sk, structure, n))
                wall = 1e3 * (time.perf_counter() - t0)
                rows.append(_row(sk, n, ls, oracle, residual, wall))
                errors.append(abs(ls.value - oracle.value))
            summary.append({"epsilon": eps, "N": n, "oracle_value": oracle.value,
                            "mean_abs_error": float(np.mean(errors)),
                            "replications": cfg.replications})
    return {"rows": rows, "results": {"convergence": summary}}


def run_plan(cfg: RunConfig) -> dict:
    plan = plan_resolution(cfg.e1, cfg.beta, horizon=cfg.horizon, dim=cfg.dim,
                           rounding=cfg.rounding)
    results = {"k_star": plan.resolution, "epsilon": plan.epsilon, "periods": plan.periods,
               "level": plan.tolerance_level}
    row = {c: None for c in CSV_COLUMNS}
    row.update(seed=cfg.seed, epsilon=plan.epsilon, d=cfg.dim, T=cfg.horizon, periods=plan.periods)
    return {"rows": [row], "results": results}


def run_validate(cfg: RunConfig) -> dict:
    batteries = [exit_time_battery(cfg.resolved_epsilon, cfg.draws, cfg.seed),
                 kernel_battery(cfg.dim, cfg.histories, cfg.draws, cfg.resolved_epsilon, cfg.seed)]
    checks = [{"battery": b.name, **dataclasses.asdict(c)} for b in batteries for c in b.checks]
    return {"rows": [], "results": {"passed": all(b.passed for b in batteries), "checks": checks}}


def run_bench(cfg: RunConfig) -> dict:
    sk = cfg.skeleton()
    structure = _structure(cfg, num_periods(sk))
    t0 = time.perf_counter()
    sample_batch(sk, cfg.paths, tag="bench", workers=cfg.workers)
    sim_ms = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    ls = ls_solve(_ls_config(cfg, sk, structure, cfg.paths))
    solve_ms = 1e3 * (time.perf_counter() - t0)
    timings = {"simulate": sim_ms, "solve": solve_ms, **{f"solve_{k}": v for k, v in
                                                          ls.metadata["timings_ms"].items()}}
    oracle = residual = None
    if cfg.compare_oracle:
        oracle, residual, timings["oracle"] = _run_oracle(cfg, sk, structure)
    return {"rows": [_row(sk, cfg.paths, ls, oracle, residual, solve_ms)],
            "results": {"paths_per_second": cfg.paths / max(sim_ms, 1e-9) * 1e3},
            "timings_ms": timings}


RUNNERS = {"solve": run_solve, "oracle": run_oracle, "converge": run_converge,
           "plan": run_plan, "validate": run_validate, "bench": run_bench}


def run(cfg: RunConfig) -> dict:
    """Execute a subcommand and assemble its run record."""
    t0 = time.perf_counter()
    out = RUNNERS[cfg.subcommand](cfg)
    record = {
        "run_id": f"{cfg.subcommand}-{config_digest(cfg)}",
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "results": out.get("results", {}),
        "fits": out.get("fits", []),
        "rows": out.get("rows", []),
        "timings_ms": {**out.get("timings_ms", {}), "wall": 1e3 * (time.perf_counter() - t0)},
    }
    return _jsonable(record)


def deterministic_part(record: dict) -> dict:
    """The record without wall-clock fields or execution-only settings."""
    out = json.loads(json.dumps(record))
    out.pop("timings_ms", None)
    for row in out.get("rows", []):
        row.pop("wall_ms", None)
    for key in EXECUTION_FIELDS:
        out["config"].pop(key, None)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def output_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def write_outputs(cfg: RunConfig, record: dict, force: bool = False) -> list[Path]:
    """Write the JSON record and CSV table; refuses to replace files unless ``force``."""
    if cfg.format == "table":
        return []
    folder = output_dir(cfg)
    targets = []
    if cfg.format in ("json", "all"):
        targets.append(folder / f"{record['run_id']}.json")
    if cfg.format in ("csv", "all") and record["rows"]:
        targets.append(folder / f"{record['run_id']}.csv")
    clash = [p for p in targets if p.exists()]
    if clash and not force:
        raise ConfigError(f"output: {clash[0]} already exists; pass --force to overwrite")
    folder.mkdir(parents=True, exist_ok=True)
    for path in targets:
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="") as fh:
            if path.suffix == ".json":
                json.dump(record, fh, indent=2)
                fh.write("\n")
            else:
                writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
                writer.writeheader()
                for row in record["rows"]:
                    writer.writerow({c: "" if row.get(c) is None else row[c] for c in CSV_COLUMNS})
        os.replace(tmp, path)
    return targets


def format_table(headers: list[str], rows: list[list]) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    body = [[cell(v) for v in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def render(record: dict) -> str:
    sub = record["config"]["subcommand"]
    res = record["results"]
    if sub == "plan":
        return format_table(["k*", "epsilon", "periods"],
                            [[round(res["k_star"], 4), res["epsilon"], res["periods"]]])
    if sub == "converge":
        return format_table(["epsilon", "N", "oracle", "mean |V_hat - oracle|", "reps"],
                            [[s["epsilon"], s["N"], s["oracle_value"], s["mean_abs_error"],
                              s["replications"]] for s in res["convergence"]])
    if sub == "validate":
        table = format_table(["battery", "check", "value", "limit", "result"],
                             [[c["battery"], c["name"], c["value"], c["limit"],
                               "pass" if c["passed"] else "FAIL"] for c in res["checks"]])
        return table + f"\n{'all checks passed' if res['passed'] else 'some checks FAILED'}"
    cols = ["seed", "epsilon", "periods", "N", "V_hat", "U0_hat", "lower_bound",
            "lower_bound_se", "oracle_value", "max_residual", "wall_ms"]
    text = format_table(cols, [[r.get(c) for c in cols] for r in record["rows"]])
    if sub == "bench":
        text += "\n" + format_table(["phase", "ms"], [[k, v] for k, v in record["timings_ms"].items()])
    return text


def main(argv=None) -> int:
    args = sys.argv[1:] if argv is None else list(argv)
    sub = next((a for a in args if a in SUBCOMMANDS), "")
    try:
        cfg, force = parse_config(argv)
        sub = cfg.subcommand
        record = run(cfg)
        written = write_outputs(cfg, record, force)
    except SkelstopError as exc:
        print(f"skelstop {sub}: error: {exc}".replace("  ", " "), file=sys.stderr)
        return 2
    print(render(record))
    for path in written:
        print(f"wrote {path}")
    if sub == "validate" and not record["results"]["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
