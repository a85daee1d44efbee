"""Command-line entry point: run, replicate, report, export-pareto.

Exit codes: 0 on success, 1 when a run aborts (partial outputs are still
written and flagged incomplete), 2 for bad configuration or arguments.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .engine import RunConfig, run, run_sobol_baseline
from .errors import InvalidArgumentError, InvalidConfigError, MorboError
from .record import RunRecord, default_output_dir, hv_trace, load_record, save_record

log = logging.getLogger("morbo")

# config key -> (section, parser)
_INT, _FLOAT, _STR = "int", "float", "str"
CONFIG_KEYS: dict[str, tuple[str, str]] = {
    "problem": ("run", _STR),
    "n0": ("run", _INT),
    "nf": ("run", _INT),
    "q": ("run", _INT),
    "seed": ("run", _INT),
    "async_workers": ("run", _INT),
    "output_dir": ("run", _STR),
    "n_trust_regions": ("trust_region", _INT),
    "length_init": ("trust_region", _FLOAT),
    "length_max": ("trust_region", _FLOAT),
    "length_min": ("trust_region", _FLOAT),
    "tau_succ": ("trust_region", _FLOAT),
    "tau_fail": ("trust_region", _INT),
    "window_min": ("local_window", _INT),
    "window_cap": ("local_window", _INT),
    "r": ("candidates", _INT),
    "sampler": ("acquisition", _STR),
    "num_features": ("acquisition", _INT),
    "gp_restarts": ("surrogate", _INT),
    "gp_warm_restarts": ("surrogate", _INT),
    "gp_maxiter": ("surrogate", _INT),
    "noise_variance": ("surrogate", _FLOAT),
}
OPTIONAL_KEYS = {"tau_fail", "window_min", "window_cap", "output_dir"}
EXTERNAL_KEYS = {"command": _STR, "d": _INT, "m": _INT, "c": _INT, "lower": "vec", "upper": "vec", "ref_point": "vec"}


def _parse_value(key: str, kind: str, text: str):
    text = text.strip()
    if key in OPTIONAL_KEYS and text.lower() in ("", "none", "auto"):
        return None
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == "vec":
            return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise InvalidConfigError(f"bad value for {key!r}: {text!r}") from None
    return text


def read_config_file(path) -> dict:
    """Flat ``key -> value`` mapping from an INI file with one section per module."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise InvalidConfigError(f"malformed config file {path}: {exc}") from None
    values: dict = {}
    for section in parser.sections():
        for key, text in parser.items(section):
            if section == "external":
                if key not in EXTERNAL_KEYS:
                    raise InvalidConfigError(f"unknown key {key!r} in section [external]")
                values.setdefault("external", {})[key.upper() if key in ("m", "c") else key] = _parse_value(
                    key, EXTERNAL_KEYS[key], text
                )
                continue
            if key not in CONFIG_KEYS:
                raise InvalidConfigError(f"unknown key {key!r} in section [{section}]")
            expected = CONFIG_KEYS[key][0]
            if section != expected:
                raise InvalidConfigError(f"key {key!r} belongs in section [{expected}], not [{section}]")
            values[key] = _parse_value(key, CONFIG_KEYS[key][1], text)
    return values


def write_config_file(config: RunConfig, path) -> None:
    """Echo a config so that ``run --config`` on it reproduces the run."""
    parser = configparser.ConfigParser(interpolation=None)
    for key, (section, _) in CONFIG_KEYS.items():
        if not parser.has_section(section):
            parser.add_section(section)
        value = getattr(config, key)
        parser.set(section, key, "none" if value is None else repr(value) if isinstance(value, float) else str(value))
    if config.external:
        parser.add_section("external")
        for key, value in config.external.items():
            text = " ".join(repr(float(v)) for v in value) if isinstance(value, (list, tuple)) else str(value)
            parser.set("external", key.lower(), text)
    with open(path, "w") as fh:
        parser.write(fh)


def build_config(file_values: dict, overrides: dict) -> RunConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if not merged.get("problem"):
        raise InvalidConfigError("missing required field 'problem' (set [run] problem = ... or pass --problem)")
    if merged.get("tau_succ") is not None and math.isnan(merged["tau_succ"]):
        raise InvalidConfigError("tau_succ must be a number or inf")
    return RunConfig(**merged).validate()


# ---------------------------------------------------------------- commands


def _run_one(config: RunConfig, method: str, out_dir: Path) -> tuple[RunRecord, Path]:
    runner = run_sobol_baseline if method == "sobol" else run
    record = runner(config)
    stem = out_dir / f"{method}-{config.problem}-seed{config.seed}"
    save_record(record, stem)
    write_config_file(config, stem.with_name(stem.name + ".config.ini"))
    front = record.front_indices()
    iterations = max((o.iteration for o in record.observations), default=0) if method != "sobol" else 0
    lines = [
        f"method: {method}",
        f"problem: {config.problem}",
        f"seed: {config.seed}",
        f"status: {'complete' if record.complete else 'INCOMPLETE (' + str(record.error) + ')'}",
        f"evaluations: {len(record.observations)}",
        f"optimization iterations: {iterations}",
        f"final hypervolume: {record.final_hv!r}",
        f"front size: {front.size}",
    ]
    stem.with_name(stem.name + ".summary.txt").write_text("\n".join(lines) + "\n")
    return record, stem


def cmd_run(args) -> int:
    config = build_config(_file_values(args), _overrides(args))
    out_dir = _out_dir(args, config)
    record, stem = _run_one(config, args.method, out_dir)
    print(f"final hypervolume: {record.final_hv!r}")
    print(f"front size: {record.front_indices().size}")
    print(f"record: {stem}")
    if not record.complete:
        print(f"run aborted: {record.error}", file=sys.stderr)
        return 1
    return 0


def _parse_seeds(spec: list[str]) -> list[int]:
    seeds: list[int] = []
    for tok in spec:
        if ".." in tok:
            lo, hi = tok.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(tok))
    if not seeds:
        raise InvalidConfigError("no seeds given")
    return seeds


def cmd_replicate(args) -> int:
    try:
        seeds = _parse_seeds(args.seeds)
    except ValueError:
        raise InvalidConfigError(f"bad seed list {args.seeds!r}; use e.g. 1..5 or 1 2 3") from None
    base = _overrides(args)
    file_values = _file_values(args)
    records = []
    status = 0
    out_dir = None
    methods = [args.method] + (["sobol"] if args.with_sobol and args.method != "sobol" else [])
    for method in methods:
        for seed in seeds:
            config = build_config(file_values, base | {"seed": seed})
            out_dir = _out_dir(args, config)
            record, stem = _run_one(config, method, out_dir)
            print(f"{method} seed {seed}: final hypervolume {record.final_hv!r} -> {stem}")
            records.append(record)
            if not record.complete:
                status = 1
    table = aggregate(records)
    path = out_dir / f"replicate-{records[0].config['problem']}.tsv"
    path.write_text(format_table(table))
    sys.stdout.write(format_table(table))
    print(f"aggregate: {path}")
    return status


def aggregate(records: list[RunRecord]) -> list[dict]:
    """Per-method median and interquartile hypervolume at each batch boundary.

    Only boundaries present in every record of a method are reported.
    """
    if not records:
        raise InvalidArgumentError("need at least one record")
    problems = {r.config["problem"] for r in records}
    if len(problems) > 1:
        raise InvalidArgumentError(f"records mix problems: {', '.join(sorted(problems))}")
    rows = []
    for method in sorted({r.method for r in records}):
        traces = [dict(hv_trace(r)) for r in records if r.method == method]
        common = sorted(set.intersection(*(set(t) for t in traces)))
        for n in common:
            vals = np.array([t[n] for t in traces])
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            rows.append(
                {"method": method, "evaluations": n, "runs": len(vals), "median": med, "q25": q25, "q75": q75}
            )
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["method", "evaluations", "runs", "median", "q25", "q75"]
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(repr(float(row[c])) if isinstance(row[c], float) else str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def _load(path) -> RunRecord:
    try:
        return load_record(path)
    except FileNotFoundError as exc:
        raise InvalidConfigError(str(exc)) from None


def cmd_report(args) -> int:
    records = [_load(p) for p in args.records]
    text = format_table(aggregate(records))
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return 0


def export_front(record: RunRecord) -> str:
    """Delimited rows of (x, objectives) for the final front, sorted by the first objective."""
    idx = record.front_indices()
    obs = [record.observations[i] for i in idx]
    obs.sort(key=lambda o: (o.objectives[0], o.index))
    d = len(record.config["problem_info"]["bounds"])
    m = record.num_objectives
    header = [f"x{i + 1}" for i in range(d)] + [f"y{j + 1}" for j in range(m)]
    lines = ["\t".join(header)]
    for o in obs:
        lines.append("\t".join(repr(v) for v in (*o.x, *o.objectives)))
    return "\n".join(lines) + "\n"


def cmd_export_pareto(args) -> int:
    text = export_front(_load(args.record))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parsing


def _file_values(args) -> dict:
    return read_config_file(args.config) if getattr(args, "config", None) else {}


def _overrides(args) -> dict:
    keys = ["problem", "seed", "nf", "n0", "q", "sampler", "num_features", "n_trust_regions", "tau_fail", "r",
            "output_dir", "async_workers"]
    return {k: getattr(args, k, None) for k in keys}


def _out_dir(args, config: RunConfig) -> Path:
    out = Path(config.output_dir) if config.output_dir else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--problem")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", dest="nf", type=int, help="total evaluations")
    p.add_argument("--n0", type=int, help="initial design size")
    p.add_argument("--batch", dest="q", type=int, help="batch size")
    p.add_argument("--sampler", choices=["exact", "rff"])
    p.add_argument("--num-features", type=int)
    p.add_argument("--n-tr", dest="n_trust_regions", type=int)
    p.add_argument("--tau-fail", type=int)
    p.add_argument("--candidates", dest="r", type=int, help="candidate set size")
    p.add_argument("--async-workers", type=int)
    p.add_argument("--output-dir", help="defaults to $MORBO_OUTPUT_DIR or ./morbo-runs")
    p.add_argument("--method", choices=["morbo", "sobol"], default="morbo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morbo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one optimization")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replicate", help="run several seeds and aggregate")
    _add_run_flags(p)
    p.add_argument("--seeds", nargs="+", required=True, help="e.g. 1..5 or 1 2 3")
    p.add_argument("--with-sobol", action="store_true", help="also run the Sobol baseline per seed")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("report", help="median and IQR hypervolume per batch boundary")
    p.add_argument("records", nargs="+")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-pareto", help="write the final Pareto set of a record")
    p.add_argument("record")
    p.add_argument("--output")
    p.set_defaults(func=cmd_export_pareto)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InvalidConfigError, InvalidArgumentError, MorboError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
