"""Command-line entry point: ``mrforge {generate,verify,discover,analyze,report}``.

Every command takes its settings from an optional JSON ``--config`` file, with
command-line flags taking precedence.  Outputs depend only on those settings, so
reruns reproduce them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import FlatLayout, MRSet, manual_catalogue
from .analysis import covariance_eigenanalysis, high_variance_attributes, parameter_matrix, targeted_discover
from .errors import DimensionCapError, MRForgeError, ValidationError
from .harness import DEFAULT_TOLERANCE, ReportIOError, campaign_inputs, export_report, load_report, run_campaign
from .model import GridSpec, ModelInput, Variant
from .search import CostConfig, SearchConfig, discover

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_NO_DISCOVERY = 4
EXIT_IO = 5

DEFAULTS = {
    "grid": "10x20x30",
    "seed": 0,
    "n_inputs": 10,
    "amplitude": 1.0,
    "variant": "both",
    "tolerance": DEFAULT_TOLERANCE,
    "out": None,
    "inputs": None,
    "mrs": None,
    "attrs": None,
    "n_target": 1,
    "shift": 1,
    "k": 1,
    "top_n": 5,
    "n_samples": 8,
    "cost": {},
    "search": {},
}

DISCOVER_GRID = "3x3x2"


class ConfigError(MRForgeError):
    pass


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags, in that order."""
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    if args.command == "discover":
        cfg["grid"] = DISCOVER_GRID
        cfg["variant"] = "cyclic"
    if args.config:
        loaded = _read_json(args.config, "config")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys in {args.config}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["out"] is None:
        raise ConfigError("an output directory is required (--out or 'out' in the config)")
    paths = [str(Path(cfg[k]).resolve()) for k in ("out", "inputs", "mrs", "attrs") if cfg[k]]
    if len(set(paths)) != len(paths):
        raise ConfigError("--out, --inputs, --mrs and --attrs must name distinct paths")
    return cfg


def _grid(cfg) -> GridSpec:
    grid = cfg["grid"]
    if isinstance(grid, dict):
        return GridSpec.from_dict(grid)
    return GridSpec.parse(str(grid))


def _variants(cfg):
    choice = cfg["variant"]
    if choice == "both":
        return [Variant.CYCLIC, Variant.NONCYCLIC]
    try:
        return [Variant(choice)]
    except ValueError:
        raise ConfigError(f"unknown variant {choice!r}") from None


def _input_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportIOError(out, exc) from exc
    return out


def cmd_generate(cfg) -> int:
    """write seeded random model inputs"""
    grid = _grid(cfg)
    out = _out_dir(cfg)
    seeds = _input_seeds(cfg["seed"], cfg["n_inputs"])
    files = []
    for i, s in enumerate(seeds):
        name = f"input_{i:03d}.json"
        campaign_inputs(grid, [s], cfg["amplitude"])[0].save(out / name)
        files.append(name)
    _write_json(out / "manifest.json", {
        "grid": grid.to_dict(), "seed": cfg["seed"], "seeds": seeds,
        "amplitude": cfg["amplitude"], "files": files,
    })
    print(f"wrote {len(files)} inputs to {out}")
    return EXIT_OK


def _load_inputs(cfg):
    if cfg["inputs"]:
        src = Path(cfg["inputs"])
        manifest = _read_json(src / "manifest.json", "input manifest")
        inputs = []
        for name in manifest["files"]:
            try:
                inputs.append(ModelInput.load(src / name))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read input file {src / name}: {exc}") from None
        return inputs, manifest.get("seeds", [])
    seeds = _input_seeds(cfg["seed"], cfg["n_inputs"])
    return campaign_inputs(_grid(cfg), seeds, cfg["amplitude"]), seeds


def _load_mrset(path) -> MRSet:
    data = _read_json(path, "MR")
    try:
        return MRSet.from_json(data)
    except (KeyError, TypeError, ValidationError) as exc:
        raise ConfigError(f"MR file {path} is malformed: {exc}") from None


def cmd_verify(cfg) -> int:
    """run the catalogue (plus any discovered MRs) on both variants"""
    inputs, seeds = _load_inputs(cfg)
    layout = FlatLayout.of(inputs[0])
    catalogue = manual_catalogue(layout, shift=cfg["shift"])
    mrs = list(catalogue)
    if cfg["mrs"]:
        mrs.extend(_load_mrset(cfg["mrs"]).discovered())
    variants = _variants(cfg)
    nt, ny, nx = inputs[0].shape
    report = run_campaign(mrs, inputs, cfg["tolerance"], variants,
                          manifest={"grid": {"nt": nt, "ny": ny, "nx": nx}, "seeds": seeds})
    out = _out_dir(cfg)
    export_report(report, out)
    for row in report.detection:
        flag = "defect-revealing" if row["defect_revealing"] else ""
        verdicts = " ".join(f"{v.value}={report.result(row['mr'], v).verdict}" for v in variants)
        print(f"{row['mr']:<24} {verdicts} {flag}".rstrip())
    # catalogue members are the relations known to hold for a correct model
    failed = [m.label for m in catalogue
              if Variant.CYCLIC in variants and not report.result(m.label, Variant.CYCLIC).passed]
    if failed:
        print(f"catalogue MRs failing on the cyclic variant: {failed}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def _search_configs(cfg, grid: GridSpec, variant: Variant):
    cost_kw = dict(cfg["cost"])
    cost_kw.setdefault("function_id", variant.value)
    cost_cfg = CostConfig.for_grid(grid, seed=cfg["seed"], n_samples=cfg["n_samples"], **cost_kw)
    search_kw = dict(cfg["search"])
    search_kw.setdefault("seed", cfg["seed"])
    return cost_cfg, SearchConfig.from_json(search_kw)


def cmd_discover(cfg) -> int:
    """search for new affine MRs on a small grid"""
    grid = _grid(cfg)
    variants = _variants(cfg)
    if len(variants) != 1:
        raise ConfigError("discover searches one variant at a time; pass --variant cyclic or noncyclic")
    cost_cfg, search_cfg = _search_configs(cfg, grid, variants[0])
    try:
        if cfg["attrs"]:
            attrs = [tuple(a) for a in _read_json(cfg["attrs"], "attributes")["attributes"]]
            result = targeted_discover(None, attrs, cost_cfg, search_cfg, cfg["n_target"])
        else:
            result = discover(None, cost_cfg.layout, cost_cfg, search_cfg, cfg["n_target"])
    except DimensionCapError as exc:
        raise ValidationError(str(exc)) from None
    out = _out_dir(cfg)
    result.save(out / "mrset.json")
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    trace_files = []
    for i, trace in enumerate(result.traces):
        name = f"trace_{i:03d}.csv"
        trace.to_csv(trace_dir / name)
        trace_files.append({"file": name, "seed": trace.seed, "status": trace.status,
                            "steps": len(trace), "final_cost": trace.final_cost})
    admitted = len(result.discovered())
    _write_json(out / "manifest.json", {
        "grid": grid.to_dict(),
        "cost": cost_cfg.to_json(),
        "search": search_cfg.to_json(),
        "n_samples": cfg["n_samples"],
        "n_target": cfg["n_target"],
        "admitted": admitted,
        "early_stop": admitted >= cfg["n_target"],
        "total_steps": result.total_steps,
        "traces": trace_files,
    })
    print(f"admitted {admitted} of {cfg['n_target']} MRs in {result.total_steps} steps")
    return EXIT_OK if admitted else EXIT_NO_DISCOVERY


def cmd_analyze(cfg) -> int:
    """rank input attributes by variance across discovered MRs"""
    if not cfg["mrs"]:
        raise ConfigError("analyze needs a discovered-MR file (--mrs)")
    mrset = _load_mrset(cfg["mrs"])
    matrix = parameter_matrix(mrset)
    report = covariance_eigenanalysis(matrix, cfg["k"])
    attrs = high_variance_attributes(report, cfg["top_n"])
    out = _out_dir(cfg)
    report.save_json(out / "variance.json")
    report.save_csv(out / "variance.csv")
    _write_json(out / "attributes.json", {"attributes": [list(a) for a in attrs]})
    for block, score in report.attribute_scores.items():
        print(f"{block:<10} {score:.6f}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    """summarise a verify run as a CSV table"""
    if not cfg["inputs"]:
        raise ConfigError("report needs the directory written by 'verify' (--inputs)")
    source = Path(cfg["inputs"])
    try:
        report = load_report(source)
    except OSError as exc:
        raise ConfigError(f"cannot read report in {source}: {exc.strerror}") from None
    out = _out_dir(cfg)
    lines = ["mr,variant,verdict,max_deviation"]
    for r in report.results:
        lines.append(f"{r.mr_label},{r.variant.value},{r.verdict},{r.max_deviation!r}")
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print("defect-revealing:", ", ".join(report.defect_revealing()) or "none")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "verify": cmd_verify,
    "discover": cmd_discover,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--grid", help="grid as NYxNXxNT, e.g. 10x20x30")
    common.add_argument("--variant", choices=["cyclic", "noncyclic", "both"])
    common.add_argument("--tolerance", type=float)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mrs", help="MR set JSON file")
    common.add_argument("--attrs", help="attributes JSON file written by 'analyze'")
    common.add_argument("--n-target", dest="n_target", type=int)
    common.add_argument("--inputs", help="input directory written by 'generate' (or report directory)")
    common.add_argument("--n", dest="n_inputs", type=int, help="number of random inputs")
    common.add_argument("--amplitude", type=float)
    common.add_argument("--shift", type=int, help="shift used by the cyclic catalogue MRs")
    common.add_argument("--k", type=int, help="number of principal components")
    common.add_argument("--top-n", dest="top_n", type=int)
    common.add_argument("--samples", dest="n_samples", type=int, help="cost samples for discovery")

    parser = argparse.ArgumentParser(prog="mrforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__ or name)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
