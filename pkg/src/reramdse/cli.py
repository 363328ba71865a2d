"""Command-line pipeline: calibrate -> characterize -> surrogate -> explore -> report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import warnings
from pathlib import Path

import numpy as np

from . import _csv
from .calibration import Anchor, CalibrationError, calibrate_to_anchors
from .circuit import SolverError, SolverOptions
from .config import ConfigError, ToolkitConfig
from .dse import (AdcEnergyModel, Constraints, DesignPoint, Grid, NoFeasiblePoint, drive_voltage_for_point,
                  explore, export_heatmaps)
from .surrogate import (FingerprintMismatch, OutOfRange, SurrogateError, SurrogateModel, build_surrogate,
                        normalized_profile_collapse)
from .testbench import CharacterizationResult, characterize, fingerprint, physical_echo

log = logging.getLogger("reramdse")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4
EXIT_IO = 5
EXIT_STALE = 6

WORKSPACE_ENV = "RERAMDSE_WORKSPACE"


class UsageError(Exception):
    pass


class StaleArtifact(Exception):
    pass


# -- helpers ------------------------------------------------------------------------

def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _range(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers in {text!r}") from None


def _workspace(args, cfg: ToolkitConfig) -> Path:
    if args.workspace:
        return Path(args.workspace)
    return Path(os.environ.get(WORKSPACE_ENV) or cfg.paths.workspace)


def _load_config(args) -> ToolkitConfig:
    if args.config is None:
        return ToolkitConfig()
    return ToolkitConfig.load(args.config)


def _expected_fingerprint(cfg: ToolkitConfig, n: int) -> str:
    echo = physical_echo(cfg.crossbar(n), cfg.device_params(), cfg.testbench_config(), SolverOptions())
    return fingerprint({"n": n, **echo})


def _size_dir(ws: Path, n: int) -> Path:
    return ws / "characterize" / f"N{n}"


def _write_dir_atomically(target: Path, fill):
    tmp = target.with_name(target.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    fill(tmp)
    if target.exists():
        shutil.rmtree(target)
    tmp.rename(target)


def _surrogate_physical_fingerprint(cfg: ToolkitConfig) -> str:
    n = cfg.surrogate.sizes[0]
    echo = physical_echo(cfg.crossbar(n), cfg.device_params(), cfg.testbench_config(), SolverOptions())
    return fingerprint(echo)


# -- commands --------------------------------------------------------------------------

def cmd_calibrate(args, cfg: ToolkitConfig) -> int:
    path = Path(args.anchors)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    items = raw.get("anchors", []) if isinstance(raw, dict) else raw
    if not items:
        raise UsageError(f"{path}: no anchors given")
    try:
        anchors = [Anchor(int(a["n"]), float(a["sum_g"]), a.get("from_n")) for a in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: malformed anchor ({exc})") from None
    free = tuple(args.free.split(",")) if args.free else (("g_lrs", "r_seg") if len(anchors) > 1 else ("g_lrs",))
    try:
        result = calibrate_to_anchors(anchors, free, device=cfg.device_params(), r_seg=cfg.wire.r_seg,
                                      termination=cfg.wire.termination, workers=args.workers or 1)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(result.report())
    new = cfg.replace(device={"g_lrs": result.device.g_lrs}, wire={"r_seg": result.r_seg})
    out = Path(args.out) if args.out else _workspace(args, cfg) / "calibrated.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    new.save(out)
    print(f"calibrated config written to {out}")
    return EXIT_OK


def cmd_characterize(args, cfg: ToolkitConfig) -> int:
    ws = _workspace(args, cfg)
    sizes = args.sizes or list(cfg.surrogate.sizes)
    bits = args.bits if args.bits is not None else list(cfg.surrogate.bits_list)
    device, tb = cfg.device_params(), cfg.testbench_config()
    failed = []
    for n in sizes:
        target = _size_dir(ws, n)
        expected = _expected_fingerprint(cfg, n)
        meta = target / "meta.json"
        if meta.exists():
            old = json.loads(meta.read_text())
            if old.get("fingerprint") == expected and set(bits) <= set(old.get("bits", [])):
                print(f"N={n}: up to date ({expected})")
                continue
        done = [0]

        def progress(k, n=n):
            done[0] += k
            if not args.quiet:
                print(f"\rN={n}: {done[0]}/{n} segments", end="", file=sys.stderr, flush=True)

        try:
            res = characterize(cfg.crossbar(n), device, tb, bits_list=bits, workers=args.workers,
                               progress=progress)
        except SolverError as exc:
            if not args.quiet:
                print(file=sys.stderr)
            target.mkdir(parents=True, exist_ok=True)
            (target / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
            print(f"N={n}: FAILED ({exc}); details in {target / 'error.txt'}")
            failed.append(n)
            continue
        if not args.quiet:
            print(file=sys.stderr)
        _write_dir_atomically(target, res.save)
        print(f"N={n}: sum G_eff = {res.cumulative_conductance:.6g} S, "
              f"RMSE_max (analog) = {res.rmse_max():.4g} -> {target}")
    return EXIT_SOLVER if failed else EXIT_OK


def _load_results(ws: Path, cfg: ToolkitConfig):
    results = []
    stale = []
    for n in cfg.surrogate.sizes:
        d = _size_dir(ws, n)
        if not (d / "meta.json").exists():
            raise StaleArtifact(f"missing characterization for N={n} in {d}; run 'characterize' first")
        r = CharacterizationResult.load(d)
        if r.fingerprint != _expected_fingerprint(cfg, n):
            stale.append(str(d))
        results.append(r)
    if stale:
        raise FingerprintMismatch("characterization results do not match the current config: "
                                  + ", ".join(stale), labels=stale)
    return results


def cmd_surrogate(args, cfg: ToolkitConfig) -> int:
    ws = _workspace(args, cfg)
    results = _load_results(ws, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = build_surrogate(results, cfg.surrogate.bits_list, mode=cfg.surrogate.interpolation)
    path = model.save(ws / "surrogate.model")
    print(f"surrogate written to {path}")
    print("sizes:", ", ".join(str(n) for n in model.sizes))
    print("sum G_eff (S):", ", ".join(f"{g:.6g}" for g in model.sum_g))
    report = normalized_profile_collapse(model, gate=cfg.surrogate.collapse_gate)
    print("normalized-profile collapse:")
    for line in report.lines():
        print("  " + line)
    for w in caught:
        print(f"warning: {w.message}")
    return EXIT_OK


def _load_surrogate(ws: Path, cfg: ToolkitConfig) -> SurrogateModel:
    path = ws / "surrogate.model"
    if not path.exists():
        raise StaleArtifact(f"{path} not found; run 'surrogate' first")
    model = SurrogateModel.load(path)
    if model.fingerprint != _surrogate_physical_fingerprint(cfg):
        raise FingerprintMismatch(f"{path} was built from a different configuration", labels=[str(path)])
    return model


def _drive_voltage(cfg: ToolkitConfig, model, adc) -> float:
    d = cfg.dse
    if d.v_drive is not None:
        return d.v_drive
    if d.drive_match is not None:
        m = d.drive_match
        point = DesignPoint(int(m["n"]), float(m["f"]), int(m["bits"]))
        return drive_voltage_for_point(model, adc, point, float(m["power"]), d.dac_power_per_row)
    return cfg.device.v_read


def build_grid(args, cfg: ToolkitConfig) -> Grid:
    d = cfg.dse
    if args.fix_f is not None and args.f_range is not None:
        raise UsageError("--fix-f and --f-range are mutually exclusive")
    if args.fix_bits is not None and args.bits_range is not None:
        raise UsageError("--fix-bits and --bits-range are mutually exclusive")
    n = args.n_range or d.n_range
    f = args.fix_f if args.fix_f is not None else (args.f_range or d.f_range)
    bits = args.fix_bits if args.fix_bits is not None else (args.bits_range or d.bits_range)
    try:
        return Grid.from_ranges(n=n, f=f, bits=bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_explore(args, cfg: ToolkitConfig) -> int:
    ws = _workspace(args, cfg)
    grid = build_grid(args, cfg)
    if args.max_power is None and args.max_rmse is None and not args.elmore and not args.unconstrained:
        raise UsageError("give at least one of --max-power, --max-rmse, --elmore, or --unconstrained")
    model = _load_surrogate(ws, cfg)
    adc = AdcEnergyModel.from_anchor(cfg.dse.adc_anchor_bits, cfg.dse.adc_anchor_energy)
    v = _drive_voltage(cfg, model, adc)
    constraints = Constraints(max_power=args.max_power, max_rmse=args.max_rmse,
                              elmore=args.elmore or cfg.dse.elmore_constraint)
    run_id = args.run_id or fingerprint({
        "config": cfg.fingerprint, "dse": cfg.to_dict()["dse"], "constraints": constraints.echo(),
        "grid": [grid.n.tolist(), grid.f.tolist(), grid.bits.tolist()], "surrogate": model.fingerprint})
    out = ws / "explore" / run_id
    try:
        result = explore(model, adc, grid, constraints, v, cfg.dse.ops_per_mac, cfg.dse.dac_power_per_row,
                         wire=cfg.crossbar(int(grid.n[0])))
    except NoFeasiblePoint as exc:
        lv = exc.least_violating
        print(f"no feasible point: {exc}")
        print(f"  least violating metrics: power {lv.metrics['power']:.4g} W, rmse {lv.metrics['rmse']:.4g}")
        return EXIT_INFEASIBLE
    _write_dir_atomically(out, lambda d: export_heatmaps(result, d))
    o = result.optimum
    m = o.metrics
    print(f"drive voltage: {v:.6g} V")
    print(f"optimum: N={o.point.n}, f={o.point.f / 1e6:.6g} MHz, bits={o.point.bits}")
    print(f"  efficiency {m['efficiency']:.4g} TOPs/s/W, throughput {m['throughput'] / 1e12:.4g} TOPs/s")
    print(f"  power {m['power']:.4g} W (array {m['power_array']:.4g} W, ADC {m['power_adc']:.4g} W, "
          f"DAC {m['power_dac']:.4g} W)")
    print(f"  normalized RMSE_max {m['rmse']:.4g}")
    print(f"  binding constraints: {', '.join(o.binding) if o.binding else 'none'}")
    print(f"heatmaps written to {out}")
    return EXIT_OK


def cmd_report(args, cfg: ToolkitConfig) -> int:
    ws = _workspace(args, cfg)
    out = ws / "report"
    print(f"config fingerprint: {cfg.fingerprint}")
    model = _load_surrogate(ws, cfg)
    sizes = np.array(model.sizes, dtype=float)

    def fill(d):
        d.mkdir(parents=True)
        _csv.write_grid(d / "rmse_max.csv", sizes, np.array(model.bits, dtype=float), model.rmse_max_grid,
                        corner="n\\bits")
        _csv.write_matrix(d / "sum_g.csv", np.column_stack([sizes, model.sum_g]))
        grid = np.linspace(0.0, 1.0, 101)
        prof = np.array([np.interp(grid, np.arange(len(p)) / (len(p) - 1), p) for p in model.profiles])
        _csv.write_grid(d / "profiles.csv", sizes, grid, prof, corner="n\\s")
        _csv.write_json(d / "collapse.json", {
            f"{a}-{b}": dev for (a, b), dev in normalized_profile_collapse(model).pairs.items()})

    _write_dir_atomically(out, fill)
    print(f"{'N':>5} {'sum G (S)':>12} {'RMSE analog':>12} " + " ".join(f"{'b' + str(b):>8}" for b in model.bits))
    for k, n in enumerate(model.sizes):
        print(f"{n:>5} {model.sum_g[k]:>12.6g} {model.rmse_max_analog[k]:>12.4g} "
              + " ".join(f"{x:>8.4g}" for x in model.rmse_max_grid[k]))
    runs = sorted(p for p in (ws / "explore").glob("*/summary.json")) if (ws / "explore").exists() else []
    for p in runs:
        s = json.loads(p.read_text())
        o = s["optimum"]
        print(f"explore {p.parent.name}: N={o['n']}, f={o['f'] / 1e6:.6g} MHz, bits={o['bits']}, "
              f"{o['efficiency']:.4g} TOPs/s/W, binding {s['binding']}")
    print(f"plot data written to {out}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reramdse", description="ReRAM crossbar characterization and DSE")
    p.add_argument("--config", help="JSON config file (defaults built in)")
    p.add_argument("--workspace", help=f"workspace directory (overrides ${WORKSPACE_ENV} and the config)")
    p.add_argument("--workers", type=int, default=None, help="solver worker threads (default: CPU count)")
    p.add_argument("--seed", type=int, default=0, help="accepted for reproducibility; the pipeline is deterministic")
    p.add_argument("-q", "--quiet", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit g_lrs / r_seg to cumulative-conductance anchors")
    c.add_argument("anchors", help='JSON file: {"anchors": [{"n": 128, "sum_g": 0.79}, ...]}')
    c.add_argument("--free", help="comma-separated parameters to fit (g_lrs,r_seg)")
    c.add_argument("--out", help="where to write the calibrated config")
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("characterize", help="run the testbench for each size")
    c.add_argument("--sizes", type=_int_list)
    c.add_argument("--bits", type=_int_list)
    c.set_defaults(func=cmd_characterize)

    c = sub.add_parser("surrogate", help="build the surrogate from characterization results")
    c.set_defaults(func=cmd_surrogate)

    c = sub.add_parser("explore", help="constrained design-space search")
    c.add_argument("--max-power", type=float)
    c.add_argument("--max-rmse", type=float)
    c.add_argument("--elmore", action="store_true", help="cap f at the Elmore-delay limit")
    c.add_argument("--unconstrained", action="store_true")
    c.add_argument("--fix-f", type=float)
    c.add_argument("--fix-bits", type=int)
    c.add_argument("--n-range", type=_range, help="start:stop:step")
    c.add_argument("--f-range", type=_range, help="start:stop:step (Hz)")
    c.add_argument("--bits-range", type=_range, help="start:stop:step")
    c.add_argument("--run-id")
    c.set_defaults(func=cmd_explore)

    c = sub.add_parser("report", help="summarize the workspace and write plot data")
    c.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoFeasiblePoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FingerprintMismatch, StaleArtifact, OutOfRange) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except SurrogateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
