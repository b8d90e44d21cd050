"""``gfmsim`` command-line front end.

Configs are strict JSON (``schema_version`` 1).  Every key is checked and an
unknown or malformed one is reported with its dotted path, e.g.
``scenario.udc.xi``.  Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import controllers as ctl
from .analysis import (
    DesignParams,
    build_gc_design_model,
    build_is_closed_loop,
    build_is_design_model,
    build_gc_closed_loop,
    gc_loop_functions,
    rocof_report,
)
from .errors import ConfigError, GfmError, NumericalError
from .plant import GC, IS, P_LOAD_BASE, PlantParams
from .sim import EVENT_KINDS, STRATEGIES, Event, Scenario, linearize_scenario, run_scenario, trace_metrics
from .tfcore import TransferFunction

log = logging.getLogger("gfmsim")

SCHEMA_VERSION = 1
METRIC_COLUMNS = {
    "rise": "rise_time_s",
    "settle": "settling_time_s",
    "overshoot": "overshoot_pct",
    "rocof": "max_rocof_hz_s",
}
DEFAULT_ROCOF_LIMIT = 1.0  # Hz/s
PRESET_PREFIX = "preset:"


# --- strict config reading --------------------------------------------------


def _obj(value, path) -> dict:
    if not isinstance(value, dict):
        raise ConfigError("expected an object", path)
    return value


def _num(value, path, *, positive=False, nonneg=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {type(value).__name__}", path)
    try:
        x = float(value)
    except OverflowError:
        raise ConfigError("number out of range", path) from None
    if not math.isfinite(x):
        raise ConfigError("must be finite", path)
    if positive and not x > 0:
        raise ConfigError(f"must be > 0, got {x:g}", path)
    if nonneg and x < 0:
        raise ConfigError(f"must be >= 0, got {x:g}", path)
    return x


def _str(value, path, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigError("expected a string", path)
    if choices is not None and value not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}", path)
    return value


def _check_keys(block: dict, allowed, path: str) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError("unknown key", f"{path}.{key}" if path else str(key))


def _params(cls, block: dict, path: str, skip=()):
    """Build a frozen parameter dataclass from numeric keys of ``block``."""
    names = [f.name for f in fields(cls) if f.name not in skip and f.name != "active_filter"]
    _check_keys(block, names, path)
    kwargs = {k: _num(v, f"{path}.{k}") for k, v in block.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], f"{path}.{exc.key_path}") from None


@dataclass(frozen=True)
class OutputSpec:
    trace_path: str = "trace.csv"
    metrics_path: str = "metrics.json"
    precision: int = 9


@dataclass(frozen=True)
class Config:
    mode: str
    strategy: str
    t_end: float
    dt: float
    plant: PlantParams
    p_load: float
    linear_plant: bool
    events: tuple[Event, ...]
    droop: ctl.DroopParams
    vsg: ctl.VsgParams
    udc: ctl.UdcParams
    udc_filter: str
    design: Optional[DesignParams]
    rocof_limit: float
    output: OutputSpec
    comment: Optional[str] = None

    def controller(self, strategy: str) -> ctl.ControllerParams:
        if strategy == "udc" and self.udc_filter == "design":
            return ctl.udc_from_design(self.design, self.plant, self.udc)
        return getattr(self, strategy)

    def scenario(self, strategy: Optional[str] = None) -> Scenario:
        strategy = strategy or self.strategy
        return Scenario(
            mode=self.mode,
            strategy=strategy,
            controller=self.controller(strategy),
            plant=self.plant,
            events=self.events,
            t_end=self.t_end,
            dt=self.dt,
            p_load=self.p_load,
            linear_plant=self.linear_plant,
        )


_SCENARIO_KEYS = ("mode", "strategy", "t_end", "dt", "plant", "droop", "vsg", "udc", "rocof_limit_hz_s")
_PLANT_KEYS = ("x_line", "e0", "v0", "omega0", "p_load", "linear", "events")


def _events(raw, path) -> tuple[Event, ...]:
    if not isinstance(raw, list):
        raise ConfigError("expected a list", path)
    out = []
    for i, item in enumerate(raw):
        p = f"{path}[{i}]"
        item = _obj(item, p)
        _check_keys(item, ("time", "kind", "value"), p)
        if "time" not in item or "kind" not in item:
            raise ConfigError("events need 'time' and 'kind'", p)
        kind = _str(item["kind"], f"{p}.kind", EVENT_KINDS)
        value = _num(item.get("value", 0.0), f"{p}.value")
        out.append(Event(_num(item["time"], f"{p}.time", nonneg=True), kind, value))
    return tuple(out)


def parse_config(data: Any) -> Config:
    root = _obj(data, "")
    _check_keys(root, ("schema_version", "comment", "scenario", "design", "output"), "")
    if "schema_version" not in root:
        raise ConfigError("missing", "schema_version")
    if root["schema_version"] != SCHEMA_VERSION or isinstance(root["schema_version"], bool):
        raise ConfigError(f"unsupported, expected {SCHEMA_VERSION}", "schema_version")
    comment = root.get("comment")
    if comment is not None:
        _str(comment, "comment")
    if "scenario" not in root:
        raise ConfigError("missing", "scenario")

    sc = _obj(root["scenario"], "scenario")
    _check_keys(sc, _SCENARIO_KEYS, "scenario")
    mode = _str(sc.get("mode", GC), "scenario.mode", (GC, IS))
    strategy = _str(sc.get("strategy", "udc"), "scenario.strategy", STRATEGIES)
    t_end = _num(sc.get("t_end", 10.0), "scenario.t_end", positive=True)
    dt = _num(sc.get("dt", 1e-4), "scenario.dt", positive=True)
    rocof_limit = _num(sc.get("rocof_limit_hz_s", DEFAULT_ROCOF_LIMIT), "scenario.rocof_limit_hz_s", positive=True)

    pl = _obj(sc.get("plant", {}), "scenario.plant")
    _check_keys(pl, _PLANT_KEYS, "scenario.plant")
    plant_kw = {k: _num(pl[k], f"scenario.plant.{k}", positive=True) for k in ("x_line", "e0", "v0", "omega0") if k in pl}
    plant = PlantParams(**plant_kw)
    p_load = _num(pl.get("p_load", P_LOAD_BASE), "scenario.plant.p_load", nonneg=True)
    linear = pl.get("linear", False)
    if not isinstance(linear, bool):
        raise ConfigError("expected true or false", "scenario.plant.linear")
    events = _events(pl.get("events", []), "scenario.plant.events")

    droop = _params(ctl.DroopParams, _obj(sc.get("droop", {}), "scenario.droop"), "scenario.droop")
    vsg = _params(ctl.VsgParams, _obj(sc.get("vsg", {}), "scenario.vsg"), "scenario.vsg")
    udc_raw = dict(_obj(sc.get("udc", {}), "scenario.udc"))
    udc_filter = _str(udc_raw.pop("filter", "lowpass"), "scenario.udc.filter", ("lowpass", "design"))
    if udc_filter == "design":
        for key in ("kp_droop", "xi"):
            if key in udc_raw:
                raise ConfigError("set by the design block when filter is 'design'", f"scenario.udc.{key}")
    udc = _params(ctl.UdcParams, udc_raw, "scenario.udc")

    design = None
    if "design" in root:
        d = _obj(root["design"], "design")
        names = [f.name for f in fields(DesignParams)]
        _check_keys(d, names, "design")
        for req in ("t_z1", "t_p1", "t_p2", "t_p3"):
            if req not in d:
                raise ConfigError("missing", f"design.{req}")
        design = DesignParams(**{k: _num(v, f"design.{k}") for k, v in d.items()})
    if udc_filter == "design" and design is None:
        raise ConfigError("filter 'design' needs a design block", "scenario.udc.filter")

    out = _obj(root.get("output", {}), "output")
    _check_keys(out, ("trace_path", "metrics_path", "precision"), "output")
    prec = out.get("precision", 9)
    if isinstance(prec, bool) or not isinstance(prec, int) or not 1 <= prec <= 17:
        raise ConfigError("must be an integer in [1, 17]", "output.precision")
    output = OutputSpec(
        trace_path=_str(out.get("trace_path", "trace.csv"), "output.trace_path"),
        metrics_path=_str(out.get("metrics_path", "metrics.json"), "output.metrics_path"),
        precision=prec,
    )

    cfg = Config(
        mode=mode, strategy=strategy, t_end=t_end, dt=dt, plant=plant, p_load=p_load,
        linear_plant=linear, events=events, droop=droop, vsg=vsg, udc=udc, udc_filter=udc_filter,
        design=design, rocof_limit=rocof_limit, output=output, comment=comment,
    )
    cfg.scenario()  # surface Scenario invariants (event order, dt guard) as config errors
    return cfg


def _dataclass_dict(obj, skip=()) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj) if f.name not in skip}


def dump_config(cfg: Config) -> dict:
    """Fully explicit JSON-ready form; ``parse_config`` of it gives back ``cfg``."""
    udc = _dataclass_dict(cfg.udc, skip=("active_filter",))
    if cfg.udc_filter == "design":
        udc.pop("kp_droop")
        udc.pop("xi")
    udc["filter"] = cfg.udc_filter
    plant = _dataclass_dict(cfg.plant)
    plant.update(
        p_load=cfg.p_load,
        linear=cfg.linear_plant,
        events=[{"time": e.time, "kind": e.kind, "value": e.value} for e in cfg.events],
    )
    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {
            "mode": cfg.mode,
            "strategy": cfg.strategy,
            "t_end": cfg.t_end,
            "dt": cfg.dt,
            "rocof_limit_hz_s": cfg.rocof_limit,
            "plant": plant,
            "droop": _dataclass_dict(cfg.droop),
            "vsg": _dataclass_dict(cfg.vsg),
            "udc": udc,
        },
        "output": _dataclass_dict(cfg.output),
    }
    if cfg.comment is not None:
        out["comment"] = cfg.comment
    if cfg.design is not None:
        out["design"] = _dataclass_dict(cfg.design)
    return out


def preset_names() -> list[str]:
    root = resources.files("gfmsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_config_text(path: str) -> str:
    if path.startswith(PRESET_PREFIX):
        name = path[len(PRESET_PREFIX):]
        if name not in preset_names():
            raise ConfigError(f"no bundled preset {name!r} (have {', '.join(preset_names())})", "config")
        return (resources.files("gfmsim") / "presets" / f"{name}.json").read_text()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}", "config") from None


def load_config(path: str) -> Config:
    text = read_config_text(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "config") from None
    return parse_config(data)


# --- commands ------------------------------------------------------------


def _workers(n_jobs: int) -> int:
    raw = os.environ.get("GFMSIM_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ConfigError(f"expected a positive integer, got {raw!r}", "GFMSIM_THREADS") from None
    return max(1, min(cap, n_jobs))


def _metrics_row(sc: Scenario, tr, rocof_limit: float) -> dict:
    m = trace_metrics(sc, tr)
    row = rocof_report(sc.strategy, sc.mode, m, rocof_limit)
    row["steady_state"] = m.steady_state
    return row


def _run_row(args):
    sc, limit = args
    return _metrics_row(sc, run_scenario(sc), limit)


def _has_step(cfg: Config) -> bool:
    return any(e.kind in ("reference_step", "load_step") for e in cfg.events)


def write_plot_file(path: Path, header, columns, precision: int = 9) -> None:
    """Whitespace-separated columns with a ``#`` header (gnuplot ``using``)."""
    np.savetxt(path, np.column_stack(columns), fmt=f"%.{precision}g", header=" ".join(header))


def cmd_simulate(config_path: str, out_dir: str = ".") -> int:
    cfg = load_config(config_path)
    sc = cfg.scenario()
    tr = run_scenario(sc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / cfg.output.trace_path
    tr.to_csv(trace_path, cfg.output.precision)
    write_plot_file(trace_path.with_suffix(".dat"), ("t", "omega", "freq", "v", "p", "q", "theta"),
                    (tr.t, tr.omega, tr.freq, tr.v, tr.p, tr.q, tr.theta), cfg.output.precision)
    metrics = _metrics_row(sc, tr, cfg.rocof_limit) if _has_step(cfg) else {
        "strategy": sc.strategy, "mode": sc.mode, "steady_state": float(tr.p[-1] if sc.mode == GC else tr.freq[-1])}
    (out / cfg.output.metrics_path).write_text(json.dumps(metrics, indent=2) + "\n")
    print(f"wrote {trace_path} and {out / cfg.output.metrics_path}")
    return 0


def _format_table(rows, cols) -> str:
    head = ["strategy"] + cols + (["rocof_pass"] if "max_rocof_hz_s" in cols else [])
    lines = [head]
    for r in rows:
        cells = [r["strategy"]]
        for c in cols:
            v = r.get(c)
            cells.append("-" if v is None else f"{v:.4g}")
        if "max_rocof_hz_s" in cols:
            cells.append({True: "pass", False: "FAIL", None: "-"}[r.get("rocof_pass")])
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in lines)


def cmd_compare(config_path: str, strategies: str, metrics: Optional[str] = None, out_dir: str = ".") -> int:
    names = [s.strip() for s in strategies.split(",") if s.strip()]
    if not names:
        raise ConfigError("no strategies given", "--strategies")
    for s in names:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}", "--strategies")
    wanted = [m.strip() for m in (metrics or "rise,settle,overshoot").split(",") if m.strip()]
    for m in wanted:
        if m not in METRIC_COLUMNS:
            raise ConfigError(f"unknown metric {m!r}", "--metrics")
    cfg = load_config(config_path)
    if not _has_step(cfg):
        raise ConfigError("comparison needs a reference_step or load_step event", "scenario.plant.events")
    jobs = [(cfg.scenario(s), cfg.rocof_limit) for s in names]
    n = _workers(len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_run_row, jobs))
    else:
        rows = [_run_row(j) for j in jobs]
    cols = [METRIC_COLUMNS[m] for m in wanted]
    keep = ["strategy", "mode", *cols] + (["rocof_pass"] if "rocof" in wanted else [])
    rows = [{k: r[k] for k in keep} for r in rows]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / cfg.output.metrics_path).write_text(json.dumps(rows, indent=2) + "\n")
    print(_format_table(rows, cols))
    return 0


def _describe(name: str, g: TransferFunction) -> list[str]:
    poles, zeros = g.poles(), g.zeros()
    fmt = lambda zs: ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" if abs(z.imag) > 0 else f"{z.real:.6g}" for z in zs) or "none"
    return [f"{name}:", f"  poles: {fmt(poles)}", f"  zeros: {fmt(zeros)}", f"  dc gain: {g.dc_gain():.6g}"]


def _real_negative(roots) -> bool:
    return all(abs(r.imag) <= 1e-9 * max(1.0, abs(r)) and r.real < 0 for r in roots)


def cmd_analyze(config_path: str, out_dir: str = ".") -> int:
    cfg = load_config(config_path)
    lines = []
    if cfg.design is not None:
        dp = cfg.design
        gc = build_gc_design_model(dp, cfg.plant)
        is_ = build_is_design_model(dp)
        lines += _describe("grid-connected design model", gc)
        lines += _describe("islanded design model", is_)
        shape_ok = len(is_.poles()) == 3 and _real_negative(is_.poles()) and len(is_.zeros()) == 1 \
            and _real_negative(is_.zeros())
        lines.append(f"three negative real poles + one negative real zero: {'yes' if shape_ok else 'no'}")
        lines.append(f"zero at -1/t_z1 = {-1.0 / dp.t_z1:.6g}")
        lines.append(f"grid-connected dc gain: {gc.dc_gain():.3f}")
    else:
        sc = cfg.scenario()
        lf = linearize_scenario(sc)
        gc = build_gc_closed_loop(gc_loop_functions(lf, cfg.plant), cfg.plant)
        is_ = build_is_closed_loop(lf)
        lines += _describe(f"grid-connected closed loop ({sc.strategy})", gc)
        lines += _describe(f"islanded closed loop ({sc.strategy})", is_)
        lines.append(f"islanded poles all real and negative: {'yes' if _real_negative(is_.poles()) else 'no'}")
    print("\n".join(lines))

    w = np.logspace(-2, 3, 200) * 2 * math.pi
    s = 1j * w
    hg, hi = gc(s), is_(s)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (Path(cfg.output.metrics_path).stem + "_freqresp.dat")
    write_plot_file(
        path,
        ("freq_hz", "gc_mag_db", "gc_phase_deg", "is_mag_db", "is_phase_deg"),
        (w / (2 * math.pi), 20 * np.log10(np.abs(hg)), np.degrees(np.unwrap(np.angle(hg))),
         20 * np.log10(np.abs(hi)), np.degrees(np.unwrap(np.angle(hi)))),
        cfg.output.precision,
    )
    print(f"wrote {path}")
    return 0


# --- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfmsim", description="Grid-forming inverter control simulator.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log mode switches and solver details")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one scenario, write trace CSV and metrics JSON")
    p.add_argument("--config", required=True, help=f"config path or {PRESET_PREFIX}<name>")
    p.add_argument("--out-dir", default=".")
    p = sub.add_parser("compare", help="run the scenario once per strategy and tabulate metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--strategies", required=True, help="comma list from droop,vsg,udc")
    p.add_argument("--metrics", default=None, help="comma list from rise,settle,overshoot,rocof")
    p.add_argument("--out-dir", default=".")
    p = sub.add_parser("analyze", help="poles, zeros, DC gains and a frequency-response file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out_dir)
        if args.command == "compare":
            return cmd_compare(args.config, args.strategies, args.metrics, args.out_dir)
        return cmd_analyze(args.config, args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except GfmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"config error: cannot write output: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
