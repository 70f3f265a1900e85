"""Command line interface.

Subcommands: analytic | run | sweep | calibrate-cip | grape.  Configuration
comes from JSON files; tabular results are written as CSV (atomically, via
a temporary file and rename), summaries as JSON.  Exit codes: 0 success,
1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .device import DeviceGraph, default_device, load_device
from .dynamics import IntegratorConfig
from .errors import ConfigError, EpsimError
from .gates import CipParams, calibrate_echo
from .grape import ControlProblem, PulseSchedule, optimize
from .protocol import (
    ProtocolConfig,
    ProtocolTrace,
    StageDurations,
    Strategy,
    run_ep_logical,
    run_ep_physical,
    sweep_lifespan,
)
from .purify import f_limit, pump_curve, recurrence_werner, werner_ratio

SCHEMA_VERSIONS = (1,)

RUN_CSV_COLUMNS = ("round", "fidelity", "p_success_cum", "p_parity_discard", "negativity")


@dataclass(frozen=True)
class ExperimentFile:
    """Parsed experiment configuration: exactly one subcommand payload."""

    schema: int
    device_path: str | None
    payload: dict
    out: str | None


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config file {p}: invalid JSON at line {exc.lineno}, column {exc.colno}"
        ) from exc


def parse_experiment(path: str) -> ExperimentFile:
    payload = _load_json(path)
    if not isinstance(payload, dict):
        raise ConfigError("experiment file must contain a JSON object")
    schema = int(payload.pop("schema", 1))
    if schema not in SCHEMA_VERSIONS:
        raise ConfigError(f"unrecognized schema version {schema}")
    device_path = payload.pop("device_file", None)
    out = payload.pop("out", None)
    return ExperimentFile(schema, device_path, payload, out)


def _atomic_write(path: str, text: str):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=target.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(out: str | None, text: str):
    if out is None:
        sys.stdout.write(text)
    else:
        _atomic_write(out, text)


def _resolve_device(exp: ExperimentFile, override: str | None) -> DeviceGraph:
    path = override or exp.device_path
    return load_device(path) if path else default_device()


def _csv_text(header, rows, footer_comments=()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    for line in footer_comments:
        buf.write(f"# {line}\n")
    return buf.getvalue()


def trace_to_csv(trace: ProtocolTrace) -> str:
    rows = [
        (r.round, r.fidelity, r.p_success_cum, r.p_parity_discard, r.negativity)
        for r in trace.records
    ]
    footer = [f"meta {json.dumps(trace.meta, sort_keys=True)}"]
    if trace.aborted:
        footer.append("aborted true")
    return _csv_text(RUN_CSV_COLUMNS, rows, footer)


def trace_from_csv(text: str) -> list[dict]:
    """Parse a run CSV back into per-round dictionaries (exact floats)."""
    rows = []
    for line in text.splitlines():
        if line.startswith("#") or line.startswith(RUN_CSV_COLUMNS[0]):
            continue
        parts = line.split(",")
        rows.append(
            {
                "round": int(parts[0]),
                "fidelity": float(parts[1]),
                "p_success_cum": float(parts[2]),
                "p_parity_discard": float(parts[3]),
                "negativity": float(parts[4]),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# subcommands


def _cmd_analytic(args, device) -> int:
    did_something = False
    if args.flimit is not None:
        print(f"{f_limit(args.flimit):.4f}")
        did_something = True
    if args.recurrence is not None:
        fa, fb = args.recurrence
        f_new, p = recurrence_werner(fa, fb)
        print(f"{f_new!r} {p!r}")
        did_something = True
    if args.ratio is not None:
        print(f"{werner_ratio(args.ratio):.4f}")
        did_something = True
    if args.product is not None:
        xs = [float(x) for x in args.product.split(",")]
        out = 1.0
        for x in xs:
            out *= x
        print(f"{out:.4f}")
        did_something = True
    if args.curves is not None:
        rows = []
        for fb in np.linspace(0.5, 1.0, 101):
            rows.append(("flimit", repr(float(fb)), repr(f_limit(float(fb)))))
        fb = args.curves
        for f0 in np.linspace(0.3, 0.99, 70):
            f_new, p = recurrence_werner(float(f0), fb)
            rows.append((f"recurrence@{fb}", repr(float(f0)), repr(f_new)))
        for i, (f, p) in enumerate(pump_curve(0.7, fb, 20)):
            rows.append((f"pump@0.7,{fb}", repr(float(i)), repr(f)))
        _emit(args.out, _csv_text(("curve", "x", "y"), rows))
        did_something = True
    if not did_something:
        raise ConfigError("analytic: nothing to do (pass --flimit/--recurrence/... )")
    return 0


def _protocol_config(payload: dict, device: DeviceGraph, seed_override) -> ProtocolConfig:
    strat = payload.get("strategy", {})
    integ = payload.get("integrator", {})
    reent = payload.get("reentangle", {})
    dur = payload.get("durations", {})
    cip = payload.get("cip", {})
    known = {
        "encoding", "tau_us", "tau1_us", "tau2_us", "tau2_grid_us", "rounds",
        "strategy", "reentangle", "integrator", "seed", "durations", "cip",
        "decoherence", "twirl", "ed_schedule", "keep", "sampled_measurements",
        "negativity_basis", "strategies",
    }
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(
        encoding=payload.get("encoding", "fock"),
        tau_us=float(payload.get("tau_us", 0.0)),
        tau1_us=float(payload.get("tau1_us", 0.0)),
        tau2_us=float(payload.get("tau2_us", 0.0)),
        rounds=int(payload.get("rounds", 3)),
        strategy=Strategy(bool(strat.get("ep", True)), bool(strat.get("ed", False))),
        reentangle_model=reent.get("model", "parametric"),
        reentangle_fidelity=float(reent.get("fidelity", 0.923)),
        device=device,
        seed=int(seed_override if seed_override is not None else payload.get("seed", 0)),
        integrator=IntegratorConfig(
            dt_ns=float(integ.get("dt_ns", 0.5)),
            dt_idle_ns=float(integ.get("dt_idle_ns", 10.0)),
            method=integ.get("method", "fixed"),
            max_step_error=float(integ.get("max_step_error", 1e-9)),
        ),
        decoherence=bool(payload.get("decoherence", True)),
        twirl=payload.get("twirl"),
        ed_schedule=payload.get("ed_schedule", "per_round"),
        keep=payload.get("keep", "gg"),
        sampled_measurements=bool(payload.get("sampled_measurements", False)),
        durations=StageDurations(
            encode_us=float(dur.get("encode_us", 1.0)),
            local_ops_us=float(dur.get("local_ops_us", 1.0)),
            measure_us=float(dur.get("measure_us", 1.0)),
            reentangle_us=float(dur.get("reentangle_us", 3.0)),
        ),
        negativity_basis=payload.get("negativity_basis", "cavity"),
    )
    if cip:
        kwargs["cip"] = CipParams(
            delta_mhz=float(cip.get("delta_mhz", 10.0)),
            amp_mhz=float(cip.get("amp_mhz", 23.6)),
            tau_ns=float(cip.get("tau_ns", 1500.0)),
            bus_mode=cip.get("bus_mode", "S2"),
        )
    if "reentangle" in payload and "model" not in reent and "fidelity" not in reent:
        raise ConfigError("reentangle block must define model and/or fidelity")
    try:
        return ProtocolConfig(**kwargs)
    except EpsimError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad protocol config: {exc}") from exc


def _cmd_run(args, device) -> int:
    exp = parse_experiment(args.config)
    device = _resolve_device(exp, args.device)
    cfg = _protocol_config(exp.payload, device, args.seed)
    if cfg.encoding == "fock":
        trace = run_ep_physical(cfg)
    else:
        trace = run_ep_logical(cfg)
    _emit(args.out or exp.out, trace_to_csv(trace))
    return 0


def _cmd_sweep(args, device) -> int:
    exp = parse_experiment(args.config)
    device = _resolve_device(exp, args.device)
    payload = dict(exp.payload)
    grid = payload.pop("tau2_grid_us", None)
    if not grid:
        raise ConfigError("sweep config needs a nonempty tau2_grid_us")
    names = payload.pop("strategies", ["none", "ep", "ed", "ed+ep"])
    name_map = {
        "none": Strategy(False, False),
        "ep": Strategy(ep=True),
        "ed": Strategy(ed=True),
        "ed+ep": Strategy(ep=True, ed=True),
    }
    try:
        strategies = tuple(name_map[n] for n in names)
    except KeyError as exc:
        raise ConfigError(f"unknown strategy name {exc}") from exc
    payload.setdefault("encoding", "binomial")
    cfg = _protocol_config(payload, device, args.seed)
    result = sweep_lifespan(cfg, grid, strategies)
    rows = [
        (r["tau2_us"], r["strategy"], r["negativity"], result.fits[r["strategy"]][0])
        for r in result.rows
    ]
    footer = [
        f"lifespan_us {name} {repr(t)} {flag}" for name, (t, flag) in result.fits.items()
    ]
    _emit(args.out or exp.out, _csv_text(("tau2_us", "strategy", "negativity", "fit_T_us"), rows, footer))
    return 0


def _cmd_calibrate(args, device) -> int:
    exp = parse_experiment(args.config)
    device = _resolve_device(exp, args.device)
    p = exp.payload
    try:
        delta = float(p["delta_mhz"])
        tau_grid = [float(t) for t in p["tau_grid_ns"]]
        amp_grid = [float(a) for a in p["amp_grid_mhz"]]
    except KeyError as exc:
        raise ConfigError(f"calibrate-cip config missing key {exc}") from exc
    integ = p.get("integrator", {})
    cfg = IntegratorConfig(
        dt_ns=float(integ.get("dt_ns", 0.5)), method=integ.get("method", "fixed")
    )
    result = calibrate_echo(
        device, delta, tau_grid, amp_grid, cfg, threads=max(1, args.threads)
    )
    rows = [tuple(float(x) for x in row) for row in result.surface]
    footer = [
        f"optimum tau_ns={result.tau_ns!r} amp_mhz={result.amp_mhz!r} "
        f"p_gg={result.p_gg!r} residual={result.residual_photons!r}",
        f"phases {result.phases[0]!r} {result.phases[1]!r} {result.phases[2]!r}",
    ]
    _emit(
        args.out or exp.out,
        _csv_text(("tau_ns", "amp_MHz", "p_gg", "residual_photons"), rows, footer),
    )
    return 0


def _cmd_grape(args, device) -> int:
    exp = parse_experiment(args.config)
    p = exp.payload
    try:
        problem = ControlProblem(
            drift_mhz=np.array(p["drift_mhz"], dtype=complex),
            controls_mhz=tuple(np.array(c, dtype=complex) for c in p["controls_mhz"]),
            initial_states=tuple(np.array(v, dtype=complex) for v in p["initial_states"]),
            target_states=tuple(np.array(v, dtype=complex) for v in p["target_states"]),
            n_steps=int(p.get("n_steps", 100)),
            dt_ns=float(p.get("dt_ns", 10.0)),
            amp_bound_mhz=float(p.get("amp_bound_mhz", 10.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"grape config missing key {exc}") from exc
    seed = args.seed if args.seed is not None else int(p.get("seed", 0))
    result = optimize(
        problem,
        init=p.get("init", "random"),
        iterations=int(p.get("iterations", 200)),
        seed=seed,
    )
    header = ("t_ns",) + tuple(f"u{j}_mhz" for j in range(problem.n_controls))
    rows = []
    for k in range(problem.n_steps):
        rows.append(
            (k * problem.dt_ns,) + tuple(result.schedule.amplitudes_mhz[:, k])
        )
    footer = [f"fidelity {result.fidelity!r} converged={result.converged} {result.message}"]
    _emit(args.out or exp.out, _csv_text(header, rows, footer))
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epsim",
        description="entanglement pumping simulator for bosonic logical qubits",
    )
    parser.add_argument("--device", help="device JSON file (default: shipped device)")
    parser.add_argument("--out", help="output path (default: stdout or config 'out')")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("EPSIM_THREADS", "1")),
        help="worker threads for grids (default: EPSIM_THREADS or 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analytic", help="purification algebra curves and numbers")
    p_an.add_argument("--flimit", type=float, help="print the pumping fidelity limit")
    p_an.add_argument("--recurrence", type=float, nargs=2, metavar=("FA", "FB"))
    p_an.add_argument("--ratio", type=float, help="print the depolarizing ratio of F")
    p_an.add_argument("--product", help="comma-separated ratios to multiply")
    p_an.add_argument("--curves", type=float, metavar="FB", help="emit CSV curves for FB")

    for name in ("run", "sweep", "calibrate-cip", "grape"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        device = load_device(args.device) if args.device else None
        handlers = {
            "analytic": _cmd_analytic,
            "run": _cmd_run,
            "sweep": _cmd_sweep,
            "calibrate-cip": _cmd_calibrate,
            "grape": _cmd_grape,
        }
        return handlers[args.command](args, device)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EpsimError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
