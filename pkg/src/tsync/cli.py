"""Command-line front end: run scenarios, analyze logs, replay captures.

Every command is deterministic given its inputs and seed; output files
are written atomically (temp file + rename).
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import logging
import os
import sys
import tempfile
import time

import click

from . import __version__, engine, metrics, net, nmea, pps, scenario
from .engine import LOOP_HEADER, LoopRow
from .timebase import NS_PER_S

log = logging.getLogger("tsync")

HARNESS_HEADER = "packet_id,send_true_ns,recv_a_stamp_ns,recv_b_stamp_ns,offset_ns"
NTP_HEADER = "t_s,offset_est_ns,delay_est_ns,truth_offset_ns"
TSF_HEADER = "t_s,max_spread_us"


class UnsortedLog(ValueError):
    pass


class FormatError(ValueError):
    pass


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tsync-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _loop_csv(rows: list[LoopRow]) -> str:
    return "\n".join([LOOP_HEADER, *(r.csv() for r in rows)]) + "\n"


def _dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


@click.group()
@click.version_option(__version__)
def main():
    """Simulate and analyze receiver-disciplined clock networks."""
    level = os.environ.get("TSYNC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _run_one(cfg: scenario.ScenarioConfig, out_dir: str) -> dict:
    """Run one scenario and write all its artifacts; returns the manifest."""
    t0 = time.monotonic()
    files: list[str] = []

    def emit(name: str, text: str) -> None:
        _write_atomic(os.path.join(out_dir, name), text)
        files.append(name)

    broadcast = [t for t in cfg.traffic if t.kind == "broadcast"]
    if broadcast:
        records, result = net.run_broadcast(cfg, broadcast[0].rate_hz,
                                            cfg.duration_s, broadcast[0])
    else:
        result = engine.run_scenario(cfg)
        records = []

    for name, rows in result.loop_rows.items():
        emit(f"loop_{name}.csv", _loop_csv(rows))
    for name, lines in result.nmea_logs.items():
        if lines:
            emit(f"nmea_{name}.log",
                 "".join(f"{rx} {line}\n" for rx, line in lines))
    for name, edges in result.pps_logs.items():
        if edges:
            emit(f"pps_{name}.log", "".join(f"{e}\n" for e in edges))

    summary = result.summary()
    if records:
        params = broadcast[0].params
        clients = list(params.get("clients") or [n.name for n in cfg.nodes[:2]])
        a, b = clients[0], clients[1]
        samples, skipped = net.pairwise_offsets(records, a, b)
        lines = [HARNESS_HEADER]
        for rec in records:
            if a in rec.arrivals and b in rec.arrivals:
                off = rec.arrivals[a][1] - rec.arrivals[b][1]
                lines.append(f"{rec.packet_id},{rec.send_true.total_ns},"
                             f"{rec.arrivals[a][1]},{rec.arrivals[b][1]},{off}")
        emit("harness.csv", "\n".join(lines) + "\n")
        box = metrics.boxplot([s.offset_ns for s in samples])
        summary["broadcast"] = {
            "pairs": [a, b], "n": len(samples), "skipped": skipped,
            "median_ns": box.median, "iqr_ns": box.q3 - box.q1,
            "max_abs_ns": max(abs(s.offset_ns) for s in samples),
        }

    for entry in (t for t in cfg.traffic if t.kind == "ntp"):
        rows = net.run_ntp(cfg, entry)
        lines = [NTP_HEADER]
        lines += [f"{t:.3f},{off},{dly},{tru}" for t, off, dly, tru in rows]
        emit("ntp.csv", "\n".join(lines) + "\n")
        ests = [abs(r[1]) for r in rows]
        summary["ntp"] = {"n": len(rows),
                          "mean_abs_offset_ns": sum(ests) / len(ests) if ests else 0.0}

    for entry in (t for t in cfg.traffic if t.kind == "tsf"):
        rows = net.run_tsf_traffic(cfg, entry)
        lines = [TSF_HEADER]
        lines += [f"{t:.4f},{s}" for t, s in rows]
        emit("tsf.csv", "\n".join(lines) + "\n")

    manifest = {
        "scenario": cfg.name,
        "seed": cfg.seed,
        "out_dir": os.path.abspath(out_dir),
        "files": files,
        "tool_version": __version__,
        "runtime_s": round(time.monotonic() - t0, 3),
        "summary": summary,
    }
    _write_atomic(os.path.join(out_dir, "manifest.json"), _dump_json(manifest))
    for node, warnings in result.warnings.items():
        for w in warnings:
            log.warning("%s: %s", node, w)
    return manifest


def _job(payload) -> dict:
    cfg_dict, out_dir = payload
    return _run_one(scenario.from_dict(cfg_dict), out_dir)


@main.command()
@click.argument("scenario_paths", nargs=-1,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--preset", "presets", multiple=True,
              help="Run a named preset (repeatable).")
@click.option("--seed", type=int, default=None,
              help="Override the scenario seed.")
@click.option("--out", "out_root", default="tsync-out", show_default=True,
              help="Output directory (one subdirectory per scenario).")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel worker slots for independent scenarios.")
def run(scenario_paths, presets, seed, out_root, jobs):
    """Run scenarios and write loop logs, event logs and a manifest."""
    configs: list[scenario.ScenarioConfig] = []
    try:
        for path in scenario_paths:
            configs.append(scenario.load(path))
        for name in presets:
            configs.append(scenario.preset(name))
    except scenario.UnknownPreset as exc:
        click.echo(f"unknown preset: {exc}", err=True)
        sys.exit(2)
    except scenario.SchemaError as exc:
        click.echo(f"scenario config error: {exc}", err=True)
        sys.exit(2)
    if not configs:
        click.echo("nothing to run: pass a scenario file or --preset", err=True)
        sys.exit(2)
    if seed is not None:
        configs = [dataclasses.replace(c, seed=seed) for c in configs]

    jobs_payload = []
    for cfg in configs:
        sub = os.path.join(out_root, cfg.name) if len(configs) > 1 else out_root
        jobs_payload.append((scenario.to_dict(cfg), sub))
    try:
        if jobs > 1 and len(jobs_payload) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
                manifests = list(ex.map(_job, jobs_payload))
        else:
            manifests = [_job(p) for p in jobs_payload]
    except Exception as exc:  # noqa: BLE001 - boundary to exit codes
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(1)
    for m in manifests:
        click.echo(os.path.join(m["out_dir"], "manifest.json"))


# ---------------------------------------------------------------------------
# analyze


def _read_offsets(path: str):
    """Offsets plus their elapsed times from any of the run CSV formats."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            if header == LOOP_HEADER:
                t_col, off_col = 0, 1
            elif header == HARNESS_HEADER:
                t_col, off_col = 1, 4
            elif header == NTP_HEADER:
                t_col, off_col = 0, 1
            else:
                raise FormatError(f"{path}: unrecognized header {header!r}")
            elapsed, offsets = [], []
            for raw in fh:
                if not raw.strip():
                    continue
                parts = raw.strip().split(",")
                t = float(parts[t_col])
                if header == HARNESS_HEADER:
                    t /= NS_PER_S
                elapsed.append(t)
                offsets.append(int(parts[off_col]))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return elapsed, offsets


@main.command()
@click.argument("logs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "fmt", type=click.Choice(["json", "csv"]),
              default="json", show_default=True)
@click.option("--out", "out_dir", default=None,
              help="Also write report and plot-ready CSVs here.")
def analyze(logs, fmt, out_dir):
    """Compute offset statistics, stability curve and box summary."""
    reports = {}
    try:
        for path in logs:
            elapsed, offsets = _read_offsets(path)
            tau0 = 1.0
            if len(elapsed) > 1:
                gaps = sorted(b - a for a, b in zip(elapsed, elapsed[1:]))
                mid = gaps[len(gaps) // 2]
                if mid > 0:
                    tau0 = mid
            rep = metrics.report(offsets, elapsed, tau0)
            reports[os.path.basename(path)] = (rep, elapsed, offsets)
    except FormatError as exc:
        click.echo(f"malformed log: {exc}", err=True)
        sys.exit(1)

    flat = {k: v[0] for k, v in reports.items()}
    payload = next(iter(flat.values())) if len(flat) == 1 else flat
    if fmt == "json":
        click.echo(_dump_json(payload), nl=False)
    else:
        lines = ["file,key,value"]
        for name, rep in flat.items():
            for key in ("n", "mean_ns", "std_ns", "max_ns", "min_ns",
                        "peak_to_peak_ns"):
                lines.append(f"{name},{key},{rep[key]}")
        click.echo("\n".join(lines))

    if out_dir:
        for name, (rep, elapsed, offsets) in reports.items():
            stem = os.path.splitext(name)[0]
            _write_atomic(os.path.join(out_dir, f"{stem}_report.json"),
                          _dump_json(rep))
            adev_rows = "\n".join(f"{t!r},{a!r}" for t, a in rep["adev"])
            _write_atomic(os.path.join(out_dir, f"{stem}_adev.csv"),
                          "tau_s,adev\n" + adev_rows + "\n")
            off_rows = "\n".join(f"{t:.3f},{o}" for t, o in zip(elapsed, offsets))
            _write_atomic(os.path.join(out_dir, f"{stem}_offsets.csv"),
                          "elapsed_s,offset_ns\n" + off_rows + "\n")


# ---------------------------------------------------------------------------
# replay


def _parse_nmea_events(path: str, assumed_latency_ms: float):
    """Sentence stream as (arrival_ns, named_second, fix) tuples."""
    events = []
    last_date = None
    last_rx = None
    for rx_ns, line in nmea.read_nmea_log(path):
        try:
            sentence = nmea.parse_sentence(line)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        if sentence.kind is nmea.SentenceKind.OTHER:
            continue
        fix = nmea.extract_fix(sentence, last_date)
        if fix.date is not None:
            last_date = fix.date
        if fix.date is None or fix.tod_ns is None:
            continue
        named_ns = nmea.absolute_second_ns(fix, engine.SIM_EPOCH_DATE)
        arrival = rx_ns if rx_ns is not None else named_ns + round(
            assumed_latency_ms * 1e6)
        if last_rx is not None and arrival < last_rx:
            raise UnsortedLog(f"{path}: arrivals not time-sorted")
        last_rx = arrival
        events.append((arrival, named_ns // NS_PER_S, fix))
    return events


@main.command()
@click.argument("nmea_log", type=click.Path(exists=True, dir_okay=False))
@click.option("--pps", "pps_log", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Edge capture log; omit for sentence-only replay.")
@click.option("--mode", type=click.Choice(["nmea", "pps", "nmea+pps"]),
              default=None, help="Servo mode (default: node spec, or log-driven).")
@click.option("--preset", "preset_name", default=None,
              help="Rebuild node physics from this preset.")
@click.option("--scenario", "scenario_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--node", "node_name", default=None,
              help="Node of the scenario to replay (default: first).")
@click.option("--seed", type=int, default=None)
@click.option("--assumed-latency-ms", type=float, default=80.0,
              show_default=True, help="Arrival model for unprefixed lines.")
@click.option("--out", "out_dir", default="tsync-replay", show_default=True)
def replay(nmea_log, pps_log, mode, preset_name, scenario_path, node_name,
           seed, assumed_latency_ms, out_dir):
    """Drive the discipline loop from recorded sentence/edge captures."""
    try:
        cfg, spec = _replay_target(preset_name, scenario_path, node_name,
                                   seed, mode, pps_log is not None)
        events = _parse_nmea_events(nmea_log, assumed_latency_ms)
        edges: list[int] = []
        if pps_log:
            edges = pps.read_pps_log(pps_log)
            if edges != sorted(edges):
                raise UnsortedLog(f"{pps_log}: edges not time-sorted")
        rows, warnings = engine.run_replay(cfg, spec, events, edges)
    except (UnsortedLog, FormatError, scenario.SchemaError,
            scenario.UnknownPreset) as exc:
        click.echo(f"replay error: {exc}", err=True)
        sys.exit(1)
    for w in warnings:
        log.warning("replay: %s", w)
    path = os.path.join(out_dir, "loop_replay.csv")
    _write_atomic(path, _loop_csv(rows))
    click.echo(path)


def _replay_target(preset_name, scenario_path, node_name, seed, mode,
                   have_pps):
    from .servo import ServoConfig, ServoMode

    if preset_name and scenario_path:
        raise FormatError("give either --preset or --scenario, not both")
    if preset_name:
        cfg = scenario.preset(preset_name)
    elif scenario_path:
        cfg = scenario.load(scenario_path)
    else:
        mode_val = mode or ("nmea+pps" if have_pps else "nmea")
        node = scenario.NodeSpec(name="replay",
                                 servo=ServoConfig(mode=ServoMode(mode_val)))
        cfg = scenario.ScenarioConfig(
            name="replay", duration_s=1.0,
            visibility=(scenario.VisibilitySeg(0.0, 1.0, 8, 6),),
            nodes=(node,))
        return cfg, node
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    spec = cfg.node(node_name) if node_name else cfg.nodes[0]
    if mode:
        from .servo import ServoMode
        spec = dataclasses.replace(
            spec, servo=dataclasses.replace(spec.servo, mode=ServoMode(mode)))
    return cfg, spec


@main.command()
@click.option("--show", "show_name", default=None,
              help="Print the full JSON of one preset.")
def presets(show_name):
    """List the built-in scenario presets."""
    if show_name:
        try:
            click.echo(scenario.dumps(scenario.preset(show_name)))
        except scenario.UnknownPreset as exc:
            click.echo(f"unknown preset: {exc}", err=True)
            sys.exit(2)
        return
    for name in scenario.PRESET_NAMES:
        click.echo(name)


if __name__ == "__main__":
    main()
