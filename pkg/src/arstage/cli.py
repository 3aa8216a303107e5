"""Operator entry points: serve, simulate, validate, diagnose, export-protocol-doc.

Exit codes: 0 success, 1 runtime failure, 2 validation failure (bad
config, bad project file, bad flags).  All commands are deterministic
given their inputs and seeds.
"""

from __future__ import annotations

import json
import math
import statistics
import sys
import threading
import time
from pathlib import Path

import click

from .config import ConfigError, load_config
from .geo import GeoPosition, LocalPose, LocalPosition, heading_to_orientation
from .registry import Project, ProjectFormatError
from .session import Session
from .simclient import (
    InProcessTransport,
    MonitoringObserver,
    ScenarioError,
    SimulatedFleet,
    WebSocketTransport,
    load_scenario,
    run_fleet_ws,
)
from .viewsim import (
    DeviceProfile,
    Issue,
    IssueKind,
    ViewThresholds,
    ViewsimError,
    load_walkable,
    render_expected_view,
    walkability_check,
)

EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

# built-in device profiles for offline validation
DEVICE_PROFILES: dict[str, DeviceProfile] = {
    "generic-phone": DeviceProfile(
        model="GenericPhone",
        os="any",
        screen_w_px=1080,
        screen_h_px=1920,
        camera_vfov_deg=60.0,
        camera_res_w_px=1920,
        camera_res_h_px=1080,
    ),
    "generic-tablet": DeviceProfile(
        model="GenericTablet",
        os="any",
        screen_w_px=1600,
        screen_h_px=2560,
        camera_vfov_deg=70.0,
        camera_res_w_px=2560,
        camera_res_h_px=1440,
    ),
}


def _fail(code: int, message: str) -> "click.exceptions.Exit":
    click.echo(f"error: {message}", err=True)
    return click.exceptions.Exit(code)


def _load_project(path: str) -> Project:
    try:
        return Project.load(path)
    except FileNotFoundError:
        raise _fail(EXIT_VALIDATION, f"project file not found: {path}")
    except ProjectFormatError as e:
        raise _fail(EXIT_VALIDATION, f"{path}: {e}")


@click.group()
def main() -> None:
    """Multi-user AR staging: server, simulated clients and project checks."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="JSON config file.")
@click.option("--project", "project_path", type=click.Path(), required=True, help="Project file.")
@click.option("--bind", help="Override bind address, host:port.")
@click.option("--static", "static_dir", type=click.Path(), help="Console bundle to serve at /.")
def serve(config_path, project_path, bind, static_dir) -> None:
    """Run the staging server until interrupted."""
    from . import service

    try:
        config = load_config(config_path, overrides={"bind_addr": bind})
    except ConfigError as e:
        raise _fail(EXIT_VALIDATION, str(e))
    project = _load_project(project_path)
    try:
        service.serve(config, project, project_path=project_path, static_dir=static_dir)
    except OSError as e:
        raise _fail(EXIT_RUNTIME, f"cannot bind {config.bind_addr}: {e}")


def _print_summary(summary: dict[str, dict], as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(summary, sort_keys=True, indent=2))
        return
    header = f"{'client':<16} {'frames':>6} {'mean pos err (m)':>18}  verdicts"
    click.echo(header)
    click.echo("-" * len(header))
    for client_id, s in summary.items():
        err = s["mean_positional_error_m"]
        err_text = f"{err:.6f}" if err is not None else "n/a"
        verdicts = " ".join(f"{k}:{v}" for k, v in sorted(s["verdicts"].items())) or "-"
        click.echo(f"{client_id:<16} {s['frames']:>6} {err_text:>18}  {verdicts}")


@main.command()
@click.option(
    "--scenario",
    "scenario_paths",
    type=click.Path(),
    multiple=True,
    required=True,
    help="Scenario JSON file; repeatable.",
)
@click.option("--server", "server_url", help="ws:// URL of a running server; default in-process.")
@click.option("--project", "project_path", type=click.Path(), help="Project for the in-process server.")
@click.option("--out", "log_path", type=click.Path(), help="Write replayable ldjson logs here.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable summary.")
def simulate(scenario_paths, server_url, project_path, log_path, as_json) -> None:
    """Run scripted client fleets and summarize the monitoring feed."""
    try:
        scenarios = [load_scenario(p) for p in scenario_paths]
    except ScenarioError as e:
        raise _fail(EXIT_VALIDATION, str(e))
    seen = set()
    for s in scenarios:
        if s.effective_client_id in seen:
            raise _fail(EXIT_VALIDATION, f"duplicate client id {s.effective_client_id!r}")
        seen.add(s.effective_client_id)

    try:
        if server_url:
            logs, summary = _simulate_ws(scenarios, server_url)
        else:
            logs, summary = _simulate_in_process(scenarios, project_path)
    except ScenarioError as e:
        raise _fail(EXIT_RUNTIME, str(e))

    if log_path:
        with open(log_path, "w", encoding="utf-8") as fh:
            for log in logs:
                fh.write(log.to_ldjson())
    _print_summary(summary, as_json)


def _simulate_in_process(scenarios, project_path):
    from .simclient import summarize_frames

    if project_path:
        project = _load_project(project_path)
    else:
        w = scenarios[0].path[0]
        project = Project("simulate", GeoPosition(w.lat, w.lon, w.height))
    session = Session(project)
    observer = MonitoringObserver(InProcessTransport(session))
    fleet = SimulatedFleet(session, scenarios, project=project)
    logs = fleet.run()
    observer.poll()
    return logs, summarize_frames(observer.frames)


def _simulate_ws(scenarios, server_url):
    from .simclient import summarize_frames

    observer = MonitoringObserver(WebSocketTransport(server_url))
    stop = threading.Event()

    def pump() -> None:
        while not stop.is_set():
            observer.poll()
            time.sleep(0.1)

    pump_thread = threading.Thread(target=pump, daemon=True)
    pump_thread.start()
    try:
        logs = run_fleet_ws(scenarios, server_url)
    finally:
        stop.set()
        pump_thread.join(timeout=2)
        time.sleep(0.2)  # let the final monitoring tick arrive
        observer.close()
    return logs, summarize_frames(observer.frames)


def _issue_row(issue: Issue) -> dict:
    return {
        "kind": issue.kind.value,
        "item_id": issue.item_id,
        "other_item_id": issue.other_item_id,
        "value": issue.value,
    }


@main.command()
@click.option("--project", "project_path", type=click.Path(), required=True)
@click.option("--walkable", "walkable_path", type=click.Path(), help="Walkable polygons JSON.")
@click.option(
    "--profile",
    "profile_name",
    default="generic-phone",
    show_default=True,
    type=click.Choice(sorted(DEVICE_PROFILES)),
)
@click.option("--grid-step", default=5.0, show_default=True, help="Viewpoint spacing, meters.")
@click.option("--margin", default=10.0, show_default=True, help="Grid margin around content, meters.")
@click.option("--json", "as_json", is_flag=True)
def validate(project_path, walkable_path, profile_name, grid_step, margin, as_json) -> None:
    """Offline presentation check from a grid of candidate viewpoints."""
    project = _load_project(project_path)
    profile = DEVICE_PROFILES[profile_name]
    walkable = None
    if walkable_path:
        try:
            walkable = load_walkable(walkable_path)
        except (OSError, ViewsimError) as e:
            raise _fail(EXIT_VALIDATION, f"{walkable_path}: {e}")

    items = project.render_items()
    issues: dict[tuple, Issue] = {}
    ever_visible: set[str] = set()
    if items:
        positions = [project.item_local_position(i) for i in items]
        xs = [p.x_m for p in positions]
        zs = [p.z_m for p in positions]
        x0, x1 = min(xs) - margin, max(xs) + margin
        z0, z1 = min(zs) - margin, max(zs) + margin
        nx = max(2, int(math.ceil((x1 - x0) / grid_step)) + 1)
        nz = max(2, int(math.ceil((z1 - z0) / grid_step)) + 1)
        for ix in range(nx):
            for iz in range(nz):
                x = x0 + ix * (x1 - x0) / (nx - 1)
                z = z0 + iz * (z1 - z0) / (nz - 1)
                if walkable and not any(p.covers(x, z) for p in walkable):
                    continue
                for heading in range(0, 360, 45):
                    camera = LocalPose(
                        LocalPosition(x, 1.6, z), heading_to_orientation(float(heading))
                    )
                    report = render_expected_view(camera, profile, project)
                    ever_visible.update(v.item_id for v in report.visible)
                    for issue in report.issues:
                        key = (issue.kind, issue.item_id, issue.other_item_id)
                        if key not in issues or (
                            issue.value is not None
                            and issues[key].value is not None
                            and issue.value > issues[key].value
                        ):
                            issues[key] = issue
    for item in items:
        if item.id not in ever_visible:
            issues[(IssueKind.NOT_VISIBLE, item.id, None)] = Issue(IssueKind.NOT_VISIBLE, item.id)
        off = walkability_check(item, project, walkable)
        if off is not None:
            issues[(off.kind, off.item_id, None)] = off

    rows = [_issue_row(i) for _, i in sorted(issues.items(), key=lambda kv: str(kv[0]))]
    if as_json:
        click.echo(json.dumps({"issues": rows}, sort_keys=True, indent=2))
    elif not rows:
        click.echo(f"ok: {len(items)} item(s), no issues")
    else:
        for r in rows:
            detail = " ".join(
                f"{k}={v}" for k, v in r.items() if k != "kind" and v is not None
            )
            click.echo(f"{r['kind']}: {detail}")
    if rows:
        raise click.exceptions.Exit(EXIT_RUNTIME)


@main.command()
@click.option("--log", "log_path", type=click.Path(), required=True, help="ldjson from simulate --out.")
@click.option("--json", "as_json", is_flag=True)
def diagnose(log_path, as_json) -> None:
    """Offline statistics over a recorded simulation log."""
    clients: dict[str, dict] = {}
    try:
        with open(log_path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise _fail(EXIT_VALIDATION, f"{log_path}:{n}: invalid JSON: {e.msg}")
                c = clients.setdefault(
                    rec["client_id"],
                    {"sent": {}, "received": {}, "pose_times_ms": [], "truth_ms": []},
                )
                if rec["kind"] == "sent":
                    c["sent"][rec["tag"]] = c["sent"].get(rec["tag"], 0) + 1
                    if rec["tag"] == "PoseUpdate":
                        c["pose_times_ms"].append(rec["t_ms"])
                elif rec["kind"] == "recv":
                    c["received"][rec["tag"]] = c["received"].get(rec["tag"], 0) + 1
                elif rec["kind"] == "truth":
                    c["truth_ms"].append(rec["t_ms"])
    except FileNotFoundError:
        raise _fail(EXIT_VALIDATION, f"log file not found: {log_path}")

    report = {}
    for client_id, c in sorted(clients.items()):
        times = sorted(c.pop("pose_times_ms"))
        truth_ms = c.pop("truth_ms")
        gaps = [b - a for a, b in zip(times, times[1:])]
        c["duration_s"] = (max(truth_ms) / 1000.0) if truth_ms else 0.0
        c["median_pose_interval_ms"] = statistics.median(gaps) if gaps else None
        c["max_pose_gap_ms"] = max(gaps) if gaps else None
        # a gap well beyond the cadence usually means an injected dropout
        c["suspected_dropouts"] = (
            sum(1 for g in gaps if c["median_pose_interval_ms"] and g > 3 * c["median_pose_interval_ms"])
        )
        report[client_id] = c
    if as_json:
        click.echo(json.dumps(report, sort_keys=True, indent=2))
    else:
        for client_id, c in report.items():
            click.echo(f"{client_id}:")
            click.echo(f"  duration_s: {c['duration_s']:.1f}")
            click.echo(f"  sent: {c['sent']}")
            click.echo(f"  received: {c['received']}")
            click.echo(f"  median_pose_interval_ms: {c['median_pose_interval_ms']}")
            click.echo(
                f"  max_pose_gap_ms: {c['max_pose_gap_ms']}"
                f" (suspected dropouts: {c['suspected_dropouts']})"
            )


def _describe_annotation(annotation) -> str:
    text = str(annotation)
    text = text.replace("typing.", "").replace("<class '", "").replace("'>", "")
    for prefix in ("arstage.protocol.", "arstage.viewsim.", "arstage.tracking."):
        text = text.replace(prefix, "")
    return text


@main.command("export-protocol-doc")
@click.option("--out", "out_path", type=click.Path(), default="docs/PROTOCOL.md", show_default=True)
def export_protocol_doc(out_path) -> None:
    """Regenerate the wire-protocol reference from the message models."""
    from . import protocol

    lines = [
        "# Wire protocol reference",
        "",
        "Generated by `arstage export-protocol-doc`; do not edit by hand.",
        "",
        f"Protocol version: {protocol.PROTOCOL_MAJOR}.{protocol.PROTOCOL_MINOR}",
        "",
        "## Framing",
        "",
        "Each message is one WebSocket text frame containing a length-prefixed,",
        "canonical UTF-8 JSON envelope:",
        "",
        "```",
        '<byte length of json>\\n{"t": "<tag>", "seq": <n>, "body": {...}}',
        "```",
        "",
        "- JSON is canonical: sorted keys, no whitespace, null fields omitted.",
        "  Re-encoding a decoded message is byte-stable.",
        "- `seq` increases per connection per direction; regressions and",
        "  duplicates are rejected with `SEQ_REGRESSION`, gaps are allowed.",
        "- Unknown body fields are tolerated (forward compatibility);",
        "  unknown tags are rejected with `BAD_MESSAGE`.",
        f"- Every message except a chunked ContentSnapshot stays under"
        f" {protocol.MAX_MESSAGE_BYTES // 1024} KiB.",
        "",
        "## Messages",
        "",
    ]
    for tag in sorted(protocol.MESSAGE_TYPES):
        model = protocol.MESSAGE_TYPES[tag]
        lines.append(f"### {tag}")
        lines.append("")
        doc = (model.__doc__ or "").strip()
        if doc:
            lines.append(doc)
            lines.append("")
        lines.append("| field | type | required | default |")
        lines.append("|---|---|---|---|")
        for name, f in model.model_fields.items():
            required = "yes" if f.is_required() else "no"
            default = "" if f.is_required() else repr(f.get_default(call_default_factory=True))
            lines.append(
                f"| `{name}` | `{_describe_annotation(f.annotation)}` | {required} | {default} |"
            )
        lines.append("")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
