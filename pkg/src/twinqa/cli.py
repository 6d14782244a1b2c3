"""Operator entry point: simulate a project, replay events to a report,
serve the HTTP API, or run maturity computations from CSV files.

Exit codes: 0 success (and, for `run`, a clean project), 1 when any element
ends in Hold or NonConformance (CI-friendly), 2 on bad flags or unreadable
inputs.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from dataclasses import replace
from pathlib import Path

from . import engine
from .domain import EventType, TwinQaError
from .ingest import (
    IngestConfig,
    RawRecord,
    ingest_stream,
    map_to_element,
    read_jsonl,
    validate_record,
    write_quarantine,
)
from .maturity import (
    MaturityConfig,
    calibrate,
    equivalent_age,
    nurse_saul_maturity,
    predict_strength,
    read_calibration_csv,
    read_temperature_csv,
)
from .rules import parse_ruleset
from .simulator import (
    DefectKind,
    DefectSpec,
    SimConfig,
    load_project,
    write_scenario,
)


def _parse_defects(spec: str) -> tuple[DefectSpec, ...]:
    from .domain import ElementKind

    defects = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            kind_name, stage_name = part.split(":", 1)
        else:
            kind_name, stage_name = part, "DeckPour"
        defects.append(DefectSpec(DefectKind(kind_name), ElementKind(stage_name)))
    return tuple(defects)


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        defects = _parse_defects(args.defects) if args.defects else ()
        cfg = SimConfig(seed=args.seed, n_spans=args.spans, defects=defects)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = write_scenario(args.out, cfg)
    for name, path in sorted(paths.items()):
        print(f"wrote {name}: {path}")
    return 0


def _load_decision_script(path: Path) -> list[tuple[str, dict]]:
    """Script lines are event bodies plus an `after_event_id` anchor."""
    anchored: list[tuple[str, dict]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            body = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TwinQaError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if "after_event_id" not in body:
            raise TwinQaError(f"{path}:{lineno}: missing after_event_id anchor")
        anchor = str(body.pop("after_event_id"))
        anchored.append((anchor, body))
    return anchored


def cmd_run(args: argparse.Namespace) -> int:
    try:
        graph = load_project(Path(args.project))
        ruleset = parse_ruleset(json.loads(Path(args.ruleset).read_text(encoding="utf-8")))
        raws = read_jsonl(Path(args.events))
    except (OSError, json.JSONDecodeError, TwinQaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    events, report = ingest_stream(raws, graph)
    if args.quarantine:
        write_quarantine(Path(args.quarantine), report.quarantined)

    decisions_by_anchor: dict[str, list[dict]] = {}
    if args.decisions:
        try:
            anchored = _load_decision_script(Path(args.decisions))
        except (OSError, TwinQaError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        known = {e.event_id for e in events}
        for anchor, body in anchored:
            if anchor not in known:
                print(f"error: decision anchor {anchor!r} not in event stream", file=sys.stderr)
                return 2
            decisions_by_anchor.setdefault(anchor, []).append(body)

    state = engine.initial_state(graph, ruleset)
    cfg = IngestConfig()
    try:
        for event in events:
            state = engine.apply_event(state, event)
            for body in decisions_by_anchor.get(event.event_id, ()):
                decision = validate_record(
                    RawRecord(source=str(args.decisions), body=body, received_at=event.recorded_at),
                    config=cfg,
                )
                if decision.event_type is not EventType.HUMAN_DECISION:
                    print("error: decision script may contain only HumanDecision events", file=sys.stderr)
                    return 2
                mapping = map_to_element(decision.subject, graph)
                state = engine.apply_event(state, replace(decision, element_id=mapping.element))
    except TwinQaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    doc = engine.state_export(state)
    doc["ingest_report"] = report.to_json()
    doc["state_hash"] = engine.state_hash(state)
    text = json.dumps(doc, indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
        print(f"wrote report: {args.report}")
    else:
        print(text)

    flagged = [
        eid
        for eid, entry in doc["elements"].items()
        if entry["state"] in (engine.QaState.HOLD.value, engine.QaState.NON_CONFORMANCE.value)
    ]
    if flagged:
        print(f"flagged elements: {', '.join(sorted(flagged))}", file=sys.stderr)
        return 1
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import build_app

    host, _, port_text = args.addr.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        print(f"error: invalid address {args.addr!r}", file=sys.stderr)
        return 2
    host = host or "127.0.0.1"

    # Pre-flight bind so an occupied address is a clean exit 2.
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        print(f"error: cannot bind {args.addr}: {exc}", file=sys.stderr)
        return 2
    finally:
        probe.close()

    try:
        app = build_app(Path(args.data_dir), Path(args.tokens) if args.tokens else None)
    except (OSError, TwinQaError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def cmd_maturity(args: argparse.Namespace) -> int:
    cfg = MaturityConfig(
        datum_temp_c=args.datum, ref_temp_c=args.ref, max_gap_h=args.max_gap_h
    )
    try:
        history = read_temperature_csv(Path(args.history))
        out: dict = {
            "samples": len(history.samples),
            "maturity_degc_h": nurse_saul_maturity(history, cfg).magnitude,
            "equivalent_age_h": equivalent_age(history, cfg).magnitude,
        }
        if args.calibration:
            pairs = read_calibration_csv(Path(args.calibration))
            model = calibrate(pairs)
            prediction = predict_strength(model, out["maturity_degc_h"])
            out["model"] = {
                "su_mpa": model.su_mpa,
                "k_rate": model.k_rate,
                "m0": model.m0,
                "residual_se_mpa": model.residual_se_mpa,
            }
            out["predicted_strength_mpa"] = {
                "mean": prediction.mean_mpa,
                "lower": prediction.lower_mpa,
                "upper": prediction.upper_mpa,
            }
    except (OSError, ValueError, TwinQaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic project scenario")
    sim.add_argument("--seed", type=int, default=42)
    sim.add_argument("--spans", type=int, default=1)
    sim.add_argument("--defects", default="", help="comma list of Kind:Stage, e.g. WeakBatch:DeckPour")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    run = sub.add_parser("run", help="replay events and write a state report")
    run.add_argument("--project", required=True)
    run.add_argument("--ruleset", required=True)
    run.add_argument("--events", required=True)
    run.add_argument("--decisions", help="JSONL decision script with after_event_id anchors")
    run.add_argument("--report", help="report output path (stdout when omitted)")
    run.add_argument("--quarantine", help="quarantine sidecar path")
    run.set_defaults(func=cmd_run)

    serve = sub.add_parser("serve", help="serve the HTTP API")
    serve.add_argument("--addr", default=None)
    serve.add_argument("--data-dir", default=None)
    serve.add_argument("--tokens", default=None)
    serve.set_defaults(func=cmd_serve)

    mat = sub.add_parser("maturity", help="compute maturity metrics from CSV inputs")
    mat.add_argument("--history", required=True, help="timestamp,temp_c CSV")
    mat.add_argument("--calibration", help="maturity_degc_h,strength_mpa CSV")
    mat.add_argument("--datum", type=float, default=0.0)
    mat.add_argument("--ref", type=float, default=23.0)
    mat.add_argument("--max-gap-h", type=float, default=2.0, dest="max_gap_h")
    mat.set_defaults(func=cmd_maturity)

    return parser


def main(argv: list[str] | None = None) -> int:
    import os

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "simulate" and args.spans < 1:
        print("error: --spans must be >= 1", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 2
    if args.command == "serve":
        args.addr = args.addr or os.environ.get("TWINQA_ADDR", "127.0.0.1:8787")
        args.data_dir = args.data_dir or os.environ.get("TWINQA_DATA_DIR", ".")
        args.tokens = args.tokens or os.environ.get("TWINQA_TOKENS")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
