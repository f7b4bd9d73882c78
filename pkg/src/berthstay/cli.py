"""Command-line pipeline: synth -> standardize -> clean -> stats/fit ->
predict -> evaluate -> report.

Every stochastic command takes an explicit --seed and is byte-for-byte
reproducible; artifacts are written atomically (temp file + rename).
Exit codes: 0 success, 1 data/model error, 2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .cleaning import CleaningPolicy, apply_cleaning, write_audit_csv
from .core import BerthstayError, CargoGroup, CargoRef, OperationMode, ShipmentType
from .engine import (
    JobSpec,
    Mode,
    ModelRegistry,
    NotApplicable,
    Scenario,
    fit_registry,
    predict_berth_stay,
)
from .evaluation import error_histogram, evaluate_scenarios
from .ingest import AliasMap, assemble_portcalls, data_statistics, load_alias_csv, parse_log, write_log
from .synth import ErrorRates, GroundTruth, default_ground_truth, generate_portcalls, inject_errors


class UsageError(Exception):
    """Bad invocation: wrong flags, missing files."""


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _require_file(path_text: str, flag: str) -> Path:
    path = Path(path_text)
    if not path.is_file():
        raise UsageError(f"{flag} file not found: {path}")
    return path


def _load_aliases(args: argparse.Namespace) -> Optional[AliasMap]:
    events = cargoes = None
    if getattr(args, "aliases_events", None):
        events = load_alias_csv(_require_file(args.aliases_events, "--aliases-events"))
    if getattr(args, "aliases_cargo", None):
        cargoes = load_alias_csv(_require_file(args.aliases_cargo, "--aliases-cargo"))
    if events is None and cargoes is None:
        return None
    return AliasMap.build(event_aliases=events, cargo_aliases=cargoes)


def _load_portcalls(path_text: str, flag: str, aliases: Optional[AliasMap]):
    records, report = parse_log(_require_file(path_text, flag), aliases)
    return assemble_portcalls(records), report


def _parse_mode(text: str) -> tuple[Mode, int]:
    if text == "expectation":
        return Mode.EXPECTATION, 0
    if text.startswith("mc:"):
        try:
            count = int(text[3:])
        except ValueError:
            raise UsageError(f"bad --mode {text!r}; expected expectation or mc:N")
        if count < 1:
            raise UsageError("Monte Carlo replicate count must be >= 1")
        return Mode.SAMPLE, count
    raise UsageError(f"bad --mode {text!r}; expected expectation or mc:N")


def _parse_scenarios(text: str) -> list[Scenario]:
    if text == "all":
        return list(Scenario)
    try:
        return [Scenario(int(text))]
    except ValueError:
        raise UsageError(f"bad --scenario {text!r}; expected 1, 2, 3, 4 or all")


def _csv_text(write) -> str:
    buffer = io.StringIO()
    write(buffer)
    return buffer.getvalue()


def _cmd_synth(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    if args.truth:
        truth = GroundTruth.from_json_dict(json.loads(_require_file(args.truth, "--truth").read_text()))
    else:
        truth = default_ground_truth()
    portcalls, truth_log = generate_portcalls(truth, args.count, rng)

    rates = ErrorRates(
        cargo_info=args.rate_cargo, port_event=args.rate_event, port_timing=args.rate_timing
    )
    manifest = []
    if rates.cargo_info or rates.port_event or rates.port_timing:
        portcalls, manifest = inject_errors(portcalls, rates, rng)

    _atomic_write(Path(args.out), _csv_text(lambda fh: write_log(portcalls, fh)))
    if args.truth_log:
        _atomic_write(Path(args.truth_log), _json_text([t.to_json_dict() for t in truth_log]))
    if args.manifest:
        _atomic_write(Path(args.manifest), _json_text([c.to_json_dict() for c in manifest]))
    print(f"synth: wrote {len(portcalls)} portcalls to {args.out} ({len(manifest)} corruptions)")
    return 0


def _cmd_standardize(args: argparse.Namespace) -> int:
    aliases = _load_aliases(args)
    portcalls, report = _load_portcalls(args.input, "--input", aliases)
    _atomic_write(Path(args.out), _csv_text(lambda fh: write_log(portcalls, fh)))
    if args.report:
        _atomic_write(Path(args.report), _json_text(report.to_json_dict()))
    print(f"standardize: {report.accepted} rows accepted, {report.rejected} rejected")
    return 0


def _cmd_clean(args: argparse.Namespace) -> int:
    aliases = _load_aliases(args)
    portcalls, _ = _load_portcalls(args.input, "--input", aliases)
    outcome = apply_cleaning(
        portcalls, CleaningPolicy(max_discard_fraction=args.max_discard)
    )
    _atomic_write(Path(args.out), _csv_text(lambda fh: write_log(outcome.cleaned, fh)))
    if args.audit:
        _atomic_write(Path(args.audit), _csv_text(lambda fh: write_audit_csv(outcome.audit, fh)))
    print(
        f"clean: {len(outcome.cleaned)} kept, {len(outcome.discarded)} discarded, "
        f"{len(outcome.audit)} repairs"
    )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    portcalls, _ = _load_portcalls(args.input, "--input", None)
    if args.terminal:
        portcalls = [pc for pc in portcalls if pc.terminal == args.terminal]
    stats = data_statistics(portcalls)
    _atomic_write(Path(args.out), _json_text([s.to_json_dict() for s in stats]))
    print(f"stats: {len(stats)} terminals summarized")
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    portcalls, _ = _load_portcalls(args.input, "--input", None)
    registry, report = fit_registry(
        portcalls,
        seed=args.seed,
        mdgs_samples=args.mdgs_s,
        max_iter=args.mdgs_iter,
    )
    _atomic_write(Path(args.out), _json_text(registry.to_json_dict()))
    if args.report:
        _atomic_write(Path(args.report), _json_text(report.to_json_dict()))
    fitted_blocks = sum(len(models) for models in registry.blocks.values())
    print(f"fit: {fitted_blocks} block models, {len(registry.catalog)} regression keys")
    return 0


def _job_from_file(path: Path, registry: ModelRegistry, terminal_override: Optional[str]) -> JobSpec:
    payload = json.loads(path.read_text())
    terminal = terminal_override or payload["terminal"]
    policy = {
        CargoGroup(g): bool(v) for g, v in payload.get("prewash_policy", {}).items()
    } or None
    cargoes = tuple(
        (CargoRef.of(item["name"]), float(item["size_mt"])) for item in payload["cargoes"]
    )
    kwargs = dict(
        terminal=terminal,
        shipment=ShipmentType(payload["shipment"]),
        cargoes=cargoes,
        operation_mode=OperationMode(payload["operation_mode"]),
        needs_shifting=bool(payload.get("needs_shifting", False)),
        available_blocks=registry.available_blocks(terminal),
    )
    if policy:
        kwargs["prewash_policy"] = policy
    return JobSpec(**kwargs)


def _cmd_predict(args: argparse.Namespace) -> int:
    registry = ModelRegistry.load(_require_file(args.models, "--models"))
    job = _job_from_file(_require_file(args.job, "--job"), registry, args.terminal)
    mode, mc_count = _parse_mode(args.mode)
    if mode is Mode.SAMPLE and args.seed is None:
        raise UsageError("--mode mc:N needs --seed")
    rng = np.random.default_rng(args.seed) if args.seed is not None else None

    scenarios = _parse_scenarios(args.scenario)
    outputs = []
    for scenario in scenarios:
        try:
            prediction = predict_berth_stay(
                registry, job, scenario, mode=mode, mc_count=mc_count, rng=rng
            )
        except NotApplicable as exc:
            if len(scenarios) == 1:
                raise
            outputs.append({"scenario": scenario.label, "not_applicable": str(exc)})
            continue
        outputs.append(prediction.to_json_dict())

    payload = outputs[0] if len(outputs) == 1 else {"predictions": outputs}
    _atomic_write(Path(args.out), _json_text(payload))
    print(f"predict: wrote {args.out}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    registry = ModelRegistry.load(_require_file(args.models, "--models"))
    portcalls, _ = _load_portcalls(args.data, "--data", None)
    report = evaluate_scenarios(registry, portcalls, scenarios=_parse_scenarios(args.scenario))
    _atomic_write(Path(args.out), _csv_text(report.to_csv))
    if args.json:
        _atomic_write(Path(args.json), _json_text(report.to_json_dict()))
    print(f"evaluate: {len(report.cells)} cells to {args.out}")
    return 0


def _safe_name(text: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in text)


def _cmd_report(args: argparse.Namespace) -> int:
    registry = ModelRegistry.load(_require_file(args.models, "--models"))
    portcalls, _ = _load_portcalls(args.data, "--data", None)
    report = evaluate_scenarios(registry, portcalls)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    _atomic_write(out_dir / "evaluation.csv", _csv_text(report.to_csv))
    _atomic_write(out_dir / "evaluation.json", _json_text(report.to_json_dict()))

    pooled: dict[tuple[Scenario, str], list[float]] = {}
    for cell in report.cells:
        pooled.setdefault((cell.scenario, cell.terminal), []).extend(cell.errors)
    written = 2
    for (scenario, terminal), errors in sorted(
        pooled.items(), key=lambda kv: (kv[0][0].value, kv[0][1])
    ):
        if not errors:
            continue
        rows = error_histogram(errors, bin_width=0.5)
        lines = ["bin_left,bin_right,count"]
        lines += [f"{left},{right},{count}" for left, right, count in rows]
        _atomic_write(
            out_dir / f"hist_{scenario.label}_{_safe_name(terminal)}.csv",
            "\n".join(lines) + "\n",
        )
        written += 1
    print(f"report: wrote {written} files under {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="berthstay", description="Berth-stay prediction pipeline for tanker terminals"
    )
    parser.add_argument("--config", help="JSON file whose entries override parsed flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic terminal event log")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth JSON (defaults to the reference terminal)")
    p.add_argument("--truth-log", help="write realized block durations here (JSON)")
    p.add_argument("--manifest", help="write the corruption manifest here (JSON)")
    p.add_argument("--rate-cargo", type=float, default=0.0)
    p.add_argument("--rate-event", type=float, default=0.0)
    p.add_argument("--rate-timing", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("standardize", help="parse a raw log into the standard CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--aliases-events")
    p.add_argument("--aliases-cargo")
    p.add_argument("--report", help="write the ingest report here (JSON)")
    p.set_defaults(func=_cmd_standardize)

    p = sub.add_parser("clean", help="repair or discard inconsistent portcalls")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="write the repair audit here (CSV)")
    p.add_argument("--max-discard", type=float, default=1.0)
    p.add_argument("--aliases-events")
    p.add_argument("--aliases-cargo")
    p.set_defaults(func=_cmd_clean)

    p = sub.add_parser("stats", help="per-terminal data statistics")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--terminal")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("fit", help="fit the regression catalog and block models")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mdgs-s", type=int, default=1000)
    p.add_argument("--mdgs-iter", type=int, default=500)
    p.add_argument("--report", help="write the fit report here (JSON)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="predict one job's berth stay")
    p.add_argument("--models", required=True)
    p.add_argument("--job", required=True, help="job spec JSON")
    p.add_argument("--scenario", default="all")
    p.add_argument("--mode", default="expectation")
    p.add_argument("--seed", type=int)
    p.add_argument("--terminal", help="override the job's terminal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against held-out portcalls")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--scenario", default="all")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="evaluation CSV plus error-histogram data files")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"usage error: cannot read --config: {exc}", file=sys.stderr)
            return 2
        for key, value in overrides.items():
            setattr(args, key.replace("-", "_"), value)

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except BerthstayError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
