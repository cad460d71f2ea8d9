"""``pollwait`` command line: analytic, simulate, compare and sweep modes.

Exit codes: 0 success/PASS, 2 usage or config error, 3 unsupported
combination, 4 statistical FAIL.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from typing import Any, Sequence

from . import analytic, sim
from .model import ConfigError, SystemConfig, ValidationError, load_config, validate

EXIT_OK, EXIT_USAGE, EXIT_UNSUPPORTED, EXIT_FAIL = 0, 2, 3, 4
REL_TOL = 0.02
SWEEP_AXES = ("alpha", "rho_scale", "n_queues")


class UsageError(Exception):
    pass


def _clean(obj: Any) -> Any:
    # JSON has no NaN/inf; emit null instead.
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    if v is None:
        return ""
    return str(v)


def _table(rows: Sequence[tuple[str, Any]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {_fmt(v)}\n" for k, v in rows)


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _flat(d: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    out: list[tuple[str, Any]] = []
    for k, v in d.items():
        if isinstance(v, dict):
            out.extend(_flat(v, f"{prefix}{k}."))
        elif isinstance(v, (list, tuple)):
            out.append((prefix + k, " ".join(_fmt(x) for x in v)))
        else:
            out.append((prefix + k, v))
    return out


def _render(payload: dict[str, Any], fmt: str) -> str:
    if fmt == "json":
        return dumps(payload)
    rows = _flat(payload)
    if fmt == "csv":
        return _csv([k for k, _ in rows], [[v for _, v in rows]])
    return _table(rows)


# -- commands ---------------------------------------------------------------


def analytic_payload(config: SystemConfig, allow_unequal: bool, closed_form: bool) -> dict[str, Any]:
    report = analytic.analyze(config, allow_unequal_means=allow_unequal)
    payload = report.to_dict()
    try:
        closed = analytic.moving_term_closed(config, report.profile)
    except analytic.PolicyMismatch:
        if closed_form:
            raise
        closed = None
    if closed is not None:
        if abs(closed - report.big_pi) > 1e-10:
            raise analytic.PolicyMismatch(f"closed form {closed!r} disagrees with general sum {report.big_pi!r}")
        payload["pi_closed_form"] = closed
    if allow_unequal:
        payload["unequal_means_bypassed"] = True
    return payload


def cmd_analytic(args: argparse.Namespace, config: SystemConfig) -> tuple[str, int]:
    payload = analytic_payload(config, args.allow_unequal_means, args.closed_form)
    return _render(payload, args.format or "table"), EXIT_OK


def _run_reps(args, config, reps: int) -> list[sim.SimReport]:
    reports = sim.replicate(config, args.seed, reps, args.jobs, args.warmup,
                            allow_unequal_means=args.allow_unequal_means)
    if args.trace:
        sim.write_trace(reports[0], args.trace)
    return reports


def cmd_simulate(args: argparse.Namespace, config: SystemConfig) -> tuple[str, int]:
    reps = args.reps or 1
    reports = _run_reps(args, config, reps)
    if reps == 1:
        payload = reports[0].to_dict()
    else:
        pooled = sim.pool(reports)
        payload = {
            "replications": [r.to_dict() for r in reports],
            "pooled": {
                "mean_w": pooled.w.point, "mean_w_hw": pooled.w.half_width_95,
                "mean_m": pooled.m.point, "mean_m_hw": pooled.m.half_width_95,
                "mean_p": pooled.p.point, "mean_p_hw": pooled.p.half_width_95,
            },
        }
    if args.allow_unequal_means:
        payload["unequal_means_bypassed"] = True
    return _render(payload, args.format or "table"), EXIT_OK


def compare_payload(config: SystemConfig, reports: Sequence[sim.SimReport], *,
                    allow_unequal: bool = False, rel_tol: float = REL_TOL) -> dict[str, Any]:
    """Analytic-versus-simulation verdict plus the decomposition diagnostics."""
    a = analytic.analyze(config, allow_unequal_means=allow_unequal)
    prof = a.profile
    pooled = sim.pool(reports)
    w = pooled.w
    rel = abs(w.point - a.mean_w) / a.mean_w if a.mean_w > 0 else abs(w.point)
    passed = w.contains(a.mean_w) or rel < rel_tol
    rho = prof.rho
    # P - rho * W should average rho * residual if the identity holds.
    p_gap = pooled.combined(lambda b: b["p"] - rho * b["w"])
    pasta = pooled.combined(lambda b: b["n_seen"] - b["time_n"])
    little = prof.lambda_total * w.point
    payload = {
        "analytic_mean_w": a.mean_w,
        "sim_mean_w": w.point,
        "sim_ci_low": w.low,
        "sim_ci_high": w.high,
        "rel_error": rel,
        "verdict": "PASS" if passed else "FAIL",
        "replications": len(reports),
        "jobs_per_replication": reports[0].jobs_completed,
        "analytic_mean_m": a.mean_m,
        "sim_mean_m": pooled.m.point,
        "sim_mean_m_hw": pooled.m.half_width_95,
        "p_identity": {
            "sim_mean_p": pooled.p.point,
            "predicted_mean_p": rho * a.residual + rho * w.point,
            "gap_mean": p_gap.point,
            "gap_expected": rho * a.residual,
            "gap_hw": p_gap.half_width_95,
            "holds": p_gap.contains(rho * a.residual),
        },
        "pasta": {
            "arrival_avg_n": pooled.n_seen.point,
            "time_avg_n": pooled.time_n.point,
            "diff_hw": pasta.half_width_95,
            "holds": pasta.contains(0.0),
        },
        "little": {
            "time_avg_n": pooled.time_n.point,
            "lambda_times_w": little,
            "rel_error": abs(pooled.time_n.point - little) / little if little > 0 else 0.0,
        },
    }
    if allow_unequal:
        payload["unequal_means_bypassed"] = True
    return payload


def cmd_compare(args: argparse.Namespace, config: SystemConfig) -> tuple[str, int]:
    reps = args.reps if args.reps is not None else 5
    if reps < 2:
        raise UsageError("compare needs --reps >= 2")
    reports = _run_reps(args, config, reps)
    payload = compare_payload(config, reports, allow_unequal=args.allow_unequal_means, rel_tol=args.rel_tol)
    code = EXIT_OK if payload["verdict"] == "PASS" else EXIT_FAIL
    return _render(payload, args.format or "table"), code


def sweep_point(config: SystemConfig, axis: str, value: float) -> SystemConfig:
    if axis == "alpha":
        return dataclasses.replace(config, switch_time=value)
    if axis == "rho_scale":
        return config.with_rates([q.arrival_rate * value for q in config.queues])
    n = int(value)
    if n != value or n < 1:
        raise UsageError(f"n_queues values must be positive integers, got {value!r}")
    if config.order.sequence:
        raise UsageError("n_queues sweep is not defined for explicit orders")
    # n copies of the first queue sharing the original total arrival rate.
    lam = sum(q.arrival_rate for q in config.queues)
    template = dataclasses.replace(config.queues[0], arrival_rate=lam / n)
    return dataclasses.replace(config, queues=(template,) * n)


SWEEP_HEADER = ["point", "axis", "value", "analytic_mean_w", "sim_mean_w", "ci_half_width",
                "rel_error", "verdict", "error"]


def cmd_sweep(args: argparse.Namespace, config: SystemConfig) -> tuple[str, int]:
    if not args.axis or args.axis not in SWEEP_AXES:
        raise UsageError(f"sweep needs --axis, one of {', '.join(SWEEP_AXES)}")
    values = _parse_values(args.values)
    points = [sweep_point(config, args.axis, v) for v in values]
    if args.axis == "rho_scale":
        for v, p in zip(values, points):
            rho = sum(q.arrival_rate * q.service.mean() for q in p.queues)
            if rho >= 1.0:
                raise UsageError(f"rho_scale {v!r} gives rho = {rho!r} >= 1")
    reps = args.reps or 1
    rows = []
    any_fail = False
    for i, (v, point) in enumerate(zip(values, points)):
        row: list[Any] = [i, args.axis, v]
        try:
            a = analytic.analyze(point, allow_unequal_means=args.allow_unequal_means)
            reports = sim.replicate(point, args.seed, reps, args.jobs, args.warmup,
                                    allow_unequal_means=args.allow_unequal_means)
            ci = sim.pool(reports).w
            rel = abs(ci.point - a.mean_w) / a.mean_w if a.mean_w > 0 else abs(ci.point)
            ok = ci.contains(a.mean_w) or rel < args.rel_tol
            any_fail |= not ok
            row += [a.mean_w, ci.point, ci.half_width_95, rel, "PASS" if ok else "FAIL", ""]
        except (ValidationError, ValueError) as exc:
            any_fail = True
            row += [None, None, None, None, "ERROR", str(exc)]
        rows.append(row)
    fmt = args.format or "csv"
    if fmt == "json":
        text = dumps([dict(zip(SWEEP_HEADER, r)) for r in rows])
    elif fmt == "table":
        text = _table([(f"{r[1]}={_fmt(r[2])}", f"analytic={_fmt(r[3])} sim={_fmt(r[4])} {r[7]}") for r in rows])
    else:
        text = _csv(SWEEP_HEADER, rows)
    return text, EXIT_FAIL if any_fail else EXIT_OK


def _parse_values(raw: str | None) -> list[float]:
    if not raw or not raw.strip():
        raise UsageError("--values needs at least one value")
    try:
        values = [float(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse --values {raw!r}") from None
    if not values or not all(math.isfinite(v) for v in values):
        raise UsageError("--values must be finite numbers")
    return values


COMMANDS = {"analytic": cmd_analytic, "simulate": cmd_simulate, "compare": cmd_compare, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pollwait", description="Mean waiting time in polling systems.")
    p.add_argument("mode", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON system config")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1_000_000, help="jobs to begin service, warmup included")
    p.add_argument("--warmup", type=int, default=100_000)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values")
    p.add_argument("--format", choices=("table", "csv", "json"))
    p.add_argument("--trace", help="write a per-job CSV of the first replication")
    p.add_argument("--allow-unequal-means", action="store_true",
                   help="skip the equal-mean check (negative controls only)")
    p.add_argument("--closed-form", action="store_true",
                   help="require the closed-form moving term (circular exhaustive only)")
    p.add_argument("--rel-tol", type=float, default=REL_TOL, help="relative error accepted as PASS")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.mode != "sweep":
            validate(config, allow_unequal_means=args.allow_unequal_means)
        text, code = COMMANDS[args.mode](args, config)
    except (ConfigError, ValidationError, UsageError, sim.InvalidHorizon) as exc:
        print(f"pollwait: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pollwait: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except analytic.PolicyMismatch as exc:
        print(f"pollwait: unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    sys.stdout.write(text)
    if args.allow_unequal_means:
        print("pollwait: equal-means check bypassed; results are a negative control", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
