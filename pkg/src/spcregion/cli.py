"""Command-line front end.

Commands
--------
r0max     largest common rate of a channel, in nats and bits
boundary  sweep weighted-sum optima over an (R0, w) grid into a CSV file
verify    run a named property suite and print a JSON report
solve     solve one (R0, w) instance and print JSON
oracle    brute-force reference solve of one instance, printed as JSON

Boundary CSV columns, in order::

    region, r0_index, weight_index, R0, w1, w2, w3, R1, R2, R3, objective,
    a1_1, a1_2, a2_1, a2_2, ap1_1, ap1_2, ap2_1, ap2_2,
    app1_1, app1_2, app2_1, app2_2, active_ids, kkt_residual, status

Weights are normalized to sum to one.  ``active_ids`` is a semicolon-joined
list.  Floats carry 12 significant digits.

Exit codes: 0 success, 1 property failure, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import NATS_PER_BIT, ChannelConfig, WeightVector, validate
from .errors import SpcRegionError
from .oracle import grid_search
from .rates import r0_max
from .regions import RegionId
from .solver import (
    SolveResult,
    Status,
    constraint_report,
    solve_region2_relaxed,
    solve_relaxed,
    solve_restricted,
)
from .verify import MEMBERSHIP_TOL, SUITES, intersection_rows, run_suite

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
INTERSECTION = "Intersection"
SWEEP_REGIONS = ("Relaxed1", "Relaxed2", INTERSECTION)

ALPHA_COLUMNS = tuple(
    f"{p}{i}_{j}" for p in ("a", "ap", "app") for i in (1, 2) for j in (1, 2)
)
CSV_COLUMNS = (
    "region", "r0_index", "weight_index", "R0", "w1", "w2", "w3", "R1", "R2", "R3", "objective",
    *ALPHA_COLUMNS, "active_ids", "kkt_residual", "status",
)


class InputError(Exception):
    """Bad command-line input (maps to exit code 2)."""


@dataclass
class SweepSpec:
    r0_steps: int
    weights: list = field(default_factory=list)
    regions: tuple = SWEEP_REGIONS

    def __post_init__(self):
        if self.r0_steps < 2:
            raise InputError("--r0-steps must be >= 2")
        if not self.weights:
            raise InputError("at least one weight vector is required")
        for r in self.regions:
            if r not in SWEEP_REGIONS:
                raise InputError(f"sweep region {r!r} not in {SWEEP_REGIONS}")


def sphere_weights(n: int) -> list[np.ndarray]:
    """``n`` well-spread weight directions on the positive octant of the unit sphere.

    Uses a golden-angle spiral restricted to the octant; each vector is then
    normalized to sum one.
    """
    if n < 1:
        raise InputError("weight count must be >= 1")
    golden = math.pi * (3.0 - math.sqrt(5.0))
    out = []
    for k in range(n):
        z = 1.0 - (k + 0.5) / n
        r = math.sqrt(1.0 - z * z)
        phi = (k * golden) % (math.pi / 2.0)
        v = np.array([r * math.cos(phi), r * math.sin(phi), z])
        v = np.maximum(v, 0.0)
        out.append(v / v.sum())
    return out


def parse_weights(text: str | None) -> list[np.ndarray]:
    """Either a count (sphere grid) or ``;``-separated comma triples."""
    if text is None:
        return [np.array([3.0, 2.0, 1.0]) / 6.0]
    text = text.strip()
    if text.isdigit():
        return sphere_weights(int(text))
    out = []
    for chunk in text.split(";"):
        try:
            vals = [float(v) for v in chunk.split(",")]
            out.append(WeightVector.coerce(vals).normalized().as_array())
        except (ValueError, SpcRegionError) as e:
            raise InputError(f"bad weight vector {chunk!r}: {e}") from e
    return out


def load_config(path: str | None) -> ChannelConfig:
    if path is None:
        raise InputError("--config is required")
    try:
        return validate(ChannelConfig.from_json(path))
    except OSError as e:
        raise InputError(f"cannot read config: {e}") from e
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise InputError(f"malformed config {path}: {e}") from e


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _solve_cell(args):
    c, region, R0, w = args
    if region == INTERSECTION:
        rows = intersection_rows(c, R0, w, MEMBERSHIP_TOL)
        return [(INTERSECTION, res) for _, res in rows[:1]]
    fn = solve_relaxed if region == "Relaxed1" else solve_region2_relaxed
    return [(region, fn(c, R0, w))]


def _row(c, region, i, j, R0, w, res: SolveResult) -> list[str]:
    alphas = np.concatenate([p.as_array() for p in res.partitions])
    active = ";".join(sorted(constraint_report(c, res).active_rate_ids()))
    return [
        region, str(i), str(j), _fmt(R0), *map(_fmt, w),
        *map(_fmt, res.rates.private), _fmt(res.objective), *map(_fmt, alphas),
        active, _fmt(res.kkt_residual), res.status.value,
    ]


def boundary_rows(c: ChannelConfig, sweep: SweepSpec, workers: int = 1) -> list[list[str]]:
    """CSV rows ordered by region, R0 index and weight index."""
    top = r0_max(c)
    r0s = [top * k / (sweep.r0_steps - 1) for k in range(sweep.r0_steps)]
    keys, jobs = [], []
    for region in sweep.regions:
        for i, R0 in enumerate(r0s):
            for j, w in enumerate(sweep.weights):
                keys.append((region, i, j, R0, w))
                jobs.append((c, region, R0, w))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_cell, jobs))
    else:
        results = [_solve_cell(j) for j in jobs]
    rows = []
    for (region, i, j, R0, w), out in zip(keys, results):
        for label, res in out:
            rows.append(_row(c, label, i, j, R0, w, res))
    return rows


def write_csv(rows, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)


def result_dict(c: ChannelConfig, res: SolveResult, R0: float, bits: bool = False) -> dict:
    scale = 1.0 / NATS_PER_BIT if bits else 1.0
    mult = res.multipliers
    if hasattr(mult, "to_dict"):
        mult = mult.to_dict()
    elif hasattr(mult, "by_id"):
        mult = mult.by_id()
    return {
        "region": res.region.value,
        "unit": "bits" if bits else "nats",
        "R0": R0 * scale,
        "rates": (res.rates.private * scale).tolist(),
        "objective": res.objective * scale,
        "partitions": [p.as_array().tolist() for p in res.partitions],
        "active_ids": sorted(constraint_report(c, res).active_rate_ids()),
        "kkt_residual": res.kkt_residual,
        "status": res.status.value,
        "iterations": res.iterations,
        "multipliers": mult,
    }


def _instance(args):
    c = load_config(args.config)
    ws = parse_weights(args.weights)
    if len(ws) != 1:
        raise InputError("exactly one weight vector is required")
    R0 = args.r0
    if R0 < 0.0:
        raise InputError("--r0 must be >= 0")
    try:
        region = RegionId.parse(args.region)
    except ValueError as e:
        raise InputError(str(e)) from e
    return c, R0, ws[0], region


def cmd_r0max(args) -> int:
    c = load_config(args.config)
    v = r0_max(c)
    print(json.dumps({"nats": v, "bits": v / NATS_PER_BIT}) if args.json else f"{v:.6f} nats ({v / NATS_PER_BIT:.6f} bits)")
    return EXIT_OK


def cmd_boundary(args) -> int:
    c = load_config(args.config)
    regions = tuple(r.strip() for r in args.region.split(",")) if args.region else SWEEP_REGIONS
    sweep = SweepSpec(args.r0_steps, parse_weights(args.weights), regions)
    rows = boundary_rows(c, sweep, args.workers)
    if args.out in (None, "-"):
        write_csv(rows, sys.stdout)
    else:
        buf = io.StringIO()
        write_csv(rows, buf)
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    return EXIT_OK


def cmd_verify(args) -> int:
    c = load_config(args.config)
    if args.suite not in SUITES:
        raise InputError(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}")
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    rep = run_suite(args.suite, c, args.seed, args.trials)
    _emit(rep.to_json(), args.out)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_solve(args) -> int:
    c, R0, w, region = _instance(args)
    if region == RegionId.SPC:
        raise InputError("solve supports Relaxed1, Relaxed2, Region1 and Region2")
    if region == RegionId.RELAXED1:
        res = solve_relaxed(c, R0, w)
    elif region == RegionId.RELAXED2:
        res = solve_region2_relaxed(c, R0, w)
    else:
        res = solve_restricted(c, R0, w, region)
    _emit(json.dumps(result_dict(c, res, R0, args.bits), indent=2), args.out)
    return EXIT_OK if res.status != Status.INFEASIBLE else EXIT_FAIL


def cmd_oracle(args) -> int:
    c, R0, w, region = _instance(args)
    out = grid_search(c, R0, w, region)
    scale = 1.0 / NATS_PER_BIT if args.bits else 1.0
    doc = {
        "region": region.base.value,
        "unit": "bits" if args.bits else "nats",
        "R0": R0 * scale,
        "rates": (out.rates.private * scale).tolist(),
        "objective": out.objective * scale,
        "theta": out.theta.as_array().tolist(),
        "history": list(out.history),
    }
    _emit(json.dumps(doc, indent=2), args.out)
    return EXIT_OK


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        print(text)
    else:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spcregion",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help='channel JSON: {"P": [P1, P2], "N1": [3 values], "N2": [3 values]}')
        sp.add_argument("--out", help="output path (stdout if omitted)")
        return sp

    r = common(sub.add_parser("r0max", help="largest common rate"))
    r.add_argument("--json", action="store_true", help="print JSON instead of text")
    r.set_defaults(func=cmd_r0max)

    b = common(sub.add_parser("boundary", help="boundary sweep to CSV"))
    b.add_argument("--r0-steps", type=int, default=11, help="R0 grid points on [0, r0_max] (>= 2)")
    b.add_argument("--weights", help="count for a sphere grid, or 'w1,w2,w3;...'")
    b.add_argument("--region", help="comma list of Relaxed1, Relaxed2, Intersection")
    b.add_argument("--workers", type=int, default=1, help="worker processes")
    b.set_defaults(func=cmd_boundary)

    v = common(sub.add_parser("verify", help="run a property suite"))
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=20)
    v.set_defaults(func=cmd_verify)

    for name, fn, default in (("solve", cmd_solve, "Relaxed1"), ("oracle", cmd_oracle, "Region1")):
        s = common(sub.add_parser(name, help=f"{name} one instance"))
        s.add_argument("--r0", type=float, default=0.0, help="common rate in nats")
        s.add_argument("--weights", help="'w1,w2,w3'")
        s.add_argument("--region", default=default)
        s.add_argument("--bits", action="store_true", help="report rates in bits")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, SpcRegionError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
