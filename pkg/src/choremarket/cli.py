"""Command-line harness: validate, simulate, grid, rate, stability.

Every command reads a JSON instance file, writes CSV/JSON artifacts, and
prints a small JSON summary to stdout. Outputs are deterministic given
(instance, flags, seed); exit codes encode assertion outcomes so reproduction
suites can run headlessly.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .dynamics import Mode, StepSchedule, run
from .equilibrium import classify_all
from .errors import ChoreMarketError, WrongDimension
from .grids import barycentric_grid, grid_rows
from .instances import uniform_simplex_point
from .model import Market, compute_moduli, load_market, market_from_dict
from .potential import potential_bounds


def _parse_schedule(text: str) -> StepSchedule:
    head, _, arg = text.partition(":")
    if head == "constant":
        return StepSchedule.constant(float(arg))
    if head == "harmonic":
        return StepSchedule.capped_harmonic(float(arg) if arg else None)
    if head == "smooth":
        return StepSchedule.smooth_constant()
    raise ValueError(f"unknown schedule {text!r}; use constant:ETA, "
                     "harmonic[:C], or smooth")


def _starting_point(market: Market, kind: str, seed: int) -> np.ndarray:
    if kind == "uniform":
        return uniform_simplex_point(market)
    if kind == "random":
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.full(market.m, 2.0))
        return w * market.budget_sum
    if kind == "near-edge":
        moduli = compute_moduli(market)
        p = np.full(market.m, 0.25 * moduli.ell0)
        p[0] = market.budget_sum - p[1:].sum()
        return p
    raise ValueError(f"unknown starting point {kind!r}")


def _jobs(args) -> int:
    env = os.environ.get("CHORES_JOBS")
    if env:
        return max(1, int(env))
    return max(1, args.jobs)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_validate(args) -> int:
    market = load_market(args.instance)
    moduli = compute_moduli(market)
    lo, hi = potential_bounds(market, moduli)
    _emit({
        "valid": True,
        "agents": market.n,
        "chores": market.m,
        "budget_sum": market.budget_sum,
        "ell0": moduli.ell0,
        "step_cap": moduli.step_cap(market.budget_sum),
        "potential_bounds": [lo, hi],
    })
    return 0


def cmd_simulate(args) -> int:
    market = load_market(args.instance)
    schedule = _parse_schedule(args.schedule)
    p0 = _starting_point(market, args.p0, args.seed)
    traj = run(
        market, p0, schedule,
        mode=Mode.NAIVE if args.mode == "naive" else Mode.RELATIVE,
        eps=args.eps, max_iters=args.max_iters, record_every=args.record_every,
    )
    if args.out:
        traj.write_csv(args.out)
    summary = {
        "stop_reason": traj.stop_reason.value,
        "iterations": traj.iterations,
        "final_f": float(traj.f_values[-1]),
        "final_znorm_inf": float(traj.zinf_norms[-1]),
        "final_zt_norm": float(traj.zt_norms[-1]),
        "final_prices": [float(v) for v in traj.final_prices],
        "max_simplex_deviation": traj.max_simplex_dev,
        "phase1_iterations": traj.phase1_iterations,
    }
    if traj.sum_strictly_increasing is not None:
        summary["sum_strictly_increasing"] = traj.sum_strictly_increasing
    _emit(summary)
    return 0


def _grid_chunk(payload):
    market_doc, pitch, lo, hi = payload
    market = market_from_dict(market_doc)
    pts = barycentric_grid(market.m, pitch, market.budget_sum)[lo:hi]
    from .excess import min_norm_certificate
    from .potential import potential_f

    rows = []
    for p in pts:
        cert = min_norm_certificate(market, p)
        rows.append((tuple(float(v) for v in p), potential_f(market, p).f,
                     tuple(float(v) for v in cert.zt)))
    return rows


def cmd_grid(args) -> int:
    market = load_market(args.instance)
    if market.m != 3:
        raise WrongDimension(f"ternary grids need m = 3 chores, got {market.m}")
    jobs = _jobs(args)
    if jobs > 1:
        npts = len(barycentric_grid(3, args.pitch, market.budget_sum))
        chunk = max(64, -(-npts // jobs))
        payloads = [(market.to_dict(), args.pitch, lo, min(lo + chunk, npts))
                    for lo in range(0, npts, chunk)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_grid_chunk, payloads))
        rows = [r for ch in chunks for r in ch]
    else:
        rows = grid_rows(market, args.pitch)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p_1", "p_2", "p_3", "f", "zt_1", "zt_2", "zt_3"])
        for p, f, zt in rows:
            w.writerow([repr(v) for v in p] + [repr(f)] + [repr(v) for v in zt])
    _emit({"rows": len(rows), "out": args.out})
    return 0


def _rate_run(payload):
    market_doc, p0_kind, seed, eps, max_iters = payload
    market = market_from_dict(market_doc)
    p0 = _starting_point(market, p0_kind, seed)
    traj = run(market, p0, StepSchedule.smooth_constant(), mode=Mode.RELATIVE,
               eps=eps, max_iters=max_iters, record_every=0)
    return eps, traj.iterations, traj.phase1_iterations, traj.stop_reason.value


def cmd_rate(args) -> int:
    market = load_market(args.instance)
    eps_list = [float(s) for s in args.eps_list.split(",")]
    payloads = [(market.to_dict(), args.p0, args.seed, eps, args.max_iters)
                for eps in eps_list]
    jobs = _jobs(args)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_rate_run, payloads))
    else:
        results = [_rate_run(pl) for pl in payloads]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "iterations", "phase1_iterations", "stop_reason"])
        for eps, iters, ph1, reason in results:
            w.writerow([repr(eps), iters, ph1, reason])
    iters = np.array([max(r[1], 1) for r in results], dtype=float)
    inv_eps = 1.0 / np.array([r[0] for r in results])
    slope = float(np.polyfit(np.log(inv_eps), np.log(iters), 1)[0]) \
        if len(results) > 1 else 0.0
    _emit({"eps": eps_list, "iterations": [r[1] for r in results],
           "phase1_iterations": [r[2] for r in results],
           "loglog_slope": slope, "out": args.out})
    return 0


def cmd_stability(args) -> int:
    market = load_market(args.instance)
    table = classify_all(market, args.pitch,
                         variational_samples=args.samples,
                         variational_radius=args.radius, seed=args.seed)
    doc = []
    for rep in table.reports:
        entry = {
            "prices": [float(v) for v in rep.prices.p],
            "allocation": [[float(v) for v in row] for row in rep.allocation],
            "eps": rep.eps,
            "nash_welfare": rep.nash_welfare,
            "stable": rep.stability.value == "stable",
            "max_nw": bool(rep.criteria_detail.get("max_nw", False)),
        }
        if "witness_J" in rep.criteria_detail:
            entry["witness_J"] = rep.criteria_detail["witness_J"]
        doc.append(entry)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _emit({
        "equilibria": len(table.reports),
        "classifiers_agree": table.classifiers_agree,
        "max_nw_is_stable": table.max_nw_is_stable,
        "out": args.out,
    })
    if not table.reports:
        print("no equilibria found at this grid pitch; refine --pitch",
              file=sys.stderr)
        return 2
    return 0 if table.max_nw_is_stable else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="choremarket",
        description="Price dynamics and equilibrium analysis for chore markets.")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check an instance file")
    v.add_argument("instance")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run one price trajectory")
    s.add_argument("instance")
    s.add_argument("--mode", choices=["naive", "relative"], default="relative")
    s.add_argument("--schedule", default="harmonic",
                   help="constant:ETA | harmonic[:C] | smooth")
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--max-iters", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--record-every", type=int, default=1)
    s.add_argument("--p0", choices=["uniform", "random", "near-edge"],
                   default="uniform")
    s.add_argument("--out", default=None, help="trajectory CSV path")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("grid", help="simplex grid of f and min-norm flows (m=3)")
    g.add_argument("instance")
    g.add_argument("--pitch", type=float, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("rate", help="iterations-to-eps study (CES instances)")
    r.add_argument("instance")
    r.add_argument("--eps-list", default="1e-1,1e-2,1e-3,1e-4")
    r.add_argument("--max-iters", type=int, default=5_000_000)
    r.add_argument("--p0", choices=["uniform", "random", "near-edge"],
                   default="uniform")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_rate)

    st = sub.add_parser("stability", help="enumerate and classify equilibria")
    st.add_argument("instance")
    st.add_argument("--pitch", type=float, required=True)
    st.add_argument("--out", required=True)
    st.add_argument("--samples", type=int, default=10_000)
    st.add_argument("--radius", type=float, default=1e-3)
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_stability)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ChoreMarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
