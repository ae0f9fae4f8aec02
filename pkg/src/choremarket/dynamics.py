"""Discrete-time price dynamics: naive and relative updates, schedules, runs.

The naive update p <- p - eta * z moves against raw excess demand and provably
blows up the total price mass on simple instances; the relative update
p <- p - eta * zt uses mean-centered excess demand, conserving sum(p) so the
iterates live on the budget hyperplane. With steps capped at
ell0^2 / (2 ||B||_1) no price that has climbed past ell0 ever falls below
ell0/2 again, so no projection is ever applied.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .demand import DEFAULT_TIE_TOL, UNIFORM, TieRule
from .errors import StepTooLarge
from .excess import StationarityCertificate, min_norm_certificate
from .model import Market, Moduli, compute_moduli

DEFAULT_STATIONARITY_TIE_TOL = 1e-4


class Mode(Enum):
    NAIVE = "naive"
    RELATIVE = "relative"


class StopReason(Enum):
    EPS_STATIONARY = "eps_stationary"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class PriceVector:
    """Prices together with their distance from the budget hyperplane."""

    p: np.ndarray
    simplex_residual: float

    @staticmethod
    def wrap(p, budget_sum: float) -> "PriceVector":
        p = np.asarray(p, dtype=float)
        return PriceVector(p, float(math.fsum(p) - budget_sum))


@dataclass(frozen=True)
class StepSchedule:
    """Step-size schedule; every emitted step is clamped to the cap.

    kinds: "constant" (eta fixed), "capped_harmonic" (eta_k = min(cap,
    c/(k+1)); square-summable but not summable), "smooth_constant"
    (eta = min(cap, 1/(2L)) from the market's smoothness certificate, with a
    warm-start phase at eta = cap for CES rho > 2 starts outside the smooth
    region).
    """

    kind: str
    eta: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "capped_harmonic", "smooth_constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and (self.eta is None or self.eta <= 0):
            raise ValueError("constant schedule needs eta > 0")
        if self.kind == "capped_harmonic" and self.c is not None and self.c <= 0:
            raise ValueError("capped_harmonic needs c > 0")

    @staticmethod
    def constant(eta: float) -> "StepSchedule":
        return StepSchedule("constant", eta=float(eta))

    @staticmethod
    def capped_harmonic(c: float | None = None) -> "StepSchedule":
        return StepSchedule("capped_harmonic", c=None if c is None else float(c))

    @staticmethod
    def smooth_constant() -> "StepSchedule":
        return StepSchedule("smooth_constant")


def step_naive(p, eta: float, z) -> np.ndarray:
    """One naive update p - eta * z."""
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    return np.asarray(p, dtype=float) - eta * np.asarray(z, dtype=float)


def step_relative(p, eta: float, zt, cap: float | None = None) -> np.ndarray:
    """One relative update p - eta * zt.

    When `cap` is given, steps above it are rejected: the no-projection
    guarantee (prices never re-entering (0, ell0/2)) holds only below the cap.
    """
    if eta < 0:
        raise ValueError("step size must be nonnegative")
    if cap is not None and eta > cap * (1.0 + 1e-12):
        raise StepTooLarge(f"eta={eta} exceeds the no-projection cap {cap}")
    return np.asarray(p, dtype=float) - eta * np.asarray(zt, dtype=float)


@dataclass
class Trajectory:
    """Recorded iterates of one run plus whole-run statistics.

    Rows are recorded every `record_every` iterations (plus the final state).
    max_simplex_dev is max_k |sum(p^k) - ||B||_1| over *all* iterates, not just
    recorded ones; the barrier flags likewise cover every iterate.
    """

    ks: np.ndarray
    prices: np.ndarray
    etas: np.ndarray
    f_values: np.ndarray
    zt_norms: np.ndarray
    zinf_norms: np.ndarray
    stop_reason: StopReason
    iterations: int
    final_prices: np.ndarray
    budget_sum: float
    final_certificate: StationarityCertificate | None = None
    max_simplex_dev: float = 0.0
    sum_strictly_increasing: bool | None = None
    barrier_ok: bool = True
    half_barrier_ok: bool = True
    phase1_iterations: int = 0

    @property
    def final_price_vector(self) -> PriceVector:
        return PriceVector.wrap(self.final_prices, self.budget_sum)

    def write_csv(self, path) -> None:
        m = self.prices.shape[1]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"p_{j + 1}" for j in range(m)]
                       + ["eta", "f", "znorm_rel", "znorm_inf"])
            for r in range(len(self.ks)):
                w.writerow([int(self.ks[r])]
                           + [repr(float(v)) for v in self.prices[r]]
                           + [repr(float(self.etas[r])), repr(float(self.f_values[r])),
                              repr(float(self.zt_norms[r])), repr(float(self.zinf_norms[r]))])


def _row_at(p, d, B, rho, sigma, market, tie, tie_tol):
    from .excess import center, excess_demand

    z = excess_demand(market, p, tie, tie_tol)
    zt = center(z)
    f = _kernels._potential(p, d, B, rho, sigma)
    return f, float(np.linalg.norm(zt)), float(np.abs(z).max())


def run(
    market: Market,
    p0,
    schedule: StepSchedule,
    mode: Mode = Mode.RELATIVE,
    tie: TieRule = UNIFORM,
    eps: float = 1e-6,
    max_iters: int = 1_000_000,
    record_every: int = 1,
    tie_tol: float = DEFAULT_TIE_TOL,
    stationarity_tie_tol: float = DEFAULT_STATIONARITY_TIE_TOL,
    stationarity_check_every: int = 512,
    divergence_factor: float = 10.0,
    moduli: Moduli | None = None,
) -> Trajectory:
    """Run the dynamics from p0 until eps-stationarity, divergence, or max_iters.

    Relative mode requires p0 on the price simplex. The stop test is
    ||zt|| <= eps where zt ranges over the excess-demand correspondence: for
    markets with linear agents the minimum-norm element over MPB near-ties
    (within stationarity_tie_tol, checked every stationarity_check_every
    iterations and whenever the tie-rule selection itself is small) certifies
    stationarity; for CES demand is unique and checked every iteration.
    Naive mode stops when ||z|| <= eps or sum(p) exceeds
    divergence_factor * ||B||_1 (reported as DIVERGED).
    """
    p = np.asarray(p0, dtype=float).copy()
    if p.shape != (market.m,):
        raise ValueError(f"p0 must have length {market.m}")
    if np.any(p < 0):
        raise ValueError("p0 must be nonnegative")
    Bsum = market.budget_sum
    if mode is Mode.RELATIVE and abs(math.fsum(p) - Bsum) > 1e-9 * Bsum:
        raise ValueError("relative mode needs p0 on the price simplex "
                         f"(sum p0 = {math.fsum(p)}, ||B||_1 = {Bsum})")
    if moduli is None:
        moduli = compute_moduli(market)
    cap = moduli.step_cap(Bsum)

    d = market.weight_matrix()
    B = np.asarray(market.budgets, dtype=float)
    rho = market.rho_vector()
    sigma = np.where(rho > 1.0, rho / np.where(rho > 1.0, rho - 1.0, 1.0), 0.0)
    naive = mode is Mode.NAIVE
    has_linear = any(s.is_linear for s in market.disutilities)

    tie_kind = {"uniform": 0, "lowest": 1, "weighted": 2}[tie.kind]
    tie_w = tie.weights if tie.kind == "weighted" else np.zeros(market.m)

    # Schedule resolution. The cap backs the relative dynamics' no-projection
    # guarantee; naive runs diverge for any positive steps and are not capped.
    cap_eff = cap if mode is Mode.RELATIVE else math.inf
    phase1_budget = 0
    phase2_eta = None
    if schedule.kind == "constant":
        sched_kind, eta_const, c_harm = 0, min(schedule.eta, cap_eff), 0.0
    elif schedule.kind == "capped_harmonic":
        sched_kind, eta_const = 1, 0.0
        c_harm = cap if schedule.c is None else schedule.c
    else:
        from .potential import smoothness_certificate

        cert = smoothness_certificate(market, moduli=moduli)
        phase2_eta = min(cap, 1.0 / (2.0 * cert.composite_l))
        sched_kind, c_harm = 0, 0.0
        if any((not s.is_linear) and s.rho > 2.0 for s in market.disutilities) \
                and float(p.min()) < 0.5 * moduli.ell0:
            eta_const = cap  # warm-start step ||B||_1 (min nu)^2 / (18 m^2)
            phase1_budget = math.ceil(18.0 * market.m**3 / float(moduli.nu.min()))
        else:
            eta_const = phase2_eta

    div_threshold = divergence_factor * Bsum if naive else 0.0
    stop_below = 0.5 * moduli.ell0 if phase1_budget > 0 else 0.0

    crossed_l0 = (p > moduli.ell0).astype(np.int8)
    crossed_half = (p >= 0.5 * moduli.ell0).astype(np.int8)
    stats = np.array([abs(math.fsum(p) - Bsum), 1.0, 1.0, 1.0])

    rows_k, rows_p, rows_eta, rows_f, rows_zt, rows_zi = [], [], [], [], [], []
    cert_final: StationarityCertificate | None = None
    stop = StopReason.MAX_ITERS
    phase1_iters = 0
    in_phase1 = phase1_budget > 0

    def _min_norm_stop(pv):
        c = min_norm_certificate(market, pv, stationarity_tie_tol)
        return c if c.value <= eps else None

    # Minimum-norm pre-check at k = 0 for markets with tie-prone agents.
    k = 0
    if not naive and has_linear:
        cert_final = _min_norm_stop(p)

    if cert_final is not None:
        stop = StopReason.EPS_STATIONARY
    else:
        batch = stationarity_check_every if (not naive and has_linear) else 1 << 16
        while True:
            kmax = min(k + batch, max_iters)
            if in_phase1:
                kmax = min(kmax, phase1_iters_end(k, phase1_iters, phase1_budget))
            nrec_cap = 2 if record_every <= 0 else (kmax - k) // record_every + 2
            rk = np.empty(nrec_cap, dtype=np.int64)
            rp = np.empty((nrec_cap, market.m))
            re_ = np.empty(nrec_cap)
            rf = np.empty(nrec_cap)
            rzt = np.empty(nrec_cap)
            rzi = np.empty(nrec_cap)
            k_new, code, nrec = _kernels.run_batch(
                p, d, B, rho, sigma, Bsum, moduli.ell0,
                naive, tie_kind, tie_w, tie_tol,
                sched_kind, eta_const, c_harm, cap_eff,
                k, kmax, eps, div_threshold, stop_below,
                record_every, rk, rp, re_, rf, rzt, rzi,
                crossed_l0, crossed_half, stats)
            if nrec:
                rows_k.append(rk[:nrec].copy())
                rows_p.append(rp[:nrec].copy())
                rows_eta.append(re_[:nrec].copy())
                rows_f.append(rf[:nrec].copy())
                rows_zt.append(rzt[:nrec].copy())
                rows_zi.append(rzi[:nrec].copy())
            if in_phase1:
                phase1_iters += k_new - k
            k = k_new
            if code == _kernels.STOP_BAD_PRICE:
                raise RuntimeError("prices left the nonnegative orthant during a "
                                   "naive run; reduce the step size")
            if code == _kernels.STOP_EPS:
                stop = StopReason.EPS_STATIONARY
                break
            if code == _kernels.STOP_DIVERGED:
                stop = StopReason.DIVERGED
                break
            if code == _kernels.STOP_ENTERED:
                in_phase1 = False
                stop_below = 0.0
                eta_const = phase2_eta
                continue
            # batch exhausted
            if in_phase1 and phase1_iters >= phase1_budget:
                raise RuntimeError(
                    "warm-start phase exceeded its guaranteed iteration budget "
                    f"({phase1_budget}); this indicates a broken instance")
            if k >= max_iters:
                stop = StopReason.MAX_ITERS
                break
            if not naive and has_linear:
                cert_final = _min_norm_stop(p)
                if cert_final is not None:
                    stop = StopReason.EPS_STATIONARY
                    break

    if not naive and cert_final is None:
        cert_final = min_norm_certificate(market, p, stationarity_tie_tol)

    ks = np.concatenate(rows_k) if rows_k else np.empty(0, dtype=np.int64)
    if ks.size == 0 or ks[-1] != k:
        f, ztn, zin = _row_at(p, d, B, rho, sigma, market, tie, tie_tol)
        rows_k.append(np.array([k], dtype=np.int64))
        rows_p.append(p[None, :].copy())
        rows_eta.append(np.array([_eta_at(sched_kind, eta_const, c_harm, cap_eff, k)]))
        rows_f.append(np.array([f]))
        rows_zt.append(np.array([ztn]))
        rows_zi.append(np.array([zin]))
        ks = np.concatenate(rows_k)

    return Trajectory(
        ks=ks,
        prices=np.concatenate(rows_p),
        etas=np.concatenate(rows_eta),
        f_values=np.concatenate(rows_f),
        zt_norms=np.concatenate(rows_zt),
        zinf_norms=np.concatenate(rows_zi),
        stop_reason=stop,
        iterations=k,
        final_prices=p.copy(),
        budget_sum=Bsum,
        final_certificate=cert_final,
        max_simplex_dev=float(stats[0]),
        sum_strictly_increasing=bool(stats[1]) if naive else None,
        barrier_ok=bool(stats[2]),
        half_barrier_ok=bool(stats[3]),
        phase1_iterations=phase1_iters,
    )


def _eta_at(sched_kind, eta_const, c_harm, cap, k):
    if sched_kind == 0:
        return eta_const
    return min(cap, c_harm / (k + 1.0))


def phase1_iters_end(k, used, budget):
    """Absolute iteration bound that keeps phase 1 within its budget."""
    return k + (budget - used)
