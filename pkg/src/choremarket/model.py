"""Market instances and their structural moduli.

A chores Fisher market has m unit-supply divisible chores and n agents. Agent i
must earn a budget B_i > 0 and incurs disutility from the chores she performs,
given either by a weighted linear form or by a weighted ell_rho norm (CES,
rho > 1). Everything downstream (demand oracles, tatonnement step caps,
smoothness certificates) is parameterized by a handful of structural moduli
computed here once per instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InstanceFormatError,
    NonPositiveBudget,
    NonPositiveWeight,
    NotApplicableLinear,
    RhoOutOfRange,
)


class DisutilityKind(Enum):
    LINEAR = "linear"
    CES = "ces"


@dataclass(frozen=True)
class DisutilitySpec:
    """Weights and curvature of one agent's disutility.

    Linear (perfectly substitutable chores) is kept distinct from CES with
    rho > 1: the linear demand correspondence is set-valued, which changes
    every downstream signature. rho is None exactly when kind is LINEAR.
    """

    kind: DisutilityKind
    weights: np.ndarray
    rho: float | None = None

    @property
    def is_linear(self) -> bool:
        return self.kind is DisutilityKind.LINEAR

    @property
    def sigma(self) -> float:
        """Dual exponent rho / (rho - 1) of a CES spec."""
        if self.rho is None:
            raise NotApplicableLinear("sigma is defined only for CES specs")
        return self.rho / (self.rho - 1.0)

    @staticmethod
    def linear(weights: Sequence[float]) -> "DisutilitySpec":
        return DisutilitySpec(DisutilityKind.LINEAR, _as_weights(weights), None)

    @staticmethod
    def ces(weights: Sequence[float], rho: float) -> "DisutilitySpec":
        return DisutilitySpec(DisutilityKind.CES, _as_weights(weights), float(rho))


def _as_weights(w: Sequence[float]) -> np.ndarray:
    arr = np.asarray(w, dtype=float).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Market:
    """Immutable problem instance: budgets plus one disutility spec per agent.

    budget_sum caches ||B||_1, the total price mass conserved by the
    relative price dynamics. Construct via ``validate`` (or the ``from_*``
    helpers, which validate).
    """

    n: int
    m: int
    budgets: np.ndarray
    disutilities: tuple[DisutilitySpec, ...]
    budget_sum: float

    @property
    def is_linear(self) -> bool:
        return all(s.is_linear for s in self.disutilities)

    @property
    def is_ces(self) -> bool:
        return all(not s.is_linear for s in self.disutilities)

    def weight_matrix(self) -> np.ndarray:
        """Dense (n, m) matrix of disutility weights."""
        return np.vstack([s.weights for s in self.disutilities])

    def rho_vector(self) -> np.ndarray:
        """Per-agent rho, with 1.0 marking linear agents."""
        return np.array(
            [1.0 if s.is_linear else s.rho for s in self.disutilities], dtype=float
        )

    def to_dict(self) -> dict:
        agents = []
        for b, s in zip(self.budgets, self.disutilities):
            dis: dict = {"kind": s.kind.value, "d": [float(x) for x in s.weights]}
            if not s.is_linear:
                dis["rho"] = float(s.rho)
            agents.append({"budget": float(b), "disutility": dis})
        return {"chores": self.m, "agents": agents}


def validate(
    budgets: Sequence[float] | np.ndarray,
    disutilities: Sequence[DisutilitySpec],
    m: int | None = None,
) -> Market:
    """Check all instance invariants and return the immutable market.

    Raises
    ------
    NonPositiveBudget, NonPositiveWeight, RhoOutOfRange, DimensionMismatch
        On the corresponding violated invariant.
    """
    b = np.asarray(budgets, dtype=float).reshape(-1).copy()
    specs = tuple(disutilities)
    n = len(specs)
    if n < 1 or b.shape != (n,):
        raise DimensionMismatch(
            f"need one budget per agent: {b.shape[0]} budgets, {n} disutility specs"
        )
    if not np.all(np.isfinite(b)) or np.any(b <= 0):
        raise NonPositiveBudget(f"budgets must be finite and > 0, got {b.tolist()}")
    if m is None:
        m = specs[0].weights.shape[0]
    if m < 2:
        raise DimensionMismatch(f"need at least 2 chores, got m={m}")
    for i, s in enumerate(specs):
        w = s.weights
        if w.shape != (m,):
            raise DimensionMismatch(
                f"agent {i}: weight vector has length {w.shape[0]}, expected {m}"
            )
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise NonPositiveWeight(f"agent {i}: weights must be finite and > 0")
        if s.is_linear:
            if s.rho is not None:
                raise RhoOutOfRange(f"agent {i}: linear spec must not carry rho")
        else:
            if s.rho is None or not np.isfinite(s.rho):
                raise RhoOutOfRange(f"agent {i}: CES spec needs a finite rho")
            if s.rho <= 1.0:
                raise RhoOutOfRange(
                    f"agent {i}: CES requires rho > 1 (rho=1 must use the linear kind)"
                )
    b.setflags(write=False)
    return Market(n=n, m=int(m), budgets=b, disutilities=specs, budget_sum=float(b.sum()))


# ---------------------------------------------------------------------------
# Structural moduli
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Moduli:
    """Structural constants that gate every step-size and bound downstream.

    nu
        Per-agent floor on marginal-disutility ratios over the relevant
        allocation region; linear: min_{j,j'} d_ij/d_ij'; CES: that ratio
        floor times (||B||_1 / (4 n m^2 B_i))^(rho-1).
    ell0
        Price floor (||B||_1 / 3m) * min_i nu_i: chores priced below it are
        strictly under-demanded, which is what lets the dynamics skip
        projection.
    r_inf
        Per-agent sup of ||x||_inf over the unit disutility sublevel set:
        (min_j d_ij)^(-1/rho) for CES, (min_j d_ij)^(-1) for linear.
    delta_lb
        Per-agent lower bound on the largest uniform bundle inside the unit
        sublevel set: (m max_j d_ij)^(-1/rho) for CES; exact value
        (sum_j d_ij)^(-1) for linear.
    """

    nu: np.ndarray
    ell0: float
    r_inf: np.ndarray
    delta_lb: np.ndarray

    def step_cap(self, budget_sum: float) -> float:
        """No-projection step cap ell0^2 / (2 ||B||_1)."""
        return self.ell0 * self.ell0 / (2.0 * budget_sum)


def compute_nu(market: Market) -> np.ndarray:
    """Per-agent marginal-ratio floor nu_i (strictly positive)."""
    out = np.empty(market.n)
    for i, s in enumerate(market.disutilities):
        w = s.weights
        ratio_floor = float(w.min() / w.max())
        if s.is_linear:
            out[i] = ratio_floor
        else:
            base = market.budget_sum / (4.0 * market.n * market.m**2 * market.budgets[i])
            out[i] = ratio_floor * base ** (s.rho - 1.0)
    return out


def compute_moduli(market: Market) -> Moduli:
    nu = compute_nu(market)
    ell0 = market.budget_sum / (3.0 * market.m) * float(nu.min())
    r_inf = np.empty(market.n)
    delta_lb = np.empty(market.n)
    for i, s in enumerate(market.disutilities):
        w = s.weights
        if s.is_linear:
            r_inf[i] = 1.0 / float(w.min())
            delta_lb[i] = 1.0 / float(w.sum())
        else:
            r_inf[i] = float(w.min()) ** (-1.0 / s.rho)
            delta_lb[i] = (market.m * float(w.max())) ** (-1.0 / s.rho)
    nu.setflags(write=False)
    r_inf.setflags(write=False)
    delta_lb.setflags(write=False)
    return Moduli(nu=nu, ell0=float(ell0), r_inf=r_inf, delta_lb=delta_lb)


# ---------------------------------------------------------------------------
# JSON instance format
# ---------------------------------------------------------------------------

_TOP_KEYS = {"chores", "agents"}
_AGENT_KEYS = {"budget", "disutility"}
_DIS_KEYS = {"kind", "d", "rho"}


def market_from_dict(doc: dict) -> Market:
    """Parse and validate the instance document.

    Schema: {"chores": m, "agents": [{"budget": b,
    "disutility": {"kind": "linear"|"ces", "d": [...], "rho": r?}}]}.
    Unknown fields are rejected; "rho" is allowed only with kind "ces".
    """
    if not isinstance(doc, dict):
        raise InstanceFormatError("instance document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise InstanceFormatError(f"unknown top-level fields: {sorted(unknown)}")
    if "chores" not in doc or "agents" not in doc:
        raise InstanceFormatError("instance needs 'chores' and 'agents'")
    m = doc["chores"]
    if not isinstance(m, int) or isinstance(m, bool):
        raise InstanceFormatError("'chores' must be an integer")
    agents = doc["agents"]
    if not isinstance(agents, list) or not agents:
        raise InstanceFormatError("'agents' must be a non-empty list")
    budgets = []
    specs = []
    for idx, a in enumerate(agents):
        if not isinstance(a, dict):
            raise InstanceFormatError(f"agent {idx} must be an object")
        unknown = set(a) - _AGENT_KEYS
        if unknown:
            raise InstanceFormatError(f"agent {idx}: unknown fields {sorted(unknown)}")
        if "budget" not in a or "disutility" not in a:
            raise InstanceFormatError(f"agent {idx} needs 'budget' and 'disutility'")
        if not isinstance(a["budget"], (int, float)) or isinstance(a["budget"], bool):
            raise InstanceFormatError(f"agent {idx}: 'budget' must be a number")
        budgets.append(float(a["budget"]))
        dis = a["disutility"]
        if not isinstance(dis, dict):
            raise InstanceFormatError(f"agent {idx}: 'disutility' must be an object")
        unknown = set(dis) - _DIS_KEYS
        if unknown:
            raise InstanceFormatError(
                f"agent {idx}: unknown disutility fields {sorted(unknown)}"
            )
        kind = dis.get("kind")
        if kind not in ("linear", "ces"):
            raise InstanceFormatError(f"agent {idx}: kind must be 'linear' or 'ces'")
        d = dis.get("d")
        if not isinstance(d, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in d
        ):
            raise InstanceFormatError(f"agent {idx}: 'd' must be a list of numbers")
        if kind == "linear":
            if "rho" in dis:
                raise InstanceFormatError(
                    f"agent {idx}: 'rho' is not allowed for linear disutilities"
                )
            specs.append(DisutilitySpec.linear(d))
        else:
            if "rho" not in dis:
                raise InstanceFormatError(f"agent {idx}: CES disutility needs 'rho'")
            if not isinstance(dis["rho"], (int, float)) or isinstance(dis["rho"], bool):
                raise InstanceFormatError(f"agent {idx}: 'rho' must be a number")
            specs.append(DisutilitySpec.ces(d, float(dis["rho"])))
    return validate(budgets, specs, m=m)


def load_market(path) -> Market:
    with open(path, "r", encoding="utf-8") as fh:
        return market_from_dict(json.load(fh))


def dump_market(market: Market, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(market.to_dict(), fh, indent=2)
        fh.write("\n")
