"""Explicit environment coupling and trace amplitudes.

Every arm carries a two-level environment starting in ``|chi>``.  When the
photon traverses an arm the environment evolves as
``|chi> -> eta |chi> + eps |chi_perp>`` with ``eta = sqrt(1 - eps^2)``.
The joint state is kept as a sum over excitation sets: for each set ``S`` of
arms whose environment is flipped, a photon wave over arms (and final
locations).  Sets larger than the truncation order ``K`` are discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .engine import DARK_TOL, transfer, wiring
from .netlist import TERMINALS, Concrete
from .tsvf import ImpossiblePostSelection

Excitation = frozenset


@dataclass(frozen=True)
class EnvState:
    eps: float
    order: int | None  # truncation order, None for exact
    terms: Mapping[tuple[str, frozenset], complex]  # (final location, excitations)
    arms: tuple[str, ...]

    @property
    def eta(self) -> float:
        return math.sqrt(1.0 - self.eps ** 2)

    def norm(self) -> float:
        return float(sum(abs(v) ** 2 for v in self.terms.values()))

    def deficit_bound(self) -> float:
        """Upper bound on the probability lost to truncation."""
        if self.order is None:
            return 0.0
        return len(self.arms) * self.eps ** (self.order + 1)

    def at(self, location: str) -> dict[frozenset, complex]:
        return {s: v for (loc, s), v in self.terms.items() if loc == location}


def evolve_env(cn: Concrete, eps: float, order: int | None = 3) -> EnvState:
    """Propagate photon and arm environments together."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if order is not None and order < 1:
        raise ValueError("truncation order must be at least 1")
    eta = math.sqrt(1.0 - eps * eps)
    w = wiring(cn.net)
    idx = {a: k for k, a in enumerate(w.arms)}
    n = len(w.arms)
    branches: dict[frozenset, np.ndarray] = {frozenset(): np.zeros(n + 1, dtype=complex)}
    terms: dict[tuple[str, frozenset], complex] = {}

    def couple(arms: Sequence[str]) -> None:
        for a in arms:
            k = idx[a]
            spawned: list[tuple[frozenset, complex]] = []
            for s, vec in branches.items():
                v = vec[k]
                if v == 0:
                    continue
                vec[k] = eta * v
                if order is None or len(s) < order:
                    spawned.append((s | {a}, eps * v))
            for s, v in spawned:
                vec = branches.get(s)
                if vec is None:
                    vec = branches[s] = np.zeros(n + 1, dtype=complex)
                vec[k] += v

    for name in w.order:
        kind = w.kind[name]
        if kind == "source":
            a = w.outputs[name][0]
            branches[frozenset()][idx[a]] = 1.0
            couple([a])
            continue
        ins = [idx[a] if a else n for a in w.inputs[name]]  # index n is a vacuum slot
        if kind in TERMINALS:
            for s, vec in branches.items():
                if vec[ins[0]] != 0:
                    terms[(name, s)] = complex(vec[ins[0]])
            continue
        m = transfer(cn, name)
        outs = [idx[a] for a in w.outputs[name]]
        for s, vec in branches.items():
            vin = vec[ins]
            if kind == "shutter":
                lost = math.sqrt(cn.opacity[name]) * vin[0]
                if lost != 0:
                    terms[(f"absorbed:{name}", s)] = complex(lost)
            vec[outs] = m @ vin
        couple(w.outputs[name])
    return EnvState(eps, order, terms, w.arms)


def _baseline(st: EnvState, detector: str) -> complex:
    base = st.terms.get((detector, frozenset()), 0j)
    if abs(base) < DARK_TOL:
        raise ImpossiblePostSelection(f"{detector} is dark without excitations")
    return base


def local_trace(st: EnvState, detector: str, arm: str) -> complex:
    """Amplitude of the single excitation at ``arm``, relative to no excitation."""
    base = _baseline(st, detector)
    return st.terms.get((detector, frozenset([arm])), 0j) / base


def joint_trace(st: EnvState, detector: str, pair: Iterable[str]) -> complex:
    """Amplitude of the double excitation at both arms, relative to no excitation."""
    pair = frozenset(pair)
    if len(pair) != 2:
        raise ValueError("pair must name two distinct arms")
    base = _baseline(st, detector)
    return st.terms.get((detector, pair), 0j) / base


def trace_outside(st: EnvState, detector: str, arms: Iterable[str]) -> tuple[float, frozenset]:
    """Largest relative amplitude among clicked terms touching ``arms``."""
    arms = set(arms)
    base = _baseline(st, detector)
    best, which = 0.0, frozenset()
    for (loc, s), v in st.terms.items():
        if loc == detector and s & arms and abs(v) > best:
            best, which = abs(v), s
    return best / abs(base), which


def excitations_outside(st: EnvState, detectors: Iterable[str], arms: Iterable[str]) -> float:
    """Total absolute amplitude of clicked terms with an excitation in ``arms``."""
    arms = set(arms)
    dets = set(detectors)
    return float(sum(abs(v) for (loc, s), v in st.terms.items() if loc in dets and s & arms))


@dataclass(frozen=True)
class OrderFit:
    exponent: float | None  # None when the quantity vanishes identically
    intercept: float
    residual: float
    grid: tuple[float, ...]
    values: tuple[float, ...]

    @property
    def exact_zero(self) -> bool:
        return self.exponent is None


def order_fit(quantity: Callable[[float], complex | float], grid: Sequence[float],
              zero_tol: float = 1e-300) -> OrderFit:
    """Least-squares slope of ``log|q(eps)|`` against ``log eps``."""
    grid = tuple(float(g) for g in grid)
    if len(grid) < 3:
        raise ValueError("need at least three grid points")
    if any(not 0.0 < g <= 0.05 for g in grid):
        raise ValueError("grid values must lie in (0, 0.05]")
    vals = tuple(float(abs(quantity(g))) for g in grid)
    if all(v <= zero_tol for v in vals):
        return OrderFit(None, float("-inf"), 0.0, grid, vals)
    if any(v <= zero_tol for v in vals):
        raise FloatingPointError("quantity vanishes on part of the grid")
    x = np.log(grid)
    y = np.log(vals)
    a = np.vstack([x, np.ones_like(x)]).T
    (slope, icept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = float(np.sqrt(np.mean((a @ np.array([slope, icept]) - y) ** 2)))
    return OrderFit(float(slope), float(icept), resid, grid, vals)


DEFAULT_GRID = (0.005, 0.01, 0.02, 0.03, 0.05)
