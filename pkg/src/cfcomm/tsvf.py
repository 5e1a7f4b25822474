"""Backward-evolving states, weak values and projective presence tests.

For a click at detector ``D`` the backward state is seeded with unit
amplitude on the arm feeding ``D`` and carried upstream by the adjoint of
each element.  On every arm the weak value of the local projector is
``w = conj(phi) * psi / A`` with ``A`` the forward amplitude at ``D``.
Because elements act unitarily (shutters as a contraction applied to both
waves), ``sum(conj(phi) * psi)`` over any cut of the arm graph equals ``A``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .engine import DARK_TOL, ForwardState, adjoint, propagate, transfer, wiring
from .netlist import TERMINALS, Concrete, Network

PRESENCE_TOL = 1e-9


class ImpossiblePostSelection(ValueError):
    """Post-selection on an outcome of zero probability."""


@dataclass(frozen=True)
class BackwardState:
    detector: str
    amplitude: Mapping[str, complex]


@dataclass(frozen=True)
class TwoStateVector:
    forward: ForwardState
    backward: BackwardState

    @property
    def overlap(self) -> complex:
        return self.forward.terminal[self.backward.detector]


@dataclass(frozen=True)
class TraceMap:
    detector: str
    weak: Mapping[str, complex]
    site: Mapping[str, str]
    threshold: float = PRESENCE_TOL

    def present(self, arm: str) -> bool:
        return bool(abs(self.weak[arm]) > self.threshold)

    def presence(self) -> dict[str, bool]:
        return {a: self.present(a) for a in self.weak}

    def site_max(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for a, w in self.weak.items():
            s = self.site[a]
            out[s] = max(out.get(s, 0.0), float(abs(w)))
        return out


@dataclass(frozen=True)
class RegionVerdict:
    present: bool
    max_abs: float
    arm: str | None  # arm attaining the maximum


def backward(cn: Concrete, detector: str, fwd: ForwardState | None = None) -> BackwardState:
    """Propagate a unit amplitude from ``detector`` back towards the source."""
    w = wiring(cn.net)
    if w.kind.get(detector) not in TERMINALS:
        raise KeyError(f"unknown detector {detector!r}")
    fwd = fwd or propagate(cn)
    if abs(fwd.terminal[detector]) < DARK_TOL:
        raise ImpossiblePostSelection(f"{detector} is dark: post-selection has probability 0")
    phi = adjoint(cn, detector)
    return BackwardState(detector, phi)


def two_state(cn: Concrete, detector: str) -> TwoStateVector:
    fwd = propagate(cn)
    return TwoStateVector(fwd, backward(cn, detector, fwd))


def weak_values(fwd: ForwardState, bwd: BackwardState, net: Network | None = None,
                threshold: float = PRESENCE_TOL) -> TraceMap:
    """Per-arm weak values of the arm projectors."""
    amp = fwd.terminal[bwd.detector]
    if abs(amp) < DARK_TOL:
        raise ImpossiblePostSelection(f"{bwd.detector} has zero overlap")
    weak = {a: np.conj(bwd.amplitude[a]) * fwd.amplitude[a] / amp for a in fwd.amplitude}
    sites = {a.name: a.site for a in net.arms} if net is not None else {a: "" for a in weak}
    return TraceMap(bwd.detector, weak, sites, threshold)


def trace_map(cn: Concrete, detector: str, threshold: float = PRESENCE_TOL) -> TraceMap:
    tsv = two_state(cn, detector)
    return weak_values(tsv.forward, tsv.backward, cn.net, threshold)


def region_trace(tm: TraceMap, region: Iterable[str], sites: Iterable[str] | None = None) -> RegionVerdict:
    """Is the photon weakly present anywhere in the given sites?"""
    region = set(region)
    if not region:
        raise ValueError("region must be nonempty")
    known = set(sites) if sites is not None else set(tm.site.values())
    unknown = region - known
    if unknown:
        raise KeyError(f"unknown site(s): {sorted(unknown)}")
    best, arm = 0.0, None
    for a, w in tm.weak.items():
        if tm.site[a] in region and abs(w) >= best:
            if abs(w) > best or arm is None:
                best, arm = abs(w), a
    return RegionVerdict(bool(best > tm.threshold), float(best), arm)


def relabel(tm: TraceMap, mapping: Mapping[str, str]) -> TraceMap:
    """Same weak values under a different arm-to-site assignment."""
    site = dict(tm.site)
    site.update({a: s for a, s in mapping.items() if a in site})
    return TraceMap(tm.detector, tm.weak, site, tm.threshold)


def cuts(net: Network) -> list[tuple[str, ...]]:
    """Frontier cuts: arms leaving each prefix of the topological order.

    Terminals never join a prefix, so every cut separates the source from
    all terminals.
    """
    w = wiring(net)
    inner = [n for n in w.order if w.kind[n] not in TERMINALS]
    out = []
    for k in range(1, len(inner) + 1):
        head = set(inner[:k])
        cut = tuple(a.name for a in net.arms if a.src in head and a.dst not in head)
        if cut and cut not in out:
            out.append(cut)
    return out


# ----------------------------------------------------------------------------
# projective presence measurements

def _masked_propagate(cn: Concrete, inject: tuple[str, complex] | None,
                      zero: frozenset[str]) -> dict[str, complex]:
    """Forward pass restarted at ``inject`` (or the source) with ``zero`` arms cleared."""
    w = wiring(cn.net)
    amp = {a: 0j for a in w.arms}
    if inject is not None:
        amp[inject[0]] = inject[1]
    for name in w.order:
        k = w.kind[name]
        if k in TERMINALS:
            continue
        if k == "source":
            if inject is None:
                a = w.outputs[name][0]
                amp[a] = 0j if a in zero else 1.0 + 0j
            continue
        res = transfer(cn, name) @ np.array([amp[a] if a else 0j for a in w.inputs[name]])
        for a, v in zip(w.outputs[name], res):
            if inject is not None and a == inject[0]:
                continue
            amp[a] = 0j if a in zero else complex(v)
    return amp


@dataclass(frozen=True)
class PresenceResult:
    arms: tuple[str, ...]
    detector: str
    patterns: Mapping[tuple[bool, ...], float]  # P(pattern | detector)
    joint: Mapping[tuple[bool, ...], float]  # P(pattern and detector)

    @property
    def found_any(self) -> float:
        return float(sum(p for pat, p in self.patterns.items() if any(pat)))

    def found(self, arm: str) -> float:
        k = self.arms.index(arm)
        return float(sum(p for pat, p in self.patterns.items() if pat[k]))


def presence_probability(cn: Concrete, arms: Sequence[str], detector: str) -> PresenceResult:
    """Insert ideal which-arm measurements and condition on ``detector``.

    Measurements act in propagation order.  Each of the ``2^k`` outcome
    branches is propagated separately: a positive result restarts the wave
    from the measured arm alone, a negative one removes that arm.
    """
    net = cn.net
    w = wiring(net)
    if len(set(arms)) != len(arms):
        raise ValueError("arms must be distinct")
    for a in arms:
        if a not in w.arm_src:
            raise KeyError(f"unknown arm {a!r}")
    if w.kind.get(detector) not in TERMINALS:
        raise KeyError(f"unknown detector {detector!r}")
    rank = {a: k for k, a in enumerate(w.arms)}
    order = sorted(arms, key=rank.get)
    target = w.terminal_arm(detector)
    joint: dict[tuple[bool, ...], float] = {}
    for outcome in itertools.product((False, True), repeat=len(order)):
        inject: tuple[str, complex] | None = None
        zero: set[str] = set()
        amp = _masked_propagate(cn, None, frozenset())
        alive = True
        for a, hit in zip(order, outcome):
            v = amp[a]
            if hit:
                if abs(v) == 0.0:
                    alive = False
                    break
                inject, zero = (a, v), set()
            else:
                zero.add(a)
            amp = _masked_propagate(cn, inject, frozenset(zero))
        pat = tuple(outcome[order.index(a)] for a in arms)
        joint[pat] = abs(amp[target]) ** 2 if alive else 0.0
    total = sum(joint.values())
    if total < DARK_TOL ** 2:
        raise ImpossiblePostSelection(f"{detector} cannot click in any branch")
    return PresenceResult(tuple(arms), detector, {k: v / total for k, v in joint.items()}, joint)
