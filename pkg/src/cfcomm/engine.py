"""Single-photon amplitude propagation through a concrete network.

Beam splitter convention, inputs ``(a, b)`` to outputs ``(c, d)``::

    c = e^{i theta} (sqrt(R) a + i sqrt(T) b)
    d =              i sqrt(T) a + sqrt(R) b

Phase plates and mirrors multiply by ``e^{i theta}``; a shutter of opacity
``o`` transmits ``sqrt(1 - o)`` and records ``o |amp|^2`` as absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from .netlist import TERMINALS, Concrete, Network

DARK_TOL = 1e-9
CONSERVATION_TOL = 1e-12


@dataclass(frozen=True)
class Wiring:
    """Port-to-arm lookup tables for a network, in topological order."""

    order: tuple[str, ...]
    kind: Mapping[str, str]
    inputs: Mapping[str, tuple[str | None, ...]]  # element -> arms feeding a, b (None: vacuum)
    outputs: Mapping[str, tuple[str, ...]]  # element -> arms leaving ports c, d
    arm_src: Mapping[str, str]
    arm_dst: Mapping[str, str]
    arms: tuple[str, ...]  # arms sorted by source position

    def terminal_arm(self, terminal: str) -> str:
        return self.inputs[terminal][0]


@lru_cache(maxsize=256)
def wiring(net: Network) -> Wiring:
    order = net.topo_order()
    by_port = {(a.dst, a.dst_port): a.name for a in net.arms}
    by_out = {(a.src, a.src_port): a.name for a in net.arms}
    inputs, outputs, kind = {}, {}, {}
    for e in net.elements:
        kind[e.name] = e.kind
        inputs[e.name] = tuple(by_port.get((e.name, p)) for p in e.inputs)
        outputs[e.name] = tuple(by_out[(e.name, p)] for p in e.outputs)
    pos = {n: k for k, n in enumerate(order)}
    arms = tuple(sorted((a.name for a in net.arms), key=lambda n: (pos[net.arm(n).src], n)))
    return Wiring(
        order, kind, inputs, outputs,
        {a.name: a.src for a in net.arms}, {a.name: a.dst for a in net.arms}, arms,
    )


def transfer(cn: Concrete, name: str) -> np.ndarray:
    """Local scattering matrix of one element (rows: outputs, cols: inputs)."""
    # the concrete tables already say what the element is
    if name in cn.opacity:
        kind = "shutter"
    elif name in cn.reflectance:
        kind = "bs"
    elif name in cn.phase:
        kind = "phase"
    else:
        kind = cn.net.element(name).kind
    if kind == "bs":
        r = np.sqrt(cn.reflectance[name])
        t = np.sqrt(1.0 - cn.reflectance[name])
        m = np.array([[r, 1j * t], [1j * t, r]], dtype=complex)
        m[0] *= np.exp(1j * cn.phase[name])
        return m
    if kind == "phase":
        return np.array([[np.exp(1j * cn.phase[name])]])
    if kind == "shutter":
        return np.array([[np.sqrt(1.0 - cn.opacity[name])]], dtype=complex)
    raise ValueError(f"{kind} has no transfer matrix")


@dataclass(frozen=True)
class ForwardState:
    amplitude: Mapping[str, complex]  # per arm
    terminal: Mapping[str, complex]  # per detector or dump
    absorbed: Mapping[str, float]  # per shutter

    def probabilities(self) -> dict[str, float]:
        out = {k: abs(v) ** 2 for k, v in self.terminal.items()}
        out.update(self.absorbed)
        return out


@dataclass(frozen=True)
class OutcomeDistribution:
    probability: Mapping[str, float]
    detectors: tuple[str, ...]
    dumps: tuple[str, ...]
    shutters: tuple[str, ...]

    def __getitem__(self, key: str) -> float:
        return self.probability[key]

    @property
    def total(self) -> float:
        return float(sum(self.probability.values()))

    def detected(self) -> float:
        return float(sum(self.probability[d] for d in self.detectors))


def propagate_from(cn: Concrete, inject: Mapping[str, complex]) -> dict[str, complex]:
    """Propagate amplitudes injected on arms downstream, returning every arm.

    Injected arms keep their given value; all other arms start empty.
    """
    w = wiring(cn.net)
    amp = {a: 0j for a in w.arms}
    amp.update({k: complex(v) for k, v in inject.items()})
    fixed = set(inject)
    for name in w.order:
        k = w.kind[name]
        if k == "source" or k in TERMINALS:
            continue
        ins = w.inputs[name]
        outs = w.outputs[name]
        vec = np.array([amp[a] if a else 0j for a in ins])
        res = transfer(cn, name) @ vec
        for a, v in zip(outs, res):
            if a not in fixed:
                amp[a] = complex(v)
    return amp


def adjoint(cn: Concrete, terminal: str) -> dict[str, complex]:
    """Unit amplitude at ``terminal`` carried upstream by the adjoint elements.

    ``conj(result[arm])`` is the amplitude transferred from ``arm`` to
    ``terminal``.
    """
    w = wiring(cn.net)
    phi = {a: 0j for a in w.arms}
    phi[w.terminal_arm(terminal)] = 1.0 + 0j
    for name in reversed(w.order):
        k = w.kind[name]
        if k == "source" or k in TERMINALS:
            continue
        out = np.array([phi[a] for a in w.outputs[name]])
        back = transfer(cn, name).conj().T @ out
        for a, v in zip(w.inputs[name], back):
            if a:
                phi[a] = complex(v)
    return phi


def propagate(cn: Concrete, source_amplitude: complex = 1.0) -> ForwardState:
    """Forward amplitudes on every arm for a photon emitted by the source."""
    if not np.isclose(abs(source_amplitude), 1.0, atol=1e-12):
        raise ValueError("source amplitude must have unit modulus")
    w = wiring(cn.net)
    amp: dict[str, complex] = {}
    absorbed: dict[str, float] = {}
    terminal: dict[str, complex] = {}
    for name in w.order:
        k = w.kind[name]
        if k == "source":
            amp[w.outputs[name][0]] = complex(source_amplitude)
            continue
        ins = [amp[a] if a else 0j for a in w.inputs[name]]
        if k in TERMINALS:
            terminal[name] = ins[0]
            continue
        if k == "shutter":
            absorbed[name] = float(cn.opacity[name] * abs(ins[0]) ** 2)
        res = transfer(cn, name) @ np.array(ins)
        for a, v in zip(w.outputs[name], res):
            amp[a] = complex(v)
    return ForwardState(amp, terminal, absorbed)


def outcome_distribution(cn: Concrete) -> OutcomeDistribution:
    fwd = propagate(cn)
    probs = fwd.probabilities()
    total = sum(probs.values())
    if abs(total - 1.0) > CONSERVATION_TOL:
        raise FloatingPointError(f"probability not conserved: total {total!r}")
    w = wiring(cn.net)
    det = tuple(n for n in w.order if w.kind[n] == "detector")
    dumps = tuple(n for n in w.order if w.kind[n] == "dump")
    shut = tuple(n for n in w.order if w.kind[n] == "shutter")
    return OutcomeDistribution(probs, det, dumps, shut)


def dark_ports(cn: Concrete, tol: float = DARK_TOL) -> set[str]:
    """Terminals whose amplitude magnitude is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    fwd = propagate(cn)
    return {t for t, v in fwd.terminal.items() if abs(v) < tol}


def _region_members(net: Network, region: Iterable[str]) -> tuple[set[str], set[str]]:
    sites = set(region)
    unknown = sites - set(net.sites)
    if unknown:
        raise KeyError(f"unknown site(s): {sorted(unknown)}")
    arms = {a.name for a in net.arms if a.site in sites}
    elems = {e.name for e in net.elements if e.site in sites}
    return arms, elems


def classical_path(
    cn: Concrete,
    fwd: ForwardState,
    region: Iterable[str],
    detector: str,
    tau: float = DARK_TOL,
) -> bool:
    """Is there a source-to-detector path of nonvanishing amplitude through ``region``?

    Every arm on the path must carry ``|psi| > tau``; the path visits the
    region if any of its arms or elements is labelled with a region site.
    """
    net = cn.net
    w = wiring(net)
    if w.kind.get(detector) not in TERMINALS:
        raise KeyError(f"unknown detector {detector!r}")
    in_arms, in_elems = _region_members(net, region)
    succ: dict[str, list[str]] = {}
    for name in w.order:
        for a_in in w.inputs[name]:
            if a_in:
                succ.setdefault(a_in, []).extend(w.outputs[name])
    src = net.source().name
    start = w.outputs[src][0]
    target = w.terminal_arm(detector)
    if abs(fwd.amplitude[start]) <= tau:
        return False
    visited = set()
    stack = [(start, src in in_elems or start in in_arms)]
    while stack:
        arm, hit = stack.pop()
        if (arm, hit) in visited:
            continue
        visited.add((arm, hit))
        if arm == target and (hit or detector in in_elems):
            return True
        through = w.arm_dst[arm]
        for nxt in succ.get(arm, ()):
            if abs(fwd.amplitude[nxt]) > tau:
                stack.append((nxt, hit or nxt in in_arms or through in in_elems))
    return False
