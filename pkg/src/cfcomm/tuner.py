"""Dark-port phase tuning by multistart damped least squares.

Unknowns are free phase parameters (radians) and, optionally, reflectance
parameters.  A reflectance ``R`` is optimised through ``R = sin(u)^2`` so
the search is unconstrained.  The residual vector stacks real and imaginary
parts of the amplitude at every constrained terminal.

Damping schedule (Levenberg-Marquardt, Nielsen variant): start with
``lam = 1e-3 * max(diag(J^T J))``; on an accepted step multiply ``lam`` by
``max(1/3, 1 - (2 rho - 1)^3)`` and reset ``nu = 2``; on a rejected step
multiply ``lam`` by ``nu`` and double ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .engine import adjoint, propagate, wiring
from .netlist import Concrete, Network, Param, apply_config


class Unsatisfiable(RuntimeError):
    """No start reached the requested residual tolerance."""

    def __init__(self, best: "Solution"):
        self.best = best
        super().__init__(f"constraint-unsatisfiable: best residual {best.norm:.3e}")


@dataclass(frozen=True)
class ConstraintSet:
    dark: tuple[tuple[str, str], ...]  # (config name, terminal)
    phases: tuple[str, ...]
    ratios: tuple[str, ...] = ()

    @property
    def unknowns(self) -> tuple[str, ...]:
        return self.phases + self.ratios


@dataclass(frozen=True)
class Solution:
    assignment: Mapping[str, float]
    norm: float
    success: bool
    start: int
    iterations: int
    norms: tuple[float, ...] = field(default=(), repr=False)


def free_ratio_network(net: Network) -> Network:
    """Turn every literal beam-splitter ratio into a free reflectance parameter."""
    params = list(net.params)
    elements = []
    taken = {p.name for p in params}
    for e in net.elements:
        if e.kind == "bs" and isinstance(e.ratio, tuple):
            name = f"R_{e.name}"
            while name in taken:
                name += "_"
            taken.add(name)
            params.append(Param(name, None))
            elements.append(replace(e, ratio=name, swap=False))
        else:
            elements.append(e)
    return replace(net, params=tuple(params), elements=tuple(elements))


def protocol_dark(net: Network) -> list[tuple[str, str]]:
    """Default dark ports for a two-configuration protocol network.

    D1 when open and D2 when blocked.  A chained block needs more to pin every
    stage.  In ``calibK`` (stages before K blocked; ``open`` counts as K = 0)
    D1 and the dumps of all stages after K must be dark.  Stages are told
    apart by the primes ``chain`` appends to copied names.
    """
    configs = [c.name for c in net.configs]
    dets = set(net.detectors())
    out: list[tuple[str, str]] = []
    if "open" in configs and "D1" in dets:
        out.append(("open", "D1"))
    if "blocked" in configs and "D2" in dets:
        out.append(("blocked", "D2"))
    stages = {"open": 0}
    stages.update({c: int(c[5:]) for c in configs if c.startswith("calib") and c[5:].isdigit()})
    dumps = [m for blk in net.blocks for m in blk.elements if net.element(m).kind == "dump"]
    for cfg, k in stages.items():
        if cfg not in configs:
            continue
        if k and "D1" in dets:
            out.append((cfg, "D1"))
        # stages after k only see light leaking from a mistuned stage k
        out += [(cfg, m) for m in dumps if m.count("'") > k]
    return out


def constraints(net: Network, dark: Sequence[tuple[str, str]]) -> ConstraintSet:
    """Constraint set with every free parameter of ``net`` as an unknown."""
    ratio_refs = {e.ratio for e in net.elements if e.kind == "bs" and isinstance(e.ratio, str)}
    free = net.free_params
    phases = tuple(p for p in free if p not in ratio_refs)
    ratios = tuple(p for p in free if p in ratio_refs)
    if not free:
        raise ValueError("no free parameters to tune")
    terms = set(net.terminals())
    configs = {c.name for c in net.configs}
    for cfg, term in dark:
        if cfg is not None and cfg not in configs:
            raise KeyError(f"unknown config {cfg!r}")
        if term not in terms:
            raise KeyError(f"unknown terminal {term!r}")
    return ConstraintSet(tuple(dark), phases, ratios)


def _assignment(cs: ConstraintSet, x: np.ndarray) -> dict[str, float]:
    out = {}
    for p, v in zip(cs.phases, x):
        w = float(np.mod(v, 2 * math.pi))
        out[p] = 0.0 if w >= 2 * math.pi else w  # mod of a tiny negative rounds up to 2pi
    for p, v in zip(cs.ratios, x[len(cs.phases):]):
        out[p] = float(np.sin(v) ** 2)
    return out


def _check_bounds(cs: ConstraintSet, assignment: Mapping[str, float]) -> None:
    missing = set(cs.unknowns) - set(assignment)
    if missing:
        raise ValueError(f"assignment misses {sorted(missing)}")
    for p in cs.phases:
        if not 0.0 <= assignment[p] < 2 * math.pi:
            raise ValueError(f"phase {p} = {assignment[p]} outside [0, 2pi)")
    for p in cs.ratios:
        if not 0.0 <= assignment[p] <= 1.0:
            raise ValueError(f"reflectance {p} = {assignment[p]} outside [0, 1]")


def residual(net: Network, cs: ConstraintSet, assignment: Mapping[str, float]) -> np.ndarray:
    """Complex amplitudes at the constrained terminals."""
    _check_bounds(cs, assignment)
    fixed = net.with_params(dict(assignment))
    out = []
    for cfg, term in cs.dark:
        cn = apply_config(fixed, cfg)
        out.append(propagate(cn).terminal[term])
    return np.array(out, dtype=complex)


def _element_derivatives(cn: Concrete, name: str, param: str) -> list[np.ndarray]:
    """Partial derivatives of an element matrix with respect to ``param``."""
    e = cn.net.element(name)
    overridden = set()
    if cn.config is not None:
        overridden = {s for el, s, _ in cn.net.config(cn.config).settings if el == name}
    outs = []
    if e.kind == "bs":
        sign = -1.0 if e.swap and "swap" not in overridden else 1.0
        r = cn.reflectance[name]
        ph = np.exp(1j * cn.phase[name])
        if e.phase == param and "phase" not in overridden:
            m = np.array([[math.sqrt(r), 1j * math.sqrt(1 - r)], [0, 0]], dtype=complex)
            m[0] *= 1j * ph
            outs.append(m)
        if e.ratio == param and not overridden & {"ratio", "swap"}:
            # d/dR of [[sqrt R, i sqrt T], [i sqrt T, sqrt R]], T = 1 - R
            dr = 0.5 / math.sqrt(r) if r > 0 else 0.0
            dt = -0.5 / math.sqrt(1 - r) if r < 1 else 0.0
            m = np.array([[dr, 1j * dt], [1j * dt, dr]], dtype=complex)
            m[0] *= ph
            outs.append(sign * m)
    elif e.kind in ("phase", "mirror") and e.phase == param and "phase" not in overridden:
        outs.append(np.array([[1j * np.exp(1j * cn.phase[name])]]))
    return outs


def jacobian_complex(net: Network, cs: ConstraintSet, assignment: Mapping[str, float]) -> np.ndarray:
    """d(amplitude)/d(parameter) for every constraint (rows) and unknown (cols).

    Ratio columns are derivatives with respect to the reflectance ``R``.
    Uses one forward and one adjoint pass per constraint.
    """
    fixed = net.with_params(dict(assignment))
    jac = np.zeros((len(cs.dark), len(cs.unknowns)), dtype=complex)
    users: dict[str, list[str]] = {}
    for e in net.elements:
        for v in (e.phase, e.ratio):
            if isinstance(v, str):
                users.setdefault(v, []).append(e.name)
    for row, (cfg, term) in enumerate(cs.dark):
        cn = apply_config(fixed, cfg)
        w = wiring(net)
        psi = propagate(cn).amplitude
        phi = adjoint(cn, term)
        for col, p in enumerate(cs.unknowns):
            total = 0j
            for name in users.get(p, ()):
                vin = np.array([psi[a] if a else 0j for a in w.inputs[name]])
                vout = np.array([phi[a] for a in w.outputs[name]])
                for dm in _element_derivatives(cn, name, p):
                    total += np.vdot(vout, dm @ vin)
            jac[row, col] = total
    return jac


def _real_system(net: Network, cs: ConstraintSet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = _assignment(cs, x)
    r = residual(net, cs, a)
    jc = jacobian_complex(net, cs, a)
    nph = len(cs.phases)
    if cs.ratios:
        jc[:, nph:] *= np.sin(2 * x[nph:])  # dR/du
    return np.concatenate([r.real, r.imag]), np.vstack([jc.real, jc.imag])


def _levenberg(net: Network, cs: ConstraintSet, x0: np.ndarray, tol: float,
               max_iter: int = 300) -> tuple[np.ndarray, float, int]:
    x = x0.copy()
    r, j = _real_system(net, cs, x)
    cost = float(r @ r)
    g = j.T @ r
    a = j.T @ j
    lam = 1e-3 * max(float(np.max(np.diag(a))), 1e-12)
    nu = 2.0
    it = 0
    for it in range(1, max_iter + 1):
        if math.sqrt(cost) < tol * 1e-3 or np.max(np.abs(g)) < 1e-15:
            break
        step = np.linalg.solve(a + lam * np.eye(len(x)), -g)
        if np.linalg.norm(step) < 1e-15 * (1 + np.linalg.norm(x)):
            break
        xn = x + step
        rn, jn = _real_system(net, cs, xn)
        cn = float(rn @ rn)
        pred = float(-(step @ g) - 0.5 * step @ a @ step)
        rho = (cost - cn) / pred if pred > 0 else -1.0
        if rho > 0:
            x, r, j, cost = xn, rn, jn, cn
            g = j.T @ r
            a = j.T @ j
            lam *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
        else:
            lam *= nu
            nu *= 2.0
    return x, math.sqrt(cost), it


def solve(net: Network, cs: ConstraintSet, init: Mapping[str, float] | None = None,
          tol: float = 1e-10, starts: int = 16, seed: int = 0, raise_on_failure: bool = False) -> Solution:
    """Minimise the summed squared dark-port amplitudes.

    Runs ``starts`` random initialisations (plus ``init`` if given) and keeps
    the lowest residual norm, ties broken by start index.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if starts < 1:
        raise ValueError("need at least one start")
    rng = np.random.default_rng(seed)
    nph, nr = len(cs.phases), len(cs.ratios)
    inits = []
    if init is not None:
        x = [init[p] for p in cs.phases] + [math.asin(math.sqrt(init[p])) for p in cs.ratios]
        inits.append(np.array(x, dtype=float))
    for _ in range(starts):
        inits.append(np.concatenate([rng.uniform(0, 2 * math.pi, nph), rng.uniform(0.05, math.pi / 2 - 0.05, nr)]))
    best: tuple[float, int, np.ndarray, int] | None = None
    norms = []
    for k, x0 in enumerate(inits):
        x, nrm, it = _levenberg(net, cs, x0, tol)
        norms.append(nrm)
        if best is None or nrm < best[0]:
            best = (nrm, k, x, it)
    nrm, k, x, it = best
    sol = Solution(_assignment(cs, x), nrm, nrm < tol, k, it, tuple(norms))
    if raise_on_failure and not sol.success:
        raise Unsatisfiable(sol)
    return sol


def tune(net: Network, dark: Sequence[tuple[str, str]], tol: float = 1e-10, starts: int = 16,
         seed: int = 0, free_ratios: bool = False) -> tuple[Network, Solution]:
    """Solve and write the solution back into the network's parameters."""
    if free_ratios:
        net = free_ratio_network(net)
    cs = constraints(net, dark)
    sol = solve(net, cs, tol=tol, starts=starts, seed=seed)
    if not sol.success:
        raise Unsatisfiable(sol)
    return net.with_params(dict(sol.assignment)), sol
