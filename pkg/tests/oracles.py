"""Independent reference computations used by the tests.

These deliberately avoid ``cfcomm.engine``: amplitudes are obtained by
composing dense scattering matrices, or by summing over explicit paths.
"""

from __future__ import annotations

import cmath
import itertools
import math

import numpy as np

from cfcomm.netlist import Concrete


def _local(cn: Concrete, name: str) -> np.ndarray:
    e = cn.net.element(name)
    if e.kind == "bs":
        r = cn.reflectance[name]
        p = cmath.exp(1j * cn.phase[name])
        return np.array([[p * math.sqrt(r), p * 1j * math.sqrt(1 - r)],
                         [1j * math.sqrt(1 - r), math.sqrt(r)]])
    if e.kind in ("phase", "mirror"):
        return np.array([[cmath.exp(1j * cn.phase[name])]])
    if e.kind == "shutter":
        return np.array([[math.sqrt(1 - cn.opacity[name])]])
    raise ValueError(e.kind)


def _order(cn: Concrete) -> list[str]:
    """Kahn ordering computed here rather than taken from the library."""
    net = cn.net
    deps = {e.name: {a.src for a in net.arms if a.dst == e.name} for e in net.elements}
    done: list[str] = []
    while len(done) < len(deps):
        for n in sorted(deps):
            if n not in done and deps[n] <= set(done):
                done.append(n)
                break
    return done


def dense_terminal_amplitudes(cn: Concrete) -> tuple[dict[str, complex], dict[str, float]]:
    """Compose one global matrix per element over the space of all arms.

    Mode space: every arm plus one loss mode per shutter.  The photon starts
    in the source arm; each element is a full-space matrix moving amplitude
    from its input arms to its output arms.  The product of all of them,
    applied to the initial vector, gives the amplitude in terminal arms.
    """
    net = cn.net
    arms = sorted(a.name for a in net.arms)
    shutters = sorted(e.name for e in net.elements if e.kind == "shutter")
    modes = arms + [f"loss:{s}" for s in shutters]
    ix = {m: k for k, m in enumerate(modes)}
    dim = len(modes)
    total = np.eye(dim, dtype=complex)
    for name in _order(cn):
        e = net.element(name)
        if e.kind in ("source", "detector", "dump"):
            continue
        ins = [next((a.name for a in net.arms if a.dst == name and a.dst_port == p), None) for p in e.inputs]
        outs = [next(a.name for a in net.arms if a.src == name and a.src_port == p) for p in e.outputs]
        loc = _local(cn, name)
        g = np.eye(dim, dtype=complex)
        for a in ins:
            if a is not None:
                g[:, ix[a]] = 0
        for o in outs:
            g[ix[o], ix[o]] = 0
        for j, a in enumerate(ins):
            if a is None:
                continue
            for i, o in enumerate(outs):
                g[ix[o], ix[a]] = loc[i, j]
            if e.kind == "shutter":
                g[ix[f"loss:{name}"], ix[a]] = math.sqrt(cn.opacity[name])
        total = g @ total
    src = next(a.name for a in net.arms if net.element(a.src).kind == "source")
    v0 = np.zeros(dim, dtype=complex)
    v0[ix[src]] = 1.0
    v = total @ v0
    term = {e.name: v[ix[next(a.name for a in net.arms if a.dst == e.name)]]
            for e in net.elements if e.kind in ("detector", "dump")}
    loss = {s: abs(v[ix[f"loss:{s}"]]) ** 2 for s in shutters}
    return term, loss


def path_sums(cn: Concrete) -> dict[str, complex]:
    """Forward amplitude of every arm as an explicit sum over paths."""
    net = cn.net
    memo: dict[str, complex] = {}

    def amp(arm_name: str) -> complex:
        if arm_name in memo:
            return memo[arm_name]
        arm = net.arm(arm_name)
        e = net.element(arm.src)
        if e.kind == "source":
            val = 1.0 + 0j
        else:
            loc = _local(cn, e.name)
            i = e.outputs.index(arm.src_port)
            val = 0j
            for j, port in enumerate(e.inputs):
                feed = [a.name for a in net.arms if a.dst == e.name and a.dst_port == port]
                if feed:
                    val += loc[i, j] * amp(feed[0])
        memo[arm_name] = val
        return val

    return {a.name: amp(a.name) for a in net.arms}


def transfer_to(cn: Concrete, terminal: str) -> dict[str, complex]:
    """Amplitude carried from each arm to ``terminal`` (sum over paths)."""
    net = cn.net
    memo: dict[str, complex] = {}

    def go(arm_name: str) -> complex:
        if arm_name in memo:
            return memo[arm_name]
        arm = net.arm(arm_name)
        e = net.element(arm.dst)
        if e.kind in ("detector", "dump"):
            val = 1.0 + 0j if e.name == terminal else 0j
        else:
            loc = _local(cn, e.name)
            j = e.inputs.index(arm.dst_port)
            val = 0j
            for i, port in enumerate(e.outputs):
                nxt = next(a.name for a in net.arms if a.src == e.name and a.src_port == port)
                val += loc[i, j] * go(nxt)
        memo[arm_name] = val
        return val

    return {a.name: go(a.name) for a in net.arms}


def env_terms(cn: Concrete, eps: float) -> dict[tuple[str, frozenset], complex]:
    """Exact environment-resolved amplitudes by explicit path enumeration.

    A photon following a path through arms a1..am leaves the product state
    prod_i (eta|chi> + eps|chi_perp>) on those arms.  Expanding the product,
    the term with flipped set S (a subset of the path) carries
    eps^|S| eta^(m - |S|).  Summing over paths ending at each terminal, or
    absorbed in a shutter, gives the amplitude of every (location, S) pair.
    """
    net = cn.net
    eta = math.sqrt(1 - eps * eps)
    out: dict[tuple[str, frozenset], complex] = {}
    src = next(a.name for a in net.arms if net.element(a.src).kind == "source")

    def record(loc: str, amp: complex, path: tuple[str, ...]) -> None:
        m = len(path)
        for r in range(m + 1):
            for sub in itertools.combinations(path, r):
                key = (loc, frozenset(sub))
                out[key] = out.get(key, 0j) + amp * eps ** r * eta ** (m - r)

    def walk(arm_name: str, amp: complex, path: tuple[str, ...]) -> None:
        path = path + (arm_name,)
        arm = net.arm(arm_name)
        e = net.element(arm.dst)
        if e.kind in ("detector", "dump"):
            record(e.name, amp, path)
            return
        if e.kind == "shutter" and cn.opacity[e.name] > 0:
            record(f"absorbed:{e.name}", amp * math.sqrt(cn.opacity[e.name]), path)
        loc = _local(cn, e.name)
        j = e.inputs.index(arm.dst_port)
        for i, port in enumerate(e.outputs):
            if loc[i, j] != 0:
                nxt = next(a.name for a in net.arms if a.src == e.name and a.src_port == port)
                walk(nxt, amp * loc[i, j], path)

    walk(src, 1.0 + 0j, ())
    return out
