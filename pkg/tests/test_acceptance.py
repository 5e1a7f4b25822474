"""End-to-end acceptance checks on the shipped figures.

Each test prints one ``[criterion N] PASS/FAIL: detail`` line before it
asserts, so ``pytest -rA`` lists the verdicts alongside the outcomes.
"""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings

from cfcomm import envtrace, netlist, protocol, tsvf
from cfcomm.engine import classical_path, propagate
from cfcomm.netlist import Concrete, apply_config, load, load_sites, parse, relabel_sites
from cfcomm.protocol import ProtocolSpec
from cfcomm.tuner import protocol_dark, tune
from conftest import DATA
from netgen import random_netlist
from oracles import dense_terminal_amplitudes

EPS = 1e-3


def verdict(n, ok, detail):
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def outside_arms(net, home="alice"):
    return [a.name for a in net.arms if a.site != home]


def shipped_concretes(fig1, fig4, mzi, ifm):
    for net in (fig1, fig4, ifm):
        for c in net.configs:
            yield apply_config(net, c.name)
    yield apply_config(mzi)


def bright(cn, tol=1e-6):
    fwd = propagate(cn)
    return [d for d in cn.net.detectors() if abs(fwd.terminal[d]) > tol]


# ---------------------------------------------------------------------------

def test_criterion_1_fig1_tuning():
    raw = load(DATA / "fig1.net")
    ratios = {e.name: tuple(e.ratio) for e in raw.elements if e.kind == "bs"}
    tuned, sol = tune(raw, protocol_dark(raw))
    open_d1 = abs(propagate(apply_config(tuned, "open")).terminal["D1"])
    blocked_d2 = abs(propagate(apply_config(tuned, "blocked")).terminal["D2"])
    fixed = ratios.pop("BS1") == (3, 8) and ratios.pop("BS2") == (1, 2) and set(ratios.values()) == {(1, 1)}
    ok = (sol.norm < 1e-10 and fixed and open_d1 < 1e-10 and blocked_d2 < 1e-10)
    verdict(1, ok, f"residual {sol.norm:.2e}, |D1|open {open_d1:.1e}, |D2|blocked {blocked_d2:.1e}")


@pytest.mark.xfail(strict=True, reason="2/11 and 2/35 exceed what any passive wiring of the stated "
                                       "splitters can deliver; the shipped wiring reaches half of it")
def test_criterion_2_success_probabilities(fig1, fig4):
    s1, s4 = ProtocolSpec(fig1), ProtocolSpec(fig4)
    got = {("fig1", b): protocol.click_probability(s1, b) for b in (0, 1)}
    got.update({("fig4", b): protocol.click_probability(s4, b) for b in (0, 1)})
    want = {("fig1", 0): 2 / 11, ("fig1", 1): 2 / 11, ("fig4", 0): 2 / 35, ("fig4", 1): 2 / 35}
    ok = all(abs(got[k] - want[k]) < 1e-9 for k in want)
    detail = ", ".join(f"{n} bit{b} {got[(n, b)]:.6f} (target {want[(n, b)]:.6f})" for n, b in want)
    verdict(2, ok, detail)


def test_criterion_3_zero_error(fig1, fig4):
    worst = max(protocol.wrong_detector_probability(ProtocolSpec(n), b) for n in (fig1, fig4) for b in (0, 1))
    bits = list(np.random.default_rng(2024).integers(0, 2, 1000))
    errors = {}
    for name, net in (("fig1", fig1), ("fig4", fig4)):
        stats = protocol.session(ProtocolSpec(net), [int(b) for b in bits], seed=11)
        errors[name] = (stats.errors, stats.undecided)
    ok = worst < 1e-18 and all(e == (0, 0) for e in errors.values())
    verdict(3, ok, f"worst wrong-detector probability {worst:.1e}; 1000-bit sessions (errors, undecided) {errors}")


def test_criterion_4_classical_path(fig1):
    spec = ProtocolSpec(fig1)
    found = {}
    for bit in (0, 1):
        cn = apply_config(fig1, spec.bit_config[bit])
        found[bit] = classical_path(cn, propagate(cn), ["bob"], spec.detector_for(bit))
    verdict(4, not any(found.values()), f"classical path through bob: {found}")


def test_criterion_5_trace_maps(fig1, fig4):
    spec = ProtocolSpec(fig1)
    out = spec.outside()
    tm0 = tsvf.trace_map(apply_config(fig1, "open"), "D2")
    tm1 = tsvf.trace_map(apply_config(fig1, "blocked"), "D1")
    fig1_bit0_B = abs(tm0.weak["B"])
    fig1_bit1 = tsvf.region_trace(tm1, out).present
    re = relabel_sites(fig1, load_sites(DATA / "fig1_repartition.sites"))
    rep = {b: tsvf.region_trace(tsvf.trace_map(apply_config(re, c), d), ["channel"]).present
           for b, c, d in ((0, "open", "D2"), (1, "blocked", "D1"))}
    fig4_out = {b: tsvf.region_trace(tsvf.trace_map(apply_config(fig4, c), d), out).present
                for b, c, d in ((0, "open", "D2"), (1, "blocked", "D1"))}
    ok = fig1_bit0_B > 1e-6 and not fig1_bit1 and rep == {0: False, 1: True} and fig4_out == {0: False, 1: False}
    verdict(5, ok, f"fig1 |w_B| bit0 {fig1_bit0_B:.3f}, fig1 bit1 outside {fig1_bit1}, "
                   f"repartition channel {rep}, fig4 outside {fig4_out}")


def test_criterion_6_partition_exhaustive(fig1):
    partitions = {"shipped": fig1,
                  "repartition": relabel_sites(fig1, load_sites(DATA / "fig1_repartition.sites"))}
    seen = {}
    for name, net in partitions.items():
        seen[name] = [tsvf.region_trace(tsvf.trace_map(apply_config(net, c), d), ["channel"]).present
                      for c, d in (("open", "D2"), ("blocked", "D1"))]
    ok = all(any(v) for v in seen.values())
    verdict(6, ok, f"channel trace per bit (0, 1): {seen}")


REFERENCE = """
network pair
site lab
elem S : source @ lab
elem P1 : phase(0) @ lab
elem P2 : phase(0) @ lab
elem D : detector @ lab
arm in : S.c -> P1.a @ lab
arm x : P1.c -> P2.a @ lab
arm y : P2.c -> D.a @ lab
"""


def test_criterion_7_eps_orders(fig4, chain3):
    grid = envtrace.DEFAULT_GRID

    def outside(net, cfg, det):
        cn = apply_config(net, cfg)
        arms = outside_arms(net)
        return envtrace.order_fit(lambda e: envtrace.trace_outside(envtrace.evolve_env(cn, e, 4), det, arms)[0],
                                  grid).exponent

    o4 = outside(fig4, "open", "D2")
    o3 = outside(chain3, "open", "D2")
    cn4 = apply_config(fig4, "open")
    joint = envtrace.order_fit(lambda e: envtrace.joint_trace(envtrace.evolve_env(cn4, e, 3), "D2", ["B", "B'"]),
                               grid).exponent
    # one photon crossing two coupled arms in series: the double excitation is second order by construction
    ref_cn = apply_config(parse(REFERENCE))
    ref = envtrace.order_fit(lambda e: envtrace.joint_trace(envtrace.evolve_env(ref_cn, e, 3), "D", ["x", "y"]),
                             grid).exponent
    ok = abs(o4 - 2) <= 0.1 and abs(o3 - 3) <= 0.1 and abs(joint - 2) <= 0.1 and abs(joint - ref) <= 0.1
    verdict(7, ok, f"fig4 bit0 {o4:.4f}, chain(3) {o3:.4f}, joint B,B' {joint:.4f}, reference {ref:.4f}")


def perturbed(cn, rng, frac=0.05):
    refl = {k: float(np.clip(v * (1 + rng.uniform(-frac, frac)), 1e-6, 1 - 1e-6)) for k, v in cn.reflectance.items()}
    phase = {k: v + rng.uniform(-frac, frac) * 2 * math.pi for k, v in cn.phase.items()}
    return Concrete(cn.net, cn.config, refl, phase, dict(cn.opacity))


def test_criterion_8_bit1_robustness(fig1, fig4):
    rng = np.random.default_rng(8)
    worst = 0.0
    for net in (fig1, fig4):
        arms = outside_arms(net)
        base = apply_config(net, "blocked")
        for _ in range(20):
            st = envtrace.evolve_env(perturbed(base, rng), 0.05, order=None)
            worst = max(worst, envtrace.excitations_outside(st, net.detectors(), arms))
    leak = {}
    for name, net in (("fig1", fig1), ("fig4", fig4)):
        st = envtrace.evolve_env(apply_config(net, "imperfect"), 0.05, order=None)
        leak[name] = envtrace.excitations_outside(st, net.detectors(), outside_arms(net))
    ok = worst <= 1e-12 and all(v > 1e-6 for v in leak.values())
    verdict(8, ok, f"opacity 1 under 40 perturbations: max outside amplitude {worst:.1e}; "
                   f"opacity 0.99: {', '.join(f'{k} {v:.2e}' for k, v in leak.items())}")


def presence_mismatches(cn):
    bad = []
    for d in bright(cn):
        tm = tsvf.trace_map(cn, d)
        for a, w in tm.weak.items():
            p = tsvf.presence_probability(cn, [a], d).found(a)
            if (abs(w - 1) < 1e-9) != (abs(p - 1) < 1e-9) or (abs(w) < 1e-9) != (abs(p) < 1e-9):
                bad.append((cn.name, cn.config, d, a))
    return bad


def test_criterion_9_weak_value_presence(fig1, fig4, mzi, ifm):
    shipped = [cn for cn in shipped_concretes(fig1, fig4, mzi, ifm)]
    bad = [m for cn in shipped for m in presence_mismatches(cn)]
    seen = []

    @settings(max_examples=100, derandomize=True, deadline=None, database=None,
              suppress_health_check=list(HealthCheck))
    @given(random_netlist())
    def check(text):
        cn = apply_config(parse(text))
        seen.append(1)
        bad.extend(presence_mismatches(cn))

    check()
    verdict(9, not bad and len(seen) == 100,
            f"{len(shipped)} shipped configs and {len(seen)} random networks, mismatches {bad[:3]}")


def test_criterion_10_oracles(fig1, fig4, mzi, ifm):
    dense_err = 0.0
    for cn in shipped_concretes(fig1, fig4, mzi, ifm):
        ref, _ = dense_terminal_amplitudes(cn)
        fwd = propagate(cn)
        dense_err = max(dense_err, max(abs(fwd.terminal[t] - ref[t]) for t in fwd.terminal))

    weak_err = 0.0
    for net, cfg, det in ((fig1, "open", "D2"), (fig1, "blocked", "D1"), (fig4, "open", "D2"),
                          (fig4, "blocked", "D1"), (ifm, "blocked", "Db")):
        cn = apply_config(net, cfg)
        tm = tsvf.trace_map(cn, det)
        st = envtrace.evolve_env(cn, EPS, order=2)
        for a in tm.weak:
            weak_err = max(weak_err, abs(envtrace.local_trace(st, det, a) / EPS - tm.weak[a]))

    n = 100_000
    worst_z = 0.0
    for net in (fig1, fig4):
        spec = ProtocolSpec(net)
        for bit in (0, 1):
            exact = protocol.per_trial(spec, bit)
            counts = protocol.sample_counts(spec, bit, n, seed=10 + bit)
            for k, c in counts.items():
                p = exact[k.split(":", 1)[-1]]
                sigma = math.sqrt(max(p * (1 - p), 1e-300) / n)
                worst_z = max(worst_z, abs(c / n - p) / sigma if p > 0 else (0.0 if c == 0 else math.inf))
    ok = dense_err < 1e-12 and weak_err < 1e-4 and worst_z <= 3
    verdict(10, ok, f"engine vs dense {dense_err:.1e}; local trace/eps vs weak value {weak_err:.1e}; "
                    f"Monte Carlo worst deviation {worst_z:.2f} sigma at n = {n}")
