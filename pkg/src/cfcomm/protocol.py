"""Alice-Bob communication sessions and per-bit counterfactuality reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .engine import DARK_TOL, OutcomeDistribution, classical_path, outcome_distribution, propagate
from .envtrace import DEFAULT_GRID, OrderFit, evolve_env, order_fit, trace_outside
from .netlist import Network, apply_config
from .tsvf import ImpossiblePostSelection, region_trace, trace_map


class CommunicationImpossible(ValueError):
    """No decodable click can occur for this bit."""


@dataclass(frozen=True)
class ProtocolSpec:
    net: Network
    bit_config: Mapping[int, str] = field(default_factory=lambda: {0: "open", 1: "blocked"})
    decode: Mapping[str, int] = field(default_factory=lambda: {"D1": 1, "D2": 0})
    max_trials: int = 10_000
    home: str = "alice"  # the receiver's site

    def __post_init__(self):
        if len(set(self.decode.values())) != len(self.decode):
            raise ValueError("decode map must be injective")
        dets = set(self.net.detectors())
        for d in self.decode:
            if d not in dets:
                raise KeyError(f"unknown detector {d!r}")
        configs = {c.name for c in self.net.configs}
        for bit, cfg in self.bit_config.items():
            if cfg not in configs:
                raise KeyError(f"bit {bit}: unknown config {cfg!r}")
        if self.home not in self.net.sites:
            raise KeyError(f"unknown site {self.home!r}")

    def detector_for(self, bit: int) -> str:
        return next(d for d, b in self.decode.items() if b == bit)

    def outside(self) -> tuple[str, ...]:
        return tuple(s for s in self.net.sites if s != self.home)


def per_trial(spec: ProtocolSpec, bit: int) -> OutcomeDistribution:
    return outcome_distribution(apply_config(spec.net, spec.bit_config[bit]))


def click_probability(spec: ProtocolSpec, bit: int) -> float:
    dist = per_trial(spec, bit)
    return float(sum(dist[d] for d in spec.decode))


def expected_trials(spec: ProtocolSpec, bit: int) -> float:
    """Mean number of photons until a decodable click (geometric law)."""
    p = click_probability(spec, bit)
    if p < DARK_TOL ** 2:
        raise CommunicationImpossible(f"bit {bit}: no detector can click")
    return 1.0 / p


def wrong_detector_probability(spec: ProtocolSpec, bit: int) -> float:
    dist = per_trial(spec, bit)
    return float(sum(dist[d] for d, b in spec.decode.items() if b != bit))


def _outcomes(dist: OutcomeDistribution) -> tuple[list[str], np.ndarray]:
    names = list(dist.detectors) + list(dist.dumps) + [f"absorbed:{s}" for s in dist.shutters]
    probs = np.array([dist[n.split(":", 1)[-1]] for n in names], dtype=float)
    probs = np.clip(probs, 0.0, None)
    return names, probs / probs.sum()


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the sub-stream identified by ``key``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class BitRecord:
    sent: int
    trials: int
    tally: Mapping[str, int]
    decoded: int | None  # None when max trials ran out


@dataclass(frozen=True)
class SessionStats:
    records: tuple[BitRecord, ...]
    seed: int

    @property
    def decoded(self) -> list[int | None]:
        return [r.decoded for r in self.records]

    @property
    def errors(self) -> int:
        return sum(1 for r in self.records if r.decoded is not None and r.decoded != r.sent)

    @property
    def undecided(self) -> int:
        return sum(1 for r in self.records if r.decoded is None)

    @property
    def trials(self) -> int:
        return sum(r.trials for r in self.records)

    @property
    def mean_trials(self) -> float:
        return self.trials / len(self.records) if self.records else 0.0

    @property
    def success_rate(self) -> float:
        """Empirical per-photon probability of a decodable click."""
        return (len(self.records) - self.undecided) / self.trials if self.trials else 0.0


def session(spec: ProtocolSpec, bits: Sequence[int], seed: int, batch: int = 64) -> SessionStats:
    """Send each bit by repeating single photons until a decodable click."""
    tables = {}
    for bit in set(bits):
        if bit not in spec.bit_config:
            raise KeyError(f"no configuration for bit {bit}")
        tables[bit] = _outcomes(per_trial(spec, bit))
    records = []
    for k, bit in enumerate(bits):
        names, probs = tables[bit]
        rng = stream(seed, k)
        tally: dict[str, int] = {}
        used, decoded = 0, None
        while used < spec.max_trials and decoded is None:
            n = min(batch, spec.max_trials - used)
            draws = rng.choice(len(names), size=n, p=probs)
            for j in draws:
                used += 1
                name = names[j]
                tally[name] = tally.get(name, 0) + 1
                if name in spec.decode:
                    decoded = spec.decode[name]
                    break
        records.append(BitRecord(bit, used, tally, decoded))
    return SessionStats(tuple(records), seed)


def sample_counts(spec: ProtocolSpec, bit: int, n: int, seed: int) -> dict[str, int]:
    """Outcome counts of ``n`` independent photons."""
    names, probs = _outcomes(per_trial(spec, bit))
    draws = stream(seed, 2**31 - 1, bit).choice(len(names), size=n, p=probs)
    counts = np.bincount(draws, minlength=len(names))
    return {name: int(c) for name, c in zip(names, counts)}


# ----------------------------------------------------------------------------
# reports

CLASSES = ("not counterfactual", "path-counterfactual", "first-order-trace counterfactual", "fully trace-free")


@dataclass(frozen=True)
class BitReport:
    bit: int
    config: str
    detector: str
    click_probability: float
    classical_path: bool
    first_order: Mapping[str, bool]  # site -> weak presence
    max_weak_outside: float
    order: OrderFit
    classification: str


@dataclass(frozen=True)
class Report:
    network: str
    bits: tuple[BitReport, ...]

    @property
    def overall(self) -> str:
        return min((b.classification for b in self.bits), key=CLASSES.index)


def _classify(classical: bool, first: bool, fit: OrderFit) -> str:
    if classical:
        return CLASSES[0]
    if first:
        return CLASSES[1]
    if fit.exact_zero:
        return CLASSES[3]
    return CLASSES[2]


def bit_report(spec: ProtocolSpec, bit: int, grid: Iterable[float] = DEFAULT_GRID, order: int = 3) -> BitReport:
    cfg = spec.bit_config[bit]
    det = spec.detector_for(bit)
    cn = apply_config(spec.net, cfg)
    fwd = propagate(cn)
    p = float(abs(fwd.terminal[det]) ** 2)
    if p < DARK_TOL ** 2:
        raise ImpossiblePostSelection(f"bit {bit}: {det} never clicks")
    outside = spec.outside()
    classical = classical_path(cn, fwd, outside, det)
    tm = trace_map(cn, det)
    first = {s: region_trace(tm, [s]).present for s in spec.net.sites if any(v == s for v in tm.site.values())}
    max_out = region_trace(tm, outside).max_abs if any(tm.site[a] in outside for a in tm.site) else 0.0
    out_arms = spec.net.arms_in(outside)
    fit = order_fit(lambda e: trace_outside(evolve_env(cn, e, order), det, out_arms)[0], tuple(grid))
    first_out = any(first.get(s, False) for s in outside)
    return BitReport(bit, cfg, det, p, classical, first, max_out, fit, _classify(classical, first_out, fit))


def counterfactuality_report(spec: ProtocolSpec, grid: Iterable[float] = DEFAULT_GRID, order: int = 3) -> Report:
    bits = tuple(bit_report(spec, b, grid, order) for b in sorted(spec.bit_config))
    return Report(spec.net.name, bits)
