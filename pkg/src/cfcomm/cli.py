"""Command-line front end.

Networks with free parameters are tuned first (default dark ports, see
``tuner.protocol_dark``) before any analysis other than check and tune.

Exit codes: 0 success, 1 parse or validation failure, 2 unsatisfiable
constraints or impossible post-selection, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .engine import classical_path, dark_ports, outcome_distribution, propagate
from .envtrace import DEFAULT_GRID, evolve_env, joint_trace, local_trace, order_fit, trace_outside
from .netlist import Network, NetlistError, UnresolvedParameter, apply_config, load_sites, parse, relabel_sites, to_text
from .protocol import (CommunicationImpossible, ProtocolSpec, counterfactuality_report, expected_trials,
                       per_trial, session)
from .tsvf import ImpossiblePostSelection, region_trace, trace_map
from .tuner import Unsatisfiable, protocol_dark, tune

SCHEMA = 1


def _num(x: float) -> float:
    return float(f"{x:.15g}")


def _clean(obj: Any) -> Any:
    """Round floats to 15 significant digits and split complex numbers."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, complex):
        return {"re": _num(obj.real), "im": _num(obj.imag)}
    if isinstance(obj, float) or hasattr(obj, "dtype"):
        if hasattr(obj, "dtype") and "complex" in str(obj.dtype):
            return _clean(complex(obj))
        v = float(obj)
        return _num(v) if math.isfinite(v) else str(v)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [_clean(v) for v in items]
    raise TypeError(type(obj))


def _read_net(path: str) -> Network:
    p = Path(path)
    if not p.exists():
        shipped = resources.files("cfcomm") / "data" / path
        if shipped.is_file():
            return parse(shipped.read_text(encoding="utf-8"))
    return parse(p.read_text(encoding="utf-8"))


def _grid(text: str | None) -> tuple[float, ...]:
    if not text:
        return DEFAULT_GRID
    return tuple(float(x) for x in text.split(","))


def _regions(net: Network, text: str | None, home: str = "alice") -> list[str]:
    if text:
        return [s.strip() for s in text.split(",") if s.strip()]
    return [s for s in net.sites if s != home]


def _dark_spec(net: Network, text: str | None) -> list[tuple[str | None, str]]:
    if text:
        out = []
        for item in text.split(","):
            cfg, _, term = item.partition(":")
            out.append((cfg or None, term))
        return out
    return protocol_dark(net)


# ----------------------------------------------------------------------------
# commands

def cmd_check(args, net: Network) -> dict:
    return {"diagnostics": [], "elements": len(net.elements), "arms": len(net.arms),
            "sites": list(net.sites), "configs": [c.name for c in net.configs],
            "free": list(net.free_params)}


def cmd_run(args, net: Network) -> dict:
    cn = apply_config(net, args.config)
    dist = outcome_distribution(cn)
    return {"probabilities": dict(dist.probability),
            "dark": sorted(dark_ports(cn, args.tol or 1e-9))}


def cmd_trace(args, net: Network) -> dict:
    if args.sites:
        net = relabel_sites(net, load_sites(args.sites))
    cn = apply_config(net, args.config)
    det = args.detector or "D1"
    tm = trace_map(cn, det)
    verdicts = {s: region_trace(tm, [s]) for s in net.sites}
    out_sites = _regions(net, args.region)
    outside = region_trace(tm, out_sites)
    return {
        "detector": det,
        "weak": {a: tm.weak[a] for a in tm.weak},
        "present": tm.presence(),
        "site": dict(tm.site),
        "sites": {s: {"present": v.present, "max": v.max_abs} for s, v in verdicts.items()},
        "region": {"sites": out_sites, "present": outside.present, "max": outside.max_abs, "arm": outside.arm},
        "classical_path": classical_path(cn, propagate(cn), out_sites, det),
    }


def cmd_env(args, net: Network) -> dict:
    cn = apply_config(net, args.config)
    det = args.detector or "D1"
    order = args.order_cap
    eps = args.epsilon or 1e-3
    st = evolve_env(cn, eps, order)
    out_sites = _regions(net, args.region)
    out_arms = net.arms_in(out_sites)
    local = {a: local_trace(st, det, a) for a in (a.name for a in net.arms)}
    payload: dict[str, Any] = {"detector": det, "epsilon": eps, "order": order,
                               "norm": st.norm(), "local": local}
    if args.pair:
        pair = args.pair.split(",")
        payload["joint"] = {"arms": pair, "amplitude": joint_trace(st, det, pair)}
        fit = order_fit(lambda e: joint_trace(evolve_env(cn, e, order), det, pair), _grid(args.grid))
        payload["joint_fit"] = {"exponent": fit.exponent, "residual": fit.residual}
    best, which = trace_outside(st, det, out_arms)
    payload["outside"] = {"sites": out_sites, "max": best, "excitations": sorted(which)}
    fit = order_fit(lambda e: trace_outside(evolve_env(cn, e, order), det, out_arms)[0], _grid(args.grid))
    payload["fit"] = {"exponent": fit.exponent, "residual": fit.residual, "exact_zero": fit.exact_zero,
                      "grid": list(fit.grid), "values": list(fit.values)}
    return payload


def _spec(net: Network, args) -> ProtocolSpec:
    return ProtocolSpec(net, max_trials=args.trials or 10_000)


def cmd_protocol(args, net: Network) -> dict:
    spec = _spec(net, args)
    table = {}
    for bit in sorted(spec.bit_config):
        dist = per_trial(spec, bit)
        table[str(bit)] = {"config": spec.bit_config[bit], "probabilities": dict(dist.probability),
                           "expected_trials": expected_trials(spec, bit)}
    payload: dict[str, Any] = {"exact": table}
    if args.bits:
        bits = [int(c) for c in args.bits if c in "01"]
        stats = session(spec, bits, args.seed)
        payload["session"] = {
            "sent": bits, "decoded": stats.decoded, "errors": stats.errors, "undecided": stats.undecided,
            "trials": stats.trials, "mean_trials": stats.mean_trials, "success_rate": stats.success_rate,
        }
    return payload


def cmd_tune(args, net: Network) -> dict:
    dark = _dark_spec(net, args.dark)
    tuned, sol = tune(net, dark, tol=args.tol or 1e-10, seed=args.seed, free_ratios=args.free_ratios)
    return {"assignment": dict(sol.assignment), "residual": sol.norm, "start": sol.start,
            "dark": [f"{c}:{t}" for c, t in dark], "netlist": to_text(tuned)}


def cmd_report(args, net: Network) -> dict:
    if args.sites:
        net = relabel_sites(net, load_sites(args.sites))
    rep = counterfactuality_report(ProtocolSpec(net), _grid(args.grid), args.order_cap)
    bits = {}
    for b in rep.bits:
        bits[str(b.bit)] = {
            "config": b.config, "detector": b.detector, "click_probability": b.click_probability,
            "classical_path": b.classical_path, "first_order": dict(b.first_order),
            "max_weak_outside": b.max_weak_outside,
            "order": None if b.order.exact_zero else b.order.exponent,
            "classification": b.classification,
        }
    return {"bits": bits, "overall": rep.overall}


COMMANDS = {"check": cmd_check, "run": cmd_run, "trace": cmd_trace, "env": cmd_env,
            "protocol": cmd_protocol, "tune": cmd_tune, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfcomm", description="Single-photon interferometer network analysis.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("netlist", help="netlist file (shipped examples may be named directly)")
    p.add_argument("--config", default=None)
    p.add_argument("--detector", default=None)
    p.add_argument("--region", default=None, help="comma-separated sites (default: all but alice)")
    p.add_argument("--sites", default=None, help="site relabelling file")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--grid", default=None, help="comma-separated epsilon values for order fits")
    p.add_argument("--order-cap", type=int, default=3)
    p.add_argument("--pair", default=None, help="two arms for the joint trace, e.g. B,B'")
    p.add_argument("--bits", default=None, help="bit string to transmit, e.g. 0110")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=None, help="maximum photons per bit")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--dark", default=None, help="dark constraints CONFIG:TERMINAL,... for tune")
    p.add_argument("--free-ratios", action="store_true")
    p.add_argument("--json", action="store_true")
    return p


def _text(payload: dict, indent: int = 0) -> list[str]:
    lines = []
    pad = "  " * indent
    for k, v in payload.items():
        if isinstance(v, dict) and not ({"re", "im"} == set(v)):
            lines.append(f"{pad}{k}:")
            lines += _text(v, indent + 1)
        elif isinstance(v, str) and "\n" in v:
            lines.append(f"{pad}{k}:")
            lines += [pad + "  " + ln for ln in v.rstrip().splitlines()]
        else:
            if isinstance(v, dict):
                v = complex(v["re"], v["im"])
            lines.append(f"{pad}{k}: {v}")
    return lines


def _render_run(payload: dict) -> list[str]:
    lines = [f"{'outcome':<16}{'probability':>22}"]
    for k, v in payload["probabilities"].items():
        mark = "  DARK" if k in payload["dark"] else ""
        lines.append(f"{k:<16}{v:>22.15g}{mark}")
    return lines


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    report: dict[str, Any] = {"schema": SCHEMA, "command": args.command, "version": __version__,
                              "seed": args.seed, "config": args.config}
    code = 0
    try:
        net = _read_net(args.netlist)
        report["network"] = net.name
        if args.command not in ("check", "tune") and net.free_params and protocol_dark(net):
            # shipped figures leave phases free; analyses run on the tuned network
            net, sol = tune(net, protocol_dark(net), tol=args.tol or 1e-10, seed=args.seed)
            report["tuned"] = _clean(dict(sol.assignment))
        report["result"] = _clean(COMMANDS[args.command](args, net))
    except NetlistError as exc:
        code = 1
        report["error"] = {"kind": "validation", "diagnostics": [str(d) for d in exc.diagnostics]}
    except (OSError, KeyError, UnresolvedParameter) as exc:
        code = 1
        report["error"] = {"kind": "input", "message": str(exc)}
    except Unsatisfiable as exc:
        code = 2
        report["error"] = {"kind": "constraint-unsatisfiable", "message": str(exc),
                           "residual": _num(exc.best.norm)}
    except (ImpossiblePostSelection, CommunicationImpossible) as exc:
        code = 2
        report["error"] = {"kind": "impossible post-selection", "message": str(exc)}
    except (FloatingPointError, ArithmeticError, ValueError) as exc:
        code = 3
        report["error"] = {"kind": "numeric", "message": str(exc)}
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=False))
    else:
        if "error" in report:
            err = report["error"]
            for d in err.get("diagnostics", [err.get("message", "")]):
                print(f"error: {d}", file=sys.stderr)
        elif args.command == "run":
            print(f"network {report['network']}  config {args.config}")
            print("\n".join(_render_run(report["result"])))
        else:
            print(f"network {report['network']}  command {args.command}")
            print("\n".join(_text(report["result"])))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
