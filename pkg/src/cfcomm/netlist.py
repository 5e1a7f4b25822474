"""Textual description of single-photon interferometer networks.

A network is a directed acyclic graph: elements are nodes, arms are edges
joining an output port of one element to an input port of another.  Every
arm and element carries a site label (e.g. ``alice``, ``bob``) used by the
trace analyses.

Grammar (one statement per line, ``#`` starts a comment)::

    network NAME
    site NAME
    param NAME [= FLOAT]
    elem NAME : KIND @ SITE
    arm NAME : ELEM.PORT -> ELEM.PORT @ SITE
    config NAME { ELEM.SETTING = VALUE ... }
    block NAME : ELEM ... in=ARM out=ARM [retune=ELEM]

KIND is one of ``source``, ``bs(ratio=M:N|PARAM[, swap][, phase=P])``,
``phase(P)``, ``mirror[(P)]``, ``shutter(opacity=P)``, ``detector`` or
``dump``, where P is a parameter name or a literal float.  Beam splitters
have inputs ``a``, ``b`` and outputs ``c``, ``d``; one-port elements have
input ``a`` and output ``c``.  A ``block`` marks a two-terminal stage that
:func:`chain` can repeat.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

Value = float | str  # literal or parameter reference

KINDS = ("source", "bs", "phase", "mirror", "shutter", "detector", "dump")
INPUTS = {
    "source": (),
    "bs": ("a", "b"),
    "phase": ("a",),
    "mirror": ("a",),
    "shutter": ("a",),
    "detector": ("a",),
    "dump": ("a",),
}
OUTPUTS = {
    "source": ("c",),
    "bs": ("c", "d"),
    "phase": ("c",),
    "mirror": ("c",),
    "shutter": ("c",),
    "detector": (),
    "dump": (),
}
TERMINALS = ("detector", "dump")
SETTINGS = {
    "bs": ("ratio", "swap", "phase"),
    "phase": ("phase",),
    "mirror": ("phase",),
    "shutter": ("opacity",),
}


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class NetlistError(ValueError):
    """Raised with one or more positioned diagnostics."""

    def __init__(self, diagnostics: Iterable[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Param:
    name: str
    value: float | None = None  # None marks a free parameter


@dataclass(frozen=True)
class Element:
    name: str
    kind: str
    site: str
    ratio: tuple[float, float] | str | None = None
    swap: bool = False
    phase: Value | None = None
    opacity: Value | None = None

    @property
    def inputs(self) -> tuple[str, ...]:
        return INPUTS[self.kind]

    @property
    def outputs(self) -> tuple[str, ...]:
        return OUTPUTS[self.kind]


@dataclass(frozen=True)
class Arm:
    name: str
    src: str
    src_port: str
    dst: str
    dst_port: str
    site: str


@dataclass(frozen=True)
class Config:
    name: str
    settings: tuple[tuple[str, str, Value | tuple[float, float] | bool], ...] = ()


@dataclass(frozen=True)
class Block:
    name: str
    elements: tuple[str, ...]
    inlet: str
    outlet: str
    retune: str | None = None


@dataclass(frozen=True)
class Network:
    name: str
    sites: tuple[str, ...]
    params: tuple[Param, ...]
    elements: tuple[Element, ...]
    arms: tuple[Arm, ...]
    configs: tuple[Config, ...] = ()
    blocks: tuple[Block, ...] = ()

    def __hash__(self) -> int:
        # analyses look networks up in caches many times; hash the fields once
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.name, self.sites, self.params, self.elements, self.arms, self.configs, self.blocks))
            object.__setattr__(self, "_hash", h)
        return h

    def element(self, name: str) -> Element:
        for e in self.elements:
            if e.name == name:
                return e
        raise KeyError(name)

    def arm(self, name: str) -> Arm:
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def config(self, name: str) -> Config:
        for c in self.configs:
            if c.name == name:
                return c
        raise KeyError(f"unknown config {name!r}")

    def param_values(self) -> dict[str, float | None]:
        return {p.name: p.value for p in self.params}

    @property
    def free_params(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params if p.value is None)

    def with_params(self, values: Mapping[str, float]) -> "Network":
        """Return a copy with the given parameters fixed."""
        known = {p.name for p in self.params}
        unknown = set(values) - known
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        params = tuple(
            Param(p.name, float(values[p.name])) if p.name in values else p
            for p in self.params
        )
        return replace(self, params=params)

    def source(self) -> Element:
        return next(e for e in self.elements if e.kind == "source")

    def terminals(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.elements if e.kind in TERMINALS)

    def detectors(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.elements if e.kind == "detector")

    def arms_in(self, sites: Iterable[str]) -> tuple[str, ...]:
        s = set(sites)
        return tuple(a.name for a in self.arms if a.site in s)

    def topo_order(self) -> tuple[str, ...]:
        """Element names in a deterministic topological order."""
        order = _toposort(self)
        if order is None:
            raise NetlistError([Diagnostic(0, 0, "cycle detected")])
        return order


# ----------------------------------------------------------------------------
# lexing helpers

_IDENT = r"[A-Za-z_][A-Za-z0-9_']*"
_FLOAT = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf|nan)"
_RE_IDENT = re.compile(rf"^{_IDENT}$")
_RE_FLOAT = re.compile(rf"^{_FLOAT}$")
_RE_RATIO = re.compile(rf"^({_FLOAT})\s*:\s*({_FLOAT})$")
_RE_PI = re.compile(rf"^({_FLOAT})?\s*\*?\s*pi(?:\s*/\s*({_FLOAT}))?$")


class _Line:
    def __init__(self, lineno: int, raw: str):
        self.lineno = lineno
        self.raw = raw

    def col(self, token: str, start: int = 0) -> int:
        i = self.raw.find(token, start)
        return (i if i >= 0 else 0) + 1

    def diag(self, msg: str, token: str = "") -> Diagnostic:
        return Diagnostic(self.lineno, self.col(token) if token else 1, msg)


def _value(tok: str) -> Value:
    tok = tok.strip()
    if _RE_FLOAT.match(tok):
        return float(tok)
    m = _RE_PI.match(tok)
    if m and tok != "":
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        return num * math.pi / den
    if _RE_IDENT.match(tok):
        return tok
    raise ValueError(tok)


def _ratio(tok: str) -> tuple[float, float] | str:
    tok = tok.strip()
    m = _RE_RATIO.match(tok)
    if m:
        return (float(m.group(1)), float(m.group(2)))
    if _RE_IDENT.match(tok):
        return tok
    raise ValueError(tok)


def _split_args(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


# ----------------------------------------------------------------------------
# parser

def _parse_kind(line: _Line, name: str, spec: str, site: str) -> Element:
    m = re.match(rf"^({_IDENT})\s*(?:\((.*)\))?$", spec.strip())
    if not m:
        raise NetlistError([line.diag(f"malformed element kind {spec.strip()!r}", spec.strip())])
    kind, args = m.group(1), m.group(2)
    if kind not in KINDS:
        raise NetlistError([line.diag(f"unknown element kind {kind!r}", kind)])
    parts = _split_args(args) if args is not None else []
    try:
        if kind == "bs":
            ratio: tuple[float, float] | str | None = None
            swap = False
            phase: Value | None = None
            for p in parts:
                if p == "swap":
                    swap = True
                elif p.startswith("ratio"):
                    ratio = _ratio(p.split("=", 1)[1])
                elif p.startswith("phase"):
                    phase = _value(p.split("=", 1)[1])
                else:
                    raise ValueError(p)
            if ratio is None:
                raise NetlistError([line.diag("beam splitter needs ratio=M:N", spec.strip())])
            return Element(name, kind, site, ratio=ratio, swap=swap, phase=phase)
        if kind in ("phase", "mirror"):
            if kind == "phase" and len(parts) != 1:
                raise ValueError(spec)
            if len(parts) > 1:
                raise ValueError(spec)
            return Element(name, kind, site, phase=_value(parts[0]) if parts else None)
        if kind == "shutter":
            opacity: Value = 0.0
            for p in parts:
                key, _, v = p.partition("=")
                if key.strip() != "opacity":
                    raise ValueError(p)
                opacity = _value(v)
            return Element(name, kind, site, opacity=opacity)
        if parts:
            raise ValueError(spec)
        return Element(name, kind, site)
    except ValueError as exc:
        raise NetlistError([line.diag(f"bad argument {str(exc)!r} for {kind}", str(exc))]) from None


def _parse_setting_value(tok: str):
    tok = tok.strip()
    if tok in ("true", "false"):
        return tok == "true"
    if _RE_RATIO.match(tok):
        return _ratio(tok)
    return _value(tok)


def parse(text: str) -> Network:
    """Parse netlist text into a validated :class:`Network`.

    Raises :class:`NetlistError` carrying every diagnostic found.
    """
    diags: list[Diagnostic] = []
    name = None
    sites: list[str] = []
    params: list[Param] = []
    elements: list[Element] = []
    arms: list[Arm] = []
    configs: list[Config] = []
    blocks: list[Block] = []
    where: dict[str, _Line] = {}

    lines = text.splitlines()
    i = 0
    while i < len(lines):
        ln = _Line(i + 1, lines[i])
        stmt = lines[i].split("#", 1)[0].strip()
        i += 1
        if not stmt:
            continue
        head, _, rest = stmt.partition(" ")
        rest = rest.strip()
        try:
            if head == "network":
                if not _RE_IDENT.match(rest):
                    raise NetlistError([ln.diag("expected network name", rest or head)])
                name = rest
            elif head == "site":
                if not _RE_IDENT.match(rest):
                    raise NetlistError([ln.diag("expected site name", rest or head)])
                sites.append(rest)
            elif head == "param":
                pname, eq, val = rest.partition("=")
                pname = pname.strip()
                if not _RE_IDENT.match(pname):
                    raise NetlistError([ln.diag("expected parameter name", pname or head)])
                value = None
                if eq:
                    v = _value(val)
                    if isinstance(v, str):
                        raise NetlistError([ln.diag("parameter value must be numeric", val.strip())])
                    value = v
                params.append(Param(pname, value))
                where["param:" + pname] = ln
            elif head == "elem":
                m = re.match(rf"^({_IDENT})\s*:\s*(.+?)\s*@\s*({_IDENT})$", rest)
                if not m:
                    raise NetlistError([ln.diag("expected 'elem NAME : KIND @ SITE'", rest or head)])
                el = _parse_kind(ln, m.group(1), m.group(2), m.group(3))
                elements.append(el)
                where["elem:" + el.name] = ln
            elif head == "arm":
                m = re.match(
                    rf"^({_IDENT})\s*:\s*({_IDENT})\.({_IDENT})\s*->\s*({_IDENT})\.({_IDENT})\s*@\s*({_IDENT})$",
                    rest,
                )
                if not m:
                    raise NetlistError([ln.diag("expected 'arm NAME : ELEM.PORT -> ELEM.PORT @ SITE'", rest or head)])
                arms.append(Arm(*m.groups()))
                where["arm:" + m.group(1)] = ln
            elif head == "config":
                m = re.match(rf"^({_IDENT})\s*\{{(.*)$", rest)
                if not m:
                    raise NetlistError([ln.diag("expected 'config NAME {'", rest or head)])
                cname, body = m.group(1), m.group(2)
                chunks: list[tuple[_Line, str]] = []
                closed = False
                cur, cur_ln = body, ln
                while True:
                    part = cur.split("#", 1)[0]
                    if "}" in part:
                        before, _, after = part.partition("}")
                        chunks.append((cur_ln, before))
                        if after.strip():
                            raise NetlistError([cur_ln.diag("unexpected text after '}'", after.strip())])
                        closed = True
                        break
                    chunks.append((cur_ln, part))
                    if i >= len(lines):
                        break
                    cur_ln = _Line(i + 1, lines[i])
                    cur = lines[i]
                    i += 1
                if not closed:
                    raise NetlistError([ln.diag(f"unterminated config {cname!r}", cname)])
                settings = []
                item_re = re.compile(rf"({_IDENT})\.({_IDENT})\s*=\s*([^\s;]+)")
                for cl, chunk in chunks:
                    pos = 0
                    for sm in item_re.finditer(chunk):
                        gap = chunk[pos:sm.start()].replace(";", "").strip()
                        if gap:
                            raise NetlistError([cl.diag("expected ELEM.SETTING = VALUE", gap)])
                        pos = sm.end()
                        try:
                            val = _parse_setting_value(sm.group(3))
                        except ValueError:
                            raise NetlistError([cl.diag("bad setting value", sm.group(3))]) from None
                        settings.append((sm.group(1), sm.group(2), val))
                        where[f"set:{cname}:{sm.group(1)}"] = cl
                    gap = chunk[pos:].replace(";", "").strip()
                    if gap:
                        raise NetlistError([cl.diag("expected ELEM.SETTING = VALUE", gap)])
                configs.append(Config(cname, tuple(settings)))
                where["config:" + cname] = ln
            elif head == "block":
                m = re.match(rf"^({_IDENT})\s*:\s*(.*)$", rest)
                if not m:
                    raise NetlistError([ln.diag("expected 'block NAME : ELEM ... in=ARM out=ARM'", rest or head)])
                bname = m.group(1)
                elems, kw = [], {}
                for tok in m.group(2).replace(",", " ").split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        kw[k] = v
                    else:
                        elems.append(tok)
                if "in" not in kw or "out" not in kw or not elems or set(kw) - {"in", "out", "retune"}:
                    raise NetlistError([ln.diag("block needs elements, in=ARM and out=ARM", bname)])
                blocks.append(Block(bname, tuple(elems), kw["in"], kw["out"], kw.get("retune")))
                where["block:" + bname] = ln
            else:
                raise NetlistError([ln.diag(f"unknown statement {head!r}", head)])
        except NetlistError as exc:
            diags.extend(exc.diagnostics)

    if name is None and not diags:
        diags.append(Diagnostic(1, 1, "missing 'network NAME' statement"))
    if diags:
        raise NetlistError(diags)
    net = Network(name, tuple(sites), tuple(params), tuple(elements), tuple(arms), tuple(configs), tuple(blocks))
    problems = validate(net, where)
    if problems:
        raise NetlistError(problems)
    return net


# ----------------------------------------------------------------------------
# validation

def _toposort(net: Network) -> tuple[str, ...] | None:
    indeg = {e.name: 0 for e in net.elements}
    succ: dict[str, list[str]] = {e.name: [] for e in net.elements}
    for a in net.arms:
        if a.src in succ and a.dst in indeg:
            succ[a.src].append(a.dst)
            indeg[a.dst] += 1
    rank = {e.name: k for k, e in enumerate(net.elements)}
    ready = sorted((n for n, d in indeg.items() if d == 0), key=rank.get)
    out = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
                ready.sort(key=rank.get)
    return tuple(out) if len(out) == len(indeg) else None


def validate(net: Network, where: Mapping[str, _Line] | None = None) -> list[Diagnostic]:
    """Return all structural problems of ``net`` (empty list when valid)."""
    where = where or {}
    out: list[Diagnostic] = []

    def at(key: str, msg: str, token: str = "") -> None:
        ln = where.get(key)
        if ln is None:
            out.append(Diagnostic(0, 0, msg))
        else:
            out.append(ln.diag(msg, token))

    sites = set(net.sites)
    if len(sites) != len(net.sites):
        out.append(Diagnostic(0, 0, "duplicate site declaration"))
    params = {}
    for p in net.params:
        if p.name in params:
            at("param:" + p.name, f"duplicate parameter {p.name!r}", p.name)
        params[p.name] = p
    elems: dict[str, Element] = {}
    for e in net.elements:
        if e.name in elems:
            at("elem:" + e.name, f"duplicate element {e.name!r}", e.name)
        elems[e.name] = e
        if e.site not in sites:
            at("elem:" + e.name, f"element {e.name!r} has unlabeled site {e.site!r}", e.site)
        if e.kind == "bs":
            if isinstance(e.ratio, tuple):
                if not (e.ratio[0] > 0 and e.ratio[1] > 0 and all(math.isfinite(x) for x in e.ratio)):
                    at("elem:" + e.name, f"ratio components of {e.name!r} must be positive", e.name)
            elif e.ratio not in params:
                at("elem:" + e.name, f"unknown parameter {e.ratio!r}", str(e.ratio))
            elif params[e.ratio].value is not None and not 0 <= params[e.ratio].value <= 1:
                at("elem:" + e.name, f"ratio parameter {e.ratio!r} must lie in [0, 1]", str(e.ratio))
        for attr in ("phase", "opacity"):
            v = getattr(e, attr)
            if isinstance(v, str) and v not in params:
                at("elem:" + e.name, f"unknown parameter {v!r}", v)
        if e.kind == "shutter" and isinstance(e.opacity, float) and not 0.0 <= e.opacity <= 1.0:
            at("elem:" + e.name, f"opacity of {e.name!r} outside [0, 1]", e.name)

    sources = [e for e in net.elements if e.kind == "source"]
    if len(sources) != 1:
        out.append(Diagnostic(0, 0, f"expected exactly one source, found {len(sources)}"))

    used: dict[tuple[str, str], str] = {}
    arm_names = set()
    for a in net.arms:
        key = "arm:" + a.name
        if a.name in arm_names:
            at(key, f"duplicate arm {a.name!r}", a.name)
        arm_names.add(a.name)
        if a.site not in sites:
            at(key, f"arm {a.name!r} has unlabeled site {a.site!r}", a.site)
        for el, port, role in ((a.src, a.src_port, "output"), (a.dst, a.dst_port, "input")):
            if el not in elems:
                at(key, f"unknown element {el!r}", el)
                continue
            legal = elems[el].outputs if role == "output" else elems[el].inputs
            if port not in legal:
                at(key, f"{el}.{port} is not an {role} port of {elems[el].kind}", f"{el}.{port}")
                continue
            if (el, port) in used:
                at(key, f"port {el}.{port} already attached to arm {used[(el, port)]!r}", f"{el}.{port}")
            used[(el, port)] = a.name
    for e in net.elements:
        for port in e.inputs + e.outputs:
            if (e.name, port) not in used:
                if e.kind == "bs" and port in e.inputs and any((e.name, q) in used for q in e.inputs):
                    continue  # an unused beam-splitter input admits vacuum
                at("elem:" + e.name, f"dangling port {e.name}.{port}", e.name)

    if out:
        return out

    if _toposort(net) is None:
        out.append(Diagnostic(0, 0, "cycle detected in arm graph"))
        return out

    # every arm on a source -> terminal path
    succ: dict[str, set[str]] = {e.name: set() for e in net.elements}
    pred: dict[str, set[str]] = {e.name: set() for e in net.elements}
    for a in net.arms:
        succ[a.src].add(a.dst)
        pred[a.dst].add(a.src)

    def reach(start: Iterable[str], nxt: dict[str, set[str]]) -> set[str]:
        seen, stack = set(start), list(start)
        while stack:
            for m in nxt[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return seen

    fwd = reach([sources[0].name], succ)
    bwd = reach([e.name for e in net.elements if e.kind in TERMINALS], pred)
    for a in net.arms:
        if a.src not in fwd or a.dst not in bwd:
            at("arm:" + a.name, f"arm {a.name!r} is not on any source-to-terminal path", a.name)

    for c in net.configs:
        for el, setting, _ in c.settings:
            if el not in elems:
                at(f"set:{c.name}:{el}", f"unknown element {el!r} in config {c.name!r}", el)
            elif setting not in SETTINGS.get(elems[el].kind, ()):
                at(f"set:{c.name}:{el}", f"{elems[el].kind} has no setting {setting!r}", setting)
    for b in net.blocks:
        for el in b.elements:
            if el not in elems:
                at("block:" + b.name, f"unknown element {el!r} in block {b.name!r}", el)
        for arm in (b.inlet, b.outlet):
            if arm not in arm_names:
                at("block:" + b.name, f"unknown arm {arm!r} in block {b.name!r}", arm)
        if b.retune is not None and b.retune not in elems:
            at("block:" + b.name, f"unknown element {b.retune!r}", b.retune)
    return out


# ----------------------------------------------------------------------------
# printer

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return f"{_fmt(v[0])}:{_fmt(v[1])}"
    if isinstance(v, float):
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def _fmt_kind(e: Element) -> str:
    if e.kind == "bs":
        args = [f"ratio={_fmt(e.ratio)}"]
        if e.swap:
            args.append("swap")
        if e.phase is not None:
            args.append(f"phase={_fmt(e.phase)}")
        return f"bs({', '.join(args)})"
    if e.kind == "phase":
        return f"phase({_fmt(e.phase)})"
    if e.kind == "mirror":
        return "mirror" if e.phase is None else f"mirror({_fmt(e.phase)})"
    if e.kind == "shutter":
        return f"shutter(opacity={_fmt(e.opacity)})"
    return e.kind


def to_text(net: Network) -> str:
    """Render ``net`` in the netlist grammar; ``parse(to_text(n)) == n``."""
    out = [f"network {net.name}", ""]
    out += [f"site {s}" for s in net.sites]
    if net.params:
        out.append("")
        out += [f"param {p.name}" if p.value is None else f"param {p.name} = {_fmt(p.value)}" for p in net.params]
    out.append("")
    out += [f"elem {e.name} : {_fmt_kind(e)} @ {e.site}" for e in net.elements]
    out.append("")
    out += [f"arm {a.name} : {a.src}.{a.src_port} -> {a.dst}.{a.dst_port} @ {a.site}" for a in net.arms]
    for c in net.configs:
        out.append("")
        out.append(f"config {c.name} {{")
        out += [f"    {el}.{s} = {_fmt(v)}" for el, s, v in c.settings]
        out.append("}")
    if net.blocks:
        out.append("")
    for b in net.blocks:
        tail = f" retune={b.retune}" if b.retune else ""
        out.append(f"block {b.name} : {' '.join(b.elements)} in={b.inlet} out={b.outlet}{tail}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------------------
# concrete networks

@dataclass(frozen=True)
class Concrete:
    """Fully numeric network: every element setting resolved to a number."""

    net: Network
    config: str | None
    reflectance: Mapping[str, float] = field(default_factory=dict)
    phase: Mapping[str, float] = field(default_factory=dict)
    opacity: Mapping[str, float] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.net.name


class UnresolvedParameter(ValueError):
    """A free parameter is needed to build a concrete network."""


def _resolve(v, params: Mapping[str, float | None], what: str) -> float:
    if v is None:
        return 0.0
    if isinstance(v, str):
        if v not in params:
            raise KeyError(f"unknown parameter {v!r}")
        if params[v] is None:
            raise UnresolvedParameter(f"unresolved free parameter {v!r} in {what}")
        return float(params[v])
    return float(v)


def apply_config(net: Network, config: str | None = None) -> Concrete:
    """Resolve settings of ``config`` (or the defaults) into numbers."""
    overrides: dict[str, dict[str, object]] = {}
    if config is not None:
        for el, setting, v in net.config(config).settings:
            overrides.setdefault(el, {})[setting] = v
    params = net.param_values()
    refl, ph, op = {}, {}, {}
    for e in net.elements:
        o = overrides.get(e.name, {})
        if e.kind == "bs":
            ratio = o.get("ratio", e.ratio)
            swap = bool(o.get("swap", e.swap))
            if isinstance(ratio, tuple):
                r = ratio[0] / (ratio[0] + ratio[1])
            else:
                r = _resolve(ratio, params, e.name)
                if not 0.0 <= r <= 1.0:
                    raise ValueError(f"reflectance of {e.name!r} outside [0, 1]")
            refl[e.name] = 1.0 - r if swap else r
            ph[e.name] = _resolve(o.get("phase", e.phase), params, e.name)
        elif e.kind in ("phase", "mirror"):
            ph[e.name] = _resolve(o.get("phase", e.phase), params, e.name)
        elif e.kind == "shutter":
            val = _resolve(o.get("opacity", e.opacity), params, e.name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"opacity of {e.name!r} outside [0, 1]")
            op[e.name] = val
    return Concrete(net, config, refl, ph, op)


# ----------------------------------------------------------------------------
# chain generator

def _rename(name: str, k: int) -> str:
    return name + "'" * k


def chain(base: Network, n: int) -> Network:
    """Repeat the network's annotated block ``n`` times in series.

    Copy ``k`` (0-based) renames block elements, internal arms and block-only
    parameters by appending ``k`` primes.  The outlet arm of each copy feeds
    the inlet port of the next one; the last outlet keeps the original
    destination.  The element named by the block's ``retune`` field gets a
    free reflectance parameter so that a tuner can rebalance the network.
    When the base has ``open`` and ``blocked`` configs, ``calibK`` configs
    are added for K = 1..n-1 with the first K copies blocked, so the
    interference of every later copy is observable.
    """
    if n < 1:
        raise ValueError("chain length must be a positive integer")
    if not base.blocks:
        raise ValueError(f"network {base.name!r} has no annotated block")
    blk = base.blocks[0]
    members = set(blk.elements)
    inlet = base.arm(blk.inlet)
    outlet = base.arm(blk.outlet)
    if inlet.dst not in members or inlet.src in members:
        raise ValueError("block inlet must enter the block")
    if outlet.src not in members or outlet.dst in members:
        raise ValueError("block outlet must leave the block")
    for a in base.arms:
        crossing = (a.src in members) != (a.dst in members)
        if crossing and a.name not in (blk.inlet, blk.outlet):
            raise ValueError(f"arm {a.name!r} crosses the block boundary")

    local_params = set()
    shared = set()
    for e in base.elements:
        refs = {v for v in (e.phase, e.opacity, e.ratio) if isinstance(v, str)}
        (local_params if e.name in members else shared).update(refs)
    local_params -= shared

    def ren_val(v, k):
        return _rename(v, k) if isinstance(v, str) and v in local_params else v

    params: list[Param] = []
    for p in base.params:
        if p.name in local_params:
            params += [Param(_rename(p.name, k), p.value) for k in range(n)]
        else:
            params.append(p)

    elements: list[Element] = []
    for e in base.elements:
        if e.name in members:
            for k in range(n):
                elements.append(replace(
                    e, name=_rename(e.name, k),
                    phase=ren_val(e.phase, k), opacity=ren_val(e.opacity, k), ratio=ren_val(e.ratio, k),
                ))
        else:
            elements.append(e)

    arms: list[Arm] = []
    for a in base.arms:
        if a.src in members and a.dst in members:
            for k in range(n):
                arms.append(replace(a, name=_rename(a.name, k), src=_rename(a.src, k), dst=_rename(a.dst, k)))
        elif a.name == blk.outlet:
            for k in range(n):
                last = k == n - 1
                arms.append(replace(
                    a, name=_rename(a.name, k), src=_rename(a.src, k),
                    dst=a.dst if last else _rename(inlet.dst, k + 1),
                    dst_port=a.dst_port if last else inlet.dst_port,
                ))
        else:
            arms.append(a)

    configs = []
    for c in base.configs:
        settings = []
        for el, s, v in c.settings:
            if el in members:
                settings += [(_rename(el, k), s, ren_val(v, k)) for k in range(n)]
            else:
                settings.append((el, s, v))
        configs.append(Config(c.name, tuple(settings)))
    by_name = {c.name: c for c in base.configs}
    if n > 1 and "open" in by_name and "blocked" in by_name:
        # calibK: stages before K blocked, the rest open
        blocked = [(el, s, v) for el, s, v in by_name["blocked"].settings if el in members]
        for k in range(1, n):
            settings = [(el, s, v) for el, s, v in by_name["open"].settings if el not in members]
            for j in range(n):
                src = blocked if j < k else [t for t in by_name["open"].settings if t[0] in members]
                settings += [(_rename(el, j), s, ren_val(v, j)) for el, s, v in src]
            configs.append(Config(f"calib{k}", tuple(settings)))

    if blk.retune is not None:
        pname = f"R_{blk.retune}"
        while any(p.name == pname for p in params):
            pname += "_"
        params.append(Param(pname, None))
        elements = [replace(e, ratio=pname, swap=False) if e.name == blk.retune else e for e in elements]

    new_block = Block(blk.name, tuple(_rename(m, k) for k in range(n) for m in blk.elements),
                      blk.inlet, _rename(blk.outlet, n - 1), blk.retune)
    net = Network(f"{base.name}_x{n}", base.sites, tuple(params), tuple(elements), tuple(arms),
                  tuple(configs), (new_block,) + base.blocks[1:])
    problems = validate(net)
    if problems:
        raise NetlistError(problems)
    return net


def load_sites(path_or_text) -> dict[str, str]:
    """Read a site relabelling: lines ``arm NAME @ SITE`` or ``elem NAME @ SITE``.

    Keys of the result are prefixed with ``arm:`` or ``elem:``.
    """
    text = str(path_or_text)
    if "\n" not in text and not text.lstrip().startswith(("arm", "elem", "#")):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    out: dict[str, str] = {}
    diags = []
    for k, raw in enumerate(text.splitlines(), 1):
        stmt = raw.split("#", 1)[0].strip()
        if not stmt:
            continue
        m = re.match(rf"^(arm|elem)\s+({_IDENT})\s*@\s*({_IDENT})$", stmt)
        if not m:
            diags.append(Diagnostic(k, 1, "expected 'arm NAME @ SITE' or 'elem NAME @ SITE'"))
            continue
        out[f"{m.group(1)}:{m.group(2)}"] = m.group(3)
    if diags:
        raise NetlistError(diags)
    return out


def relabel_sites(net: Network, mapping: Mapping[str, str]) -> Network:
    """Copy of ``net`` with arm and element sites reassigned."""
    arms = {a.name for a in net.arms}
    elems = {e.name for e in net.elements}
    for key in mapping:
        kind, _, name = key.partition(":")
        if (kind == "arm" and name not in arms) or (kind == "elem" and name not in elems) or kind not in ("arm", "elem"):
            raise NetlistError([Diagnostic(0, 0, f"unknown {kind or 'item'} {name!r} in site map")])
    sites = list(net.sites)
    for s in mapping.values():
        if s not in sites:
            sites.append(s)
    new = replace(
        net,
        sites=tuple(sites),
        arms=tuple(replace(a, site=mapping.get("arm:" + a.name, a.site)) for a in net.arms),
        elements=tuple(replace(e, site=mapping.get("elem:" + e.name, e.site)) for e in net.elements),
    )
    return new


def load(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())
