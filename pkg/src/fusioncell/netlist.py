"""SPICE-subset netlist parsing and heterogeneous device/net graph construction.

Supported grammar (keywords case-insensitive, ``*`` starts a comment line,
``+`` continues the previous line)::

    .SUBCKT <name> <pin> <pin> ...
    M<name> <drain> <gate> <source> <bulk> <model> W=<value> L=<value> [other=...]
    .ENDS [<name>]

Values take an optional SI suffix and are returned in nanometres:
``f``=1e-6, ``p``=1e-3, ``n``=1, ``u``=1e3, ``m``=1e6; a bare number is metres.
Models starting with ``n`` (or containing ``nmos``/``nfet``) are NMOS, with
``p`` (or ``pmos``/``pfet``) PMOS.  Pins named VDD/VCC/VPWR are power,
VSS/GND/VGND ground; other pins are outputs when they touch a channel
terminal and inputs otherwise.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

TERMINALS = ("drain", "gate", "source", "bulk")
POWER_NAMES = {"VDD", "VCC", "VPWR"}
GROUND_NAMES = {"VSS", "GND", "VGND", "0"}
FEATURE_DIM = 9

# edge_type codes in AdjacencyMask
EDGE_NONE, EDGE_CONN, EDGE_CORR, EDGE_SELF = 0, 1, 2, 3
NUM_EDGE_TYPES = 4

_UNIT_NM = {"f": 1e-6, "p": 1e-3, "n": 1.0, "u": 1e3, "m": 1e6}
_VALUE_RE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)([a-z]*)$", re.I)


class NetlistError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


@dataclass
class Device:
    name: str
    kind: str  # "NMOS" | "PMOS"
    width_nm: float
    length_nm: float
    terminals: dict[str, str]


@dataclass
class Pin:
    name: str
    role: str  # input | output | power | ground


@dataclass
class Net:
    name: str
    degree: int
    is_input: bool = False
    is_output: bool = False
    is_power: bool = False
    is_ground: bool = False


@dataclass
class CellGraph:
    cell_type: str
    devices: list[Device]
    nets: list[Net]
    conn_edges: list[tuple[int, int, str]]
    corr_edges: list[tuple[int, int]]
    node_features: np.ndarray = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.devices) + len(self.nets)

    @property
    def node_type_mask(self) -> list[str]:
        return ["device"] * len(self.devices) + ["net"] * len(self.nets)

    @property
    def node_names(self) -> list[str]:
        return [d.name for d in self.devices] + [n.name for n in self.nets]


@dataclass
class AdjacencyMask:
    allowed: np.ndarray    # (N, N) bool
    edge_type: np.ndarray  # (N, N) int


def parse_value_nm(text: str) -> float:
    m = _VALUE_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad numeric value {text!r}")
    num, suffix = float(m.group(1)), m.group(2).lower()
    if not suffix:
        return num * 1e9
    if suffix not in _UNIT_NM:
        raise ValueError(f"unknown unit suffix {suffix!r} in {text!r}")
    return num * _UNIT_NM[suffix]


def _model_kind(model: str) -> str | None:
    m = model.lower()
    if "nmos" in m or "nfet" in m:
        return "NMOS"
    if "pmos" in m or "pfet" in m:
        return "PMOS"
    if m.startswith("n"):
        return "NMOS"
    if m.startswith("p"):
        return "PMOS"
    return None


def _logical_lines(text: str):
    buf, start = None, 0
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("$", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        if line.startswith("+"):
            if buf is None:
                raise NetlistError("continuation line without a preceding statement", no)
            buf += " " + line[1:].strip()
            continue
        if buf is not None:
            yield start, buf
        buf, start = line, no
    if buf is not None:
        yield start, buf


def parse_netlist(text: str) -> tuple[list[Device], list[Pin], str]:
    """Parse one subcircuit; returns (devices in file order, pins, subckt name)."""
    devices: list[Device] = []
    pin_names: list[str] | None = None
    name = None
    ended = False
    for no, line in _logical_lines(text):
        tok = line.split()
        head = tok[0].upper()
        if head == ".SUBCKT":
            if pin_names is not None:
                raise NetlistError("nested or repeated .SUBCKT", no)
            if len(tok) < 2:
                raise NetlistError(".SUBCKT without a name", no)
            name, pin_names = tok[1], tok[2:]
        elif head == ".ENDS":
            if pin_names is None:
                raise NetlistError(".ENDS before .SUBCKT", no)
            ended = True
            break
        elif head.startswith("M"):
            if pin_names is None:
                raise NetlistError("device outside .SUBCKT", no)
            devices.append(_parse_device(tok, no))
        elif head.startswith("."):
            continue  # other dot-cards (.param, .option) carry nothing we use
        else:
            raise NetlistError(f"unsupported element {tok[0]!r}", no)
    if pin_names is None:
        raise NetlistError("missing .SUBCKT")
    if not ended:
        raise NetlistError("missing .ENDS")
    return devices, _infer_pins(pin_names, devices), name


def _parse_device(tok: list[str], no: int) -> Device:
    if len(tok) < 6:
        raise NetlistError(f"malformed device line: expected 'M d g s b model W= L=', got {' '.join(tok)!r}", no)
    kind = _model_kind(tok[5])
    if kind is None:
        raise NetlistError(f"unknown model {tok[5]!r}", no)
    params = {}
    for t in tok[6:]:
        if "=" not in t:
            raise NetlistError(f"malformed parameter {t!r}", no)
        k, v = t.split("=", 1)
        params[k.strip().upper()] = v.strip()
    if "W" not in params or "L" not in params:
        raise NetlistError("device needs both W= and L=", no)
    try:
        w, length = parse_value_nm(params["W"]), parse_value_nm(params["L"])
    except ValueError as e:
        raise NetlistError(str(e), no) from None
    if w <= 0 or length <= 0:
        raise NetlistError("W and L must be positive", no)
    return Device(tok[0], kind, w, length, dict(zip(TERMINALS, tok[1:5])))


def _infer_pins(pin_names: list[str], devices: list[Device]) -> list[Pin]:
    channel = {d.terminals[t] for d in devices for t in ("drain", "source")}
    pins = []
    for p in pin_names:
        up = p.upper()
        if up in POWER_NAMES:
            role = "power"
        elif up in GROUND_NAMES:
            role = "ground"
        elif p in channel:
            role = "output"
        else:
            role = "input"
        pins.append(Pin(p, role))
    return pins


def build_graph(devices: list[Device], pins: list[Pin], cell_type: str = "",
                with_corr: bool = True) -> CellGraph:
    """Heterogeneous graph: device nodes first (file order), then net nodes.

    Nets are ordered pins-first then by first appearance.  Correlation edges
    join every pair of distinct non-supply nets that share a device.
    """
    if not devices:
        raise NetlistError("cell has no devices")
    order: list[str] = [p.name for p in pins]
    for d in devices:
        for t in TERMINALS:
            if d.terminals[t] not in order:
                order.append(d.terminals[t])
    used = {d.terminals[t] for d in devices for t in TERMINALS}
    order = [n for n in order if n in used]
    net_idx = {n: i for i, n in enumerate(order)}
    roles = {p.name: p.role for p in pins}

    conn = [(di, net_idx[d.terminals[t]], t) for di, d in enumerate(devices) for t in TERMINALS]
    degree = np.zeros(len(order), dtype=int)
    for _, ni, _ in conn:
        degree[ni] += 1
    nets = []
    for n in order:
        role = roles.get(n)
        if role is None:
            up = n.upper()
            role = "power" if up in POWER_NAMES else "ground" if up in GROUND_NAMES else None
        nets.append(Net(n, int(degree[net_idx[n]]), role == "input", role == "output",
                        role == "power", role == "ground"))

    corr: list[tuple[int, int]] = []
    if with_corr:
        pairs = set()
        for d in devices:
            sig = sorted({net_idx[d.terminals[t]] for t in TERMINALS} - _supply(nets))
            pairs.update(combinations(sig, 2))
        corr = sorted(pairs)
    g = CellGraph(cell_type, devices, nets, conn, corr)
    g.node_features = encode_features(g)
    return g


def _supply(nets: list[Net]) -> set[int]:
    return {i for i, n in enumerate(nets) if n.is_power or n.is_ground}


def encode_features(graph: CellGraph) -> np.ndarray:
    """Node features, F = 9, device and net attributes in disjoint slots."""
    feats = np.zeros((graph.num_nodes, FEATURE_DIM))
    for i, d in enumerate(graph.devices):
        feats[i, 0 if d.kind == "NMOS" else 1] = 1.0
        feats[i, 2] = d.width_nm / 100.0
        feats[i, 3] = d.length_nm / 100.0
    max_deg = max((n.degree for n in graph.nets), default=1)
    off = len(graph.devices)
    for j, n in enumerate(graph.nets):
        feats[off + j, 4:] = [n.degree / max_deg, n.is_input, n.is_output, n.is_power, n.is_ground]
    return feats


def build_mask(graph: CellGraph) -> AdjacencyMask:
    N = graph.num_nodes
    et = np.zeros((N, N), dtype=np.int64)
    off = len(graph.devices)
    for di, ni, _ in graph.conn_edges:
        et[di, off + ni] = et[off + ni, di] = EDGE_CONN
    for a, b in graph.corr_edges:
        et[off + a, off + b] = et[off + b, off + a] = EDGE_CORR
    np.fill_diagonal(et, EDGE_SELF)
    return AdjacencyMask(et != EDGE_NONE, et)


def load_graph(text: str, cell_type: str = "", with_corr: bool = True) -> CellGraph:
    devices, pins, name = parse_netlist(text)
    return build_graph(devices, pins, cell_type or name, with_corr=with_corr)
