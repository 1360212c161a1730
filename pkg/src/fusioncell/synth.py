"""Synthetic cell families and an analytic RC/Elmore labelling oracle.

Each cell is a canonical static-CMOS topology laid out on a small track grid:
supply rails on M0, one M0 trunk per signal net on its own horizontal track,
one M1 stub per contact column and an M2 pin strip for every IO net.  Variant
seeds reshuffle tracks, contact columns, trunk detours and strip lengths, so
variants of one cell type share the netlist and differ only in routing.
Transistor sizing lives in the front-end layers, which are not drawn; the
three metal layers therefore look alike across drive strengths.

Units: nm, Ω, fF, ps, fJ.  R[Ω]·C[fF] = 1e-3 ps.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import LayoutDesign, Rect, Via, design_to_json
from .netlist import CellGraph, load_graph

FAMILIES = ("INV", "NAND2", "NOR2", "AOI21")
LABEL_COLUMNS = ("rise_delay_ps", "fall_delay_ps", "rise_trans_ps", "fall_trans_ps",
                 "rise_power_fj", "fall_power_fj")

# (name, kind, drain, gate, source, bulk); widths are base_width * drive
_TOPOLOGY = {
    "INV": (["A"], [
        ("MP0", "PMOS", "Y", "A", "VDD", "VDD"),
        ("MN0", "NMOS", "Y", "A", "VSS", "VSS"),
    ]),
    "NAND2": (["A", "B"], [
        ("MP0", "PMOS", "Y", "A", "VDD", "VDD"),
        ("MP1", "PMOS", "Y", "B", "VDD", "VDD"),
        ("MN0", "NMOS", "Y", "A", "n1", "VSS"),
        ("MN1", "NMOS", "n1", "B", "VSS", "VSS"),
    ]),
    "NOR2": (["A", "B"], [
        ("MP0", "PMOS", "n1", "A", "VDD", "VDD"),
        ("MP1", "PMOS", "Y", "B", "n1", "VDD"),
        ("MN0", "NMOS", "Y", "A", "VSS", "VSS"),
        ("MN1", "NMOS", "Y", "B", "VSS", "VSS"),
    ]),
    "AOI21": (["A1", "A2", "B"], [
        ("MP0", "PMOS", "n2", "A1", "VDD", "VDD"),
        ("MP1", "PMOS", "n2", "A2", "VDD", "VDD"),
        ("MP2", "PMOS", "Y", "B", "n2", "VDD"),
        ("MN0", "NMOS", "Y", "A1", "n1", "VSS"),
        ("MN1", "NMOS", "n1", "A2", "VSS", "VSS"),
        ("MN2", "NMOS", "Y", "B", "VSS", "VSS"),
    ]),
}


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    seed: int = 7
    families: list[dict] = field(default_factory=lambda: [
        {"function": f, "drives": [1, 2]} for f in FAMILIES])
    variants_per_type: int = 10
    num_cells: int | None = None  # when set, spread this many cells over the types
    # canvas and grid
    canvas_nm: tuple[float, float] = (560.0, 300.0)
    margin_nm: float = 40.0
    column_pitch_nm: float = 40.0
    track_pitch_nm: float = 30.0
    rail_width_nm: float = 20.0
    wire_width_nm: dict = field(default_factory=lambda: {"M0": 14.0, "M1": 14.0, "M2": 14.0})
    via_size_nm: float = 14.0
    # devices
    base_width_nm: float = 81.0
    length_nm: float = 20.0
    r_unit_ohm: dict = field(default_factory=lambda: {"NMOS": 15000.0, "PMOS": 22000.0})
    c_diff_af_per_nm: float = 0.6
    c_gate_af_per_nm: float = 0.8
    # interconnect
    sheet_res_ohm: dict = field(default_factory=lambda: {"M0": 40.0, "M1": 30.0, "M2": 20.0})
    area_cap_af_per_nm2: float = 0.02
    fringe_cap_af_per_nm: float = 0.5
    coupling_cap_af: float = 8.0  # C = coupling_cap * overlap_nm / spacing_nm
    coupling_range_nm: float = 40.0
    load_cap_ff: float = 0.4
    vdd: float = 0.7

    def __post_init__(self):
        positive = [self.base_width_nm, self.length_nm, self.c_diff_af_per_nm, self.c_gate_af_per_nm,
                    self.area_cap_af_per_nm2, self.fringe_cap_af_per_nm, self.coupling_cap_af,
                    self.load_cap_ff, self.vdd, *self.r_unit_ohm.values(), *self.sheet_res_ohm.values(),
                    *self.wire_width_nm.values()]
        if min(positive) <= 0:
            raise SynthError("all process constants must be > 0")
        if self.variants_per_type < 2:
            raise SynthError("variants_per_type must be >= 2 for within-type ranking")
        for fam in self.families:
            if fam["function"] not in _TOPOLOGY:
                raise SynthError(f"unsupported family {fam['function']!r}")
        self.canvas_nm = tuple(float(x) for x in self.canvas_nm)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise SynthError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas_nm"] = list(self.canvas_nm)
        return d

    def cell_types(self) -> list[tuple[str, int]]:
        return [(f["function"], int(dr)) for f in self.families for dr in f["drives"]]


@dataclass
class RcNet:
    name: str
    resistance: float            # Ω
    ground_cap: float            # fF
    coupling: dict[str, float]   # neighbour net -> fF

    @property
    def total_cap(self) -> float:
        # coupling folded to ground with Miller factor 1
        return self.ground_cap + sum(self.coupling.values())


def cell_type_name(family: str, drive: int) -> str:
    return f"{family}D{drive}"


def netlist_text(family: str, drive: int, cfg: SynthConfig) -> str:
    if family not in _TOPOLOGY:
        raise SynthError(f"unsupported family {family!r}")
    inputs, devs = _TOPOLOGY[family]
    w = cfg.base_width_nm * drive
    lines = [f"* {cell_type_name(family, drive)}",
             f".SUBCKT {cell_type_name(family, drive)} {' '.join(inputs)} Y VDD VSS"]
    for name, kind, d, g, s, b in devs:
        model = "pmos_rvt" if kind == "PMOS" else "nmos_rvt"
        lines.append(f"{name} {d} {g} {s} {b} {model} W={_fmt(w)}n L={_fmt(cfg.length_nm)}n")
    lines.append(".ENDS")
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return f"{x:g}"


def _net_order(family: str) -> list[str]:
    inputs, devs = _TOPOLOGY[family]
    internal = sorted({t for dv in devs for t in dv[2:] if t not in inputs + ["Y", "VDD", "VSS"]})
    return inputs + ["Y"] + internal + ["VDD", "VSS"]


def _contacts(family: str) -> dict[str, list[str]]:
    """Device rows ('P' top, 'N' bottom, 'G' gate) each signal net must reach."""
    inputs, devs = _TOPOLOGY[family]
    rows: dict[str, set] = {}
    for _, kind, d, g, s, _b in devs:
        rows.setdefault(g, set()).add("G")
        for t in (d, s):
            if t not in ("VDD", "VSS"):
                rows.setdefault(t, set()).add("P" if kind == "PMOS" else "N")
    return {n: sorted(rows[n]) for n in _net_order(family) if n in rows}


def _rng_for(*parts) -> np.random.Generator:
    h = hashlib.blake2b("/".join(map(str, parts)).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(h, "little"))


def generate_cell(family: str, drive: int, variant_seed: int, cfg: SynthConfig,
                  output_extension_nm: float = 0.0) -> tuple[str, LayoutDesign, str]:
    """Netlist text, routed layout and cell-type label for one variant.

    ``output_extension_nm`` lengthens the output trunk to the right (used to
    build monotonicity pairs); it is clipped at the cell boundary.
    """
    if family not in _TOPOLOGY:
        raise SynthError(f"unsupported family {family!r}")
    ctype = cell_type_name(family, drive)
    rng = _rng_for("layout", family, variant_seed)
    width, height = cfg.canvas_nm
    nets = _net_order(family)
    net_id = {n: i for i, n in enumerate(nets)}
    contacts = _contacts(family)
    signal = [n for n in nets if n not in ("VDD", "VSS")]
    ww = cfg.wire_width_nm
    hw0, hw1, hw2 = ww["M0"] / 2, ww["M1"] / 2, ww["M2"] / 2

    n_cols = int((width - 2 * cfg.margin_nm) // cfg.column_pitch_nm)
    col_x = [cfg.margin_nm + (c + 0.5) * cfg.column_pitch_nm for c in range(n_cols)]
    y_lo = cfg.rail_width_nm + cfg.track_pitch_nm
    n_tracks = int((height - 2 * y_lo) // cfg.track_pitch_nm) + 1
    track_y = [y_lo + t * cfg.track_pitch_nm for t in range(n_tracks)]
    y_n, y_p = cfg.rail_width_nm + hw1, height - cfg.rail_width_nm - hw1
    y_gate = height / 2

    n_stubs = sum(len(v) for v in contacts.values())
    if n_stubs > n_cols or len(signal) > n_tracks:
        raise SynthError(f"canvas {width}x{height} nm too small to route {ctype}")

    tracks = rng.permutation(n_tracks)[:len(signal)]
    cols = sorted(rng.permutation(n_cols)[:n_stubs])
    cols = list(rng.permutation(cols))
    rects: list[Rect] = [
        Rect("M0", 0.0, height - cfg.rail_width_nm, width, height, net_id["VDD"]),
        Rect("M0", 0.0, 0.0, width, cfg.rail_width_nm, net_id["VSS"]),
    ]
    vias: list[Via] = []
    lo_x, hi_x = cfg.margin_nm / 2, width - cfg.margin_nm / 2
    ci = 0
    for k, net in enumerate(signal):
        nid = net_id[net]
        ty = track_y[tracks[k]]
        xs = []
        for row in contacts[net]:
            x = col_x[cols[ci]]
            ci += 1
            xs.append(x)
            if row == "G":
                # gate contact: short stub of one or two tracks towards the cell middle
                reach = cfg.track_pitch_nm * rng.integers(1, 3)
                y_end = ty + reach if ty < y_gate else ty - reach
            else:
                y_end = y_p if row == "P" else y_n
            y0, y1 = sorted((ty, y_end))
            rects.append(Rect("M1", x - hw1, max(y0 - hw0, cfg.rail_width_nm),
                              x + hw1, min(y1 + hw0, height - cfg.rail_width_nm), nid))
            vias.append(Via("M0", x, ty, cfg.via_size_nm, nid))
        is_out = net == "Y"
        max_ext = 6 if is_out else 3
        ext_l = cfg.column_pitch_nm * rng.integers(0, max_ext + 1)
        ext_r = cfg.column_pitch_nm * rng.integers(0, max_ext + 1)
        if is_out:
            ext_r += output_extension_nm
        x0 = max(min(xs) - hw1 - ext_l, lo_x)
        x1 = min(max(xs) + hw1 + ext_r, hi_x)
        rects.append(Rect("M0", x0, ty - hw0, x1, ty + hw0, nid))
        if net in _TOPOLOGY[family][0] or is_out:
            # M2 pin strip over the trunk, via-connected at the first contact column
            xv = xs[0]
            span = cfg.column_pitch_nm * rng.integers(1, 9 if is_out else 4)
            left = cfg.column_pitch_nm * rng.integers(0, 3)
            s0 = max(xv - hw2 - left, lo_x)
            s1 = min(max(xv + hw2, s0 + span), hi_x)
            rects.append(Rect("M2", s0, ty - hw2, s1, ty + hw2, nid))
            vias.append(Via("M1", xv, ty, cfg.via_size_nm, nid))
    design = LayoutDesign(ctype, width, height, rects, vias, {i: n for n, i in net_id.items()})
    design.validate()
    return netlist_text(family, drive, cfg), design, ctype


def extract_rc(design: LayoutDesign, cfg: SynthConfig) -> dict[str, RcNet]:
    """Per-net wire resistance, ground capacitance and parallel-run coupling."""
    names = design.net_names
    out = {n: RcNet(n, 0.0, 0.0, {}) for n in names.values()}
    for r in design.rects:
        w, h = r.x1 - r.x0, r.y1 - r.y0
        length, width = max(w, h), min(w, h)
        net = out[names[r.net_id]]
        net.resistance += cfg.sheet_res_ohm[r.layer] * length / width
        net.ground_cap += 1e-3 * (cfg.area_cap_af_per_nm2 * w * h + cfg.fringe_cap_af_per_nm * 2 * (w + h))
    rects = design.rects
    for i in range(len(rects)):
        a = rects[i]
        for b in rects[i + 1:]:
            if a.layer != b.layer or a.net_id == b.net_id:
                continue
            c = _coupling(a, b, cfg)
            if c > 0:
                na, nb = names[a.net_id], names[b.net_id]
                out[na].coupling[nb] = out[na].coupling.get(nb, 0.0) + c
                out[nb].coupling[na] = out[nb].coupling.get(na, 0.0) + c
    return out


def _coupling(a: Rect, b: Rect, cfg: SynthConfig) -> float:
    x_ov = min(a.x1, b.x1) - max(a.x0, b.x0)
    y_ov = min(a.y1, b.y1) - max(a.y0, b.y0)
    if x_ov > 0 and y_ov <= 0:
        overlap, spacing = x_ov, -y_ov
    elif y_ov > 0 and x_ov <= 0:
        overlap, spacing = y_ov, -x_ov
    else:
        return 0.0
    if spacing <= 0 or spacing > cfg.coupling_range_nm:
        return 0.0
    return 1e-3 * cfg.coupling_cap_af * overlap / spacing


def _device_caps(graph: CellGraph, cfg: SynthConfig) -> dict[str, float]:
    caps: dict[str, float] = {}
    for d in graph.devices:
        for t in ("drain", "source"):
            n = d.terminals[t]
            caps[n] = caps.get(n, 0.0) + 1e-3 * cfg.c_diff_af_per_nm * d.width_nm
        g = d.terminals["gate"]
        caps[g] = caps.get(g, 0.0) + 1e-3 * cfg.c_gate_af_per_nm * d.width_nm
    return caps


def _paths(graph: CellGraph, kind: str, source: str, target: str) -> list[list[tuple[object, str]]]:
    """Simple channel paths source -> target through devices of ``kind``."""
    devs = [d for d in graph.devices if d.kind == kind]
    found = []

    def walk(net, used, path):
        if net == target:
            found.append(list(path))
            return
        for d in devs:
            if d.name in used:
                continue
            a, b = d.terminals["source"], d.terminals["drain"]
            nxt = b if a == net else a if b == net else None
            if nxt is None or any(n == nxt for _, n in path):
                continue
            used.add(d.name)
            path.append((d, nxt))
            walk(nxt, used, path)
            path.pop()
            used.discard(d.name)

    walk(source, set(), [])
    return found


def _output_name(graph: CellGraph) -> str:
    outs = [n.name for n in graph.nets if n.is_output]
    if len(outs) != 1:
        raise SynthError(f"expected exactly one output net, got {outs}")
    return outs[0]


def node_capacitance(graph: CellGraph, rc: dict[str, RcNet], cfg: SynthConfig) -> dict[str, float]:
    dev = _device_caps(graph, cfg)
    out = _output_name(graph)
    caps = {}
    for n in graph.nets:
        if n.is_power or n.is_ground:
            continue
        if n.name not in rc:
            raise SynthError(f"no RC data for net {n.name!r}")
        caps[n.name] = rc[n.name].total_cap + dev.get(n.name, 0.0) + (cfg.load_cap_ff if n.name == out else 0.0)
    return caps


def elmore(graph: CellGraph, rc: dict[str, RcNet], cfg: SynthConfig, rising: bool) -> tuple[float, float]:
    """Worst-case Elmore time constant (ps) and switched capacitance (fF) of one edge.

    Each supply-to-output channel path is an RC ladder: every device adds
    R_unit*L/W, every net adds its wire R ahead of its lumped capacitance.
    """
    kind, supply = ("PMOS", "VDD") if rising else ("NMOS", "VSS")
    out = _output_name(graph)
    caps = node_capacitance(graph, rc, cfg)
    supply_r = rc[supply].resistance if supply in rc else 0.0
    best = (-1.0, 0.0)
    for path in _paths(graph, kind, supply, out):
        r_up, tau, c_sw = supply_r, 0.0, 0.0
        for d, net in path:
            r_up += cfg.r_unit_ohm[d.kind] * d.length_nm / d.width_nm + rc[net].resistance
            tau += r_up * caps[net]
            c_sw += caps[net]
        tau *= 1e-3  # Ω·fF -> ps
        if tau > best[0]:
            best = (tau, c_sw)
    if best[0] < 0:
        raise SynthError(f"no {kind} path from {supply} to {out}")
    return best


def label_cell(graph: CellGraph, rc: dict[str, RcNet], cfg: SynthConfig) -> np.ndarray:
    """Raw labels in LABEL_COLUMNS order (ps, ps, ps, ps, fJ, fJ)."""
    tau_r, c_r = elmore(graph, rc, cfg, rising=True)
    tau_f, c_f = elmore(graph, rc, cfg, rising=False)
    v2 = cfg.vdd ** 2
    y = np.array([math.log(2) * tau_r, math.log(2) * tau_f,
                  math.log(9) * tau_r, math.log(9) * tau_f,
                  0.5 * c_r * v2, 0.5 * c_f * v2])
    if not (np.isfinite(y).all() and (y > 0).all()):
        raise SynthError(f"oracle produced non-positive labels {y}")
    return y


def _plan(cfg: SynthConfig) -> list[tuple[str, int, int]]:
    types = cfg.cell_types()
    if cfg.num_cells is None:
        counts = [cfg.variants_per_type] * len(types)
    else:
        base, extra = divmod(cfg.num_cells, len(types))
        counts = [base + (i < extra) for i in range(len(types))]
        if min(counts) < 2:
            raise SynthError("num_cells too small: every cell type needs >= 2 variants")
    return [(f, d, v) for (f, d), n in zip(types, counts) for v in range(n)]


def build_dataset(cfg: SynthConfig, out_dir) -> dict:
    """Write netlists, layouts, labels.csv and manifest.json under ``out_dir``."""
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    entries = []
    csv_buf = io.StringIO()
    writer = csv.writer(csv_buf, lineterminator="\n")
    writer.writerow(["id", *LABEL_COLUMNS])
    for family, drive, v in _plan(cfg):
        vseed = int(_rng_for("variant", cfg.seed, family, drive, v).integers(2**31))
        text, design, ctype = generate_cell(family, drive, vseed, cfg)
        cid = f"{ctype}_v{v:03d}"
        design.cell_name = cid
        graph = load_graph(text, ctype)
        labels = label_cell(graph, extract_rc(design, cfg), cfg)
        (out / "cells" / f"{cid}.sp").write_text(text)
        (out / "cells" / f"{cid}.json").write_text(json.dumps(design_to_json(design), indent=1) + "\n")
        writer.writerow([cid, *(repr(float(x)) for x in labels)])
        entries.append({
            "id": cid, "cell_type": ctype, "family": family, "drive": drive,
            "netlist": f"cells/{cid}.sp", "layout": f"cells/{cid}.json",
            "labels": dict(zip(LABEL_COLUMNS, map(float, labels))),
        })
    (out / "labels.csv").write_text(csv_buf.getvalue())
    manifest = {"synth_config": cfg.to_dict(), "label_columns": list(LABEL_COLUMNS), "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
