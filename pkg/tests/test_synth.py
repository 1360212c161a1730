import csv
import math

import numpy as np
import pytest

from fusioncell.geometry import LayoutDesign, Rect
from fusioncell.netlist import load_graph
from fusioncell.synth import (FAMILIES, LABEL_COLUMNS, SynthConfig, SynthError, build_dataset,
                              elmore, extract_rc, generate_cell, label_cell, netlist_text)

CFG = SynthConfig()


def wire(length, width, layer="M0", net=0, y=100.0):
    return Rect(layer, 10.0, y, 10.0 + length, y + width, net)


def design_of(*rects, nets=None):
    return LayoutDesign("t", 1000.0, 1000.0, list(rects), [], nets or {0: "Y"})


def test_single_wire_resistance():
    cfg = SynthConfig(sheet_res_ohm={"M0": 10.0, "M1": 10.0, "M2": 10.0})
    rc = extract_rc(design_of(wire(100, 20)), cfg)
    assert rc["Y"].resistance == pytest.approx(50.0)
    assert rc["Y"].coupling == {}
    # C = area * 0.02 aF/nm^2 + perimeter * 0.5 aF/nm, in fF
    assert rc["Y"].ground_cap == pytest.approx(1e-3 * (0.02 * 2000 + 0.5 * 240))


def test_parallel_run_coupling():
    a, b = wire(100, 14, net=0, y=100), wire(60, 14, net=1, y=134)
    rc = extract_rc(design_of(a, b, nets={0: "A", 1: "B"}), CFG)
    expected = 1e-3 * CFG.coupling_cap_af * 60 / 20
    assert rc["A"].coupling == {"B": pytest.approx(expected)}
    assert rc["B"].coupling == {"A": pytest.approx(expected)}
    far = wire(60, 14, net=1, y=200)
    assert extract_rc(design_of(a, far, nets={0: "A", 1: "B"}), CFG)["A"].coupling == {}


def test_doubling_length_doubles_r_and_raises_c():
    short, long_ = extract_rc(design_of(wire(100, 20)), CFG)["Y"], extract_rc(design_of(wire(200, 20)), CFG)["Y"]
    assert long_.resistance == pytest.approx(2 * short.resistance)
    assert long_.total_cap > short.total_cap


def test_inverter_closed_form_without_wires():
    g = load_graph(netlist_text("INV", 1, CFG))
    rc = extract_rc(LayoutDesign("z", 10, 10, [], [], {i: n.name for i, n in enumerate(g.nets)}), CFG)
    r_p = CFG.r_unit_ohm["PMOS"] * CFG.length_nm / CFG.base_width_nm
    r_n = CFG.r_unit_ohm["NMOS"] * CFG.length_nm / CFG.base_width_nm
    c_out = CFG.load_cap_ff + 2 * 1e-3 * CFG.c_diff_af_per_nm * CFG.base_width_nm
    y = label_cell(g, rc, CFG)
    assert y[0] == pytest.approx(math.log(2) * r_p * c_out * 1e-3, rel=1e-12)
    assert y[1] == pytest.approx(math.log(2) * r_n * c_out * 1e-3, rel=1e-12)
    assert y[2] == pytest.approx(math.log(9) * r_p * c_out * 1e-3, rel=1e-12)
    assert y[4] == pytest.approx(0.5 * c_out * CFG.vdd ** 2, rel=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_output_extension_never_speeds_up(family):
    for seed in range(5):
        _, d0, ct = generate_cell(family, 1, seed, CFG)
        text, d1, _ = generate_cell(family, 1, seed, CFG, output_extension_nm=80.0)
        g = load_graph(text, ct)
        y0, y1 = label_cell(g, extract_rc(d0, CFG), CFG), label_cell(g, extract_rc(d1, CFG), CFG)
        assert (y1[:4] >= y0[:4]).all()


@pytest.mark.parametrize("family", FAMILIES)
def test_doubling_drive_is_faster(family):
    for seed in range(5):
        t1, d1, c1 = generate_cell(family, 1, seed, CFG)
        t2, d2, c2 = generate_cell(family, 2, seed, CFG)
        assert d1.rects == d2.rects  # sizing is not drawn in the metal layers
        y1 = label_cell(load_graph(t1, c1), extract_rc(d1, CFG), CFG)
        y2 = label_cell(load_graph(t2, c2), extract_rc(d2, CFG), CFG)
        assert (y2[:4] < y1[:4]).all()


def test_nand2_drive2_widths_double():
    w1 = [d.width_nm for d in load_graph(netlist_text("NAND2", 1, CFG)).devices]
    w2 = [d.width_nm for d in load_graph(netlist_text("NAND2", 2, CFG)).devices]
    assert w2 == [2 * w for w in w1]


def test_inverter_netlist():
    text, _, ctype = generate_cell("INV", 1, 0, CFG)
    g = load_graph(text)
    assert ctype == "INVD1" and len(g.devices) == 2
    assert {n.name for n in g.nets} == {"A", "Y", "VDD", "VSS"}


@pytest.mark.parametrize("family", FAMILIES)
def test_variants_share_graph_but_not_geometry(family):
    (t0, d0, _), (t1, d1, _) = generate_cell(family, 1, 11, CFG), generate_cell(family, 1, 12, CFG)
    g0, g1 = load_graph(t0), load_graph(t1)
    assert t0 == t1
    assert g0.conn_edges == g1.conn_edges and g0.corr_edges == g1.corr_edges
    np.testing.assert_array_equal(g0.node_features, g1.node_features)
    assert d0.rects != d1.rects


def test_supply_nets_take_the_highest_indices():
    _, d, _ = generate_cell("AOI21", 1, 0, CFG)
    n = len(d.net_names)
    assert d.net_names[n - 2] == "VDD" and d.net_names[n - 1] == "VSS"


def test_elmore_switched_cap_covers_output():
    text, d, ct = generate_cell("NAND2", 1, 3, CFG)
    g = load_graph(text, ct)
    tau, c_sw = elmore(g, extract_rc(d, CFG), CFG, rising=False)
    assert tau > 0 and c_sw > CFG.load_cap_ff


def test_missing_rc_entry_raises():
    text, d, ct = generate_cell("INV", 1, 0, CFG)
    rc = extract_rc(d, CFG)
    del rc["Y"]
    with pytest.raises(SynthError):
        label_cell(load_graph(text, ct), rc, CFG)


def test_config_validation():
    with pytest.raises(SynthError):
        SynthConfig(variants_per_type=1)
    with pytest.raises(SynthError):
        SynthConfig(load_cap_ff=0.0)
    with pytest.raises(SynthError):
        SynthConfig(families=[{"function": "XOR2", "drives": [1]}])
    with pytest.raises(SynthError, match="too small"):
        generate_cell("AOI21", 1, 0, SynthConfig(canvas_nm=(200.0, 300.0)))


def test_dataset_counts_and_positivity(tmp_path):
    m = build_dataset(SynthConfig(), tmp_path)
    assert len(m["entries"]) == 80
    assert len({e["cell_type"] for e in m["entries"]}) == 8
    with open(tmp_path / "labels.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["id", *LABEL_COLUMNS] and len(rows) == 81
    vals = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert np.isfinite(vals).all() and (vals > 0).all()
    assert (tmp_path / "cells" / "NAND2D1_v003.sp").exists()


def test_dataset_is_deterministic(tmp_path):
    cfg = SynthConfig(families=[{"function": "NOR2", "drives": [1, 2]}], variants_per_type=3)
    build_dataset(cfg, tmp_path / "a")
    build_dataset(cfg, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_num_cells_spreads_over_types(tmp_path):
    m = build_dataset(SynthConfig(num_cells=19, families=[{"function": "INV", "drives": [1, 2, 4]}]), tmp_path)
    counts = {}
    for e in m["entries"]:
        counts[e["cell_type"]] = counts.get(e["cell_type"], 0) + 1
    assert counts == {"INVD1": 7, "INVD2": 6, "INVD4": 6}
