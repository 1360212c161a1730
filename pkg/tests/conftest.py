import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fusioncell.encoders import GraphBatch, collate_graphs  # noqa: E402
from fusioncell.fusion import Batch, ModelConfig  # noqa: E402
from fusioncell.geometry import RasterConfig, rasterize  # noqa: E402
from fusioncell.netlist import load_graph  # noqa: E402
from fusioncell.synth import FAMILIES, SynthConfig, generate_cell  # noqa: E402

TOY = dict(d=8, heads=2, layout_layers=1, graph_layers=2, ffn_mult=2, patch_size=8, H=16, W=16)


def toy_config(variant: str = "fusioncell", **kw) -> ModelConfig:
    return ModelConfig(variant=variant, **{**TOY, **kw})


def synthetic_cells(n: int, seed: int = 0, canvas: int = 16, with_corr: bool = True):
    """``n`` (layout array, CellGraph) pairs cycling over families and drives."""
    cfg = SynthConfig()
    raster = RasterConfig(H=canvas, W=canvas, patch_size=8)
    out = []
    for i in range(n):
        fam = FAMILIES[i % len(FAMILIES)]
        text, design, ctype = generate_cell(fam, 1 + (i // len(FAMILIES)) % 2, seed * 1000 + i, cfg)
        out.append((rasterize(design, raster).data, load_graph(text, ctype, with_corr=with_corr)))
    return out


def toy_batch(n: int = 3, seed: int = 0, canvas: int = 16, targets: bool = False) -> Batch:
    cells = synthetic_cells(n, seed, canvas)
    y = np.random.default_rng(seed).normal(size=(n, 6)) if targets else None
    return Batch(np.stack([c[0] for c in cells]), collate_graphs([c[1] for c in cells]), y,
                 [f"c{i}" for i in range(n)])


def permute_graphs(g: GraphBatch, perms: list[np.ndarray]) -> GraphBatch:
    """Reorder the nodes of each graph in the batch by its permutation."""
    feats, et, valid = g.features.copy(), g.edge_type.copy(), g.valid.copy()
    names, types = [], []
    for b, p in enumerate(perms):
        feats[b] = g.features[b][p]
        et[b] = g.edge_type[b][np.ix_(p, p)]
        valid[b] = g.valid[b][p]
        names.append([g.node_names[b][i] if i < len(g.node_names[b]) else "" for i in p])
        types.append([g.node_types[b][i] if i < len(g.node_types[b]) else "" for i in p])
    return GraphBatch(feats, et, et != 0, valid, names, types)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """Tiny on-disk dataset: 2 families x 2 drives x 4 variants."""
    from fusioncell.synth import build_dataset

    out = tmp_path_factory.mktemp("data")
    cfg = SynthConfig(families=[{"function": "INV", "drives": [1, 2]}, {"function": "NAND2", "drives": [1, 2]}],
                      variants_per_type=4)
    build_dataset(cfg, out)
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
