"""Layout data model and rasterization into 3-channel net-ID images.

Layout JSON schema (one file per cell)::

    {
      "cell": "NAND2D1_v000",
      "width_nm": 560.0, "height_nm": 300.0,
      "nets": ["A", "B", "Y", "n1", "VDD", "VSS"],
      "rects": [{"layer": "M0", "x0": 40, "y0": 53, "x1": 300, "y1": 67, "net": 2}, ...],
      "vias":  [{"lower_layer": "M0", "cx": 100, "cy": 60, "size": 14, "net": 2}, ...]
    }

``net`` is an index into ``nets``.  Unknown layers are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import grey_dilation

LAYERS = ("M0", "M1", "M2")
VIA_LAYERS = ("M0", "M1")
NETID_SCHEMES = ("index_fraction", "hashed_fraction")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    layer: str
    x0: float
    y0: float
    x1: float
    y1: float
    net_id: int

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise LayoutError(f"unknown layer {self.layer!r}")
        coords = np.array([self.x0, self.y0, self.x1, self.y1], dtype=float)
        if not np.isfinite(coords).all() or (coords < 0).any():
            raise LayoutError(f"rect coordinates must be finite and non-negative: {self}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise LayoutError(f"degenerate rect {self}")
        if self.net_id < 0:
            raise LayoutError("net_id must be non-negative")


@dataclass(frozen=True)
class Via:
    lower_layer: str
    cx: float
    cy: float
    size: float
    net_id: int

    def __post_init__(self):
        if self.lower_layer not in VIA_LAYERS:
            raise LayoutError(f"via lower layer must be one of {VIA_LAYERS}, got {self.lower_layer!r}")
        if not self.size > 0:
            raise LayoutError("via size must be positive")
        if self.net_id < 0:
            raise LayoutError("net_id must be non-negative")

    @property
    def layers(self) -> tuple[int, int]:
        k = LAYERS.index(self.lower_layer)
        return k, k + 1

    def bbox(self) -> tuple[float, float, float, float]:
        h = self.size / 2
        return self.cx - h, self.cy - h, self.cx + h, self.cy + h


@dataclass
class LayoutDesign:
    cell_name: str
    width: float
    height: float
    rects: list[Rect] = field(default_factory=list)
    vias: list[Via] = field(default_factory=list)
    net_names: dict[int, str] = field(default_factory=dict)

    def validate(self) -> None:
        for r in self.rects:
            if r.net_id not in self.net_names:
                raise LayoutError(f"rect references unknown net {r.net_id}")
            if r.x1 > self.width or r.y1 > self.height:
                raise LayoutError(f"rect outside the cell boundary: {r}")
        for v in self.vias:
            if v.net_id not in self.net_names:
                raise LayoutError(f"via references unknown net {v.net_id}")
            x0, y0, x1, y1 = v.bbox()
            if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                raise LayoutError(f"via outside the cell boundary: {v}")

    def rotated90(self) -> "LayoutDesign":
        """Counter-clockwise quarter turn: (x, y) -> (height - y, x)."""
        H = self.height
        rects = [Rect(r.layer, H - r.y1, r.x0, H - r.y0, r.x1, r.net_id) for r in self.rects]
        vias = [Via(v.lower_layer, H - v.cy, v.cx, v.size, v.net_id) for v in self.vias]
        return LayoutDesign(self.cell_name, self.height, self.width, rects, vias, dict(self.net_names))


@dataclass(frozen=True)
class RasterConfig:
    H: int = 64
    W: int = 64
    patch_size: int = 8
    via_spill_radius: int = 1
    dilation_radius: int = 1
    netid_scheme: str = "index_fraction"

    def __post_init__(self):
        if self.H % self.patch_size or self.W % self.patch_size:
            raise LayoutError(f"canvas {self.H}x{self.W} not divisible by patch {self.patch_size}")
        if self.via_spill_radius < 0 or self.dilation_radius < 0:
            raise LayoutError("radii must be >= 0")
        if self.netid_scheme not in NETID_SCHEMES:
            raise LayoutError(f"unknown net-id scheme {self.netid_scheme!r}")


@dataclass
class LayoutTensor:
    data: np.ndarray  # (3, H, W)
    cell_name: str


def normalize_net_id(net_id: int, num_nets: int, scheme: str = "index_fraction",
                     name: str | None = None) -> float:
    """Map a net to a value in (0, 1]; background stays 0."""
    if num_nets < 1:
        raise LayoutError("num_nets must be >= 1")
    if not 0 <= net_id < num_nets:
        raise LayoutError(f"net_id {net_id} out of range for {num_nets} nets")
    if scheme == "index_fraction":
        return (net_id + 1) / (num_nets + 1)
    if scheme == "hashed_fraction":
        key = name if name is not None else str(net_id)
        h = int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")
        return ((h % (1 << 52)) + 1) / float(1 << 52)
    raise LayoutError(f"unknown net-id scheme {scheme!r}")


def net_values(design: LayoutDesign, scheme: str) -> dict[int, float]:
    n = len(design.net_names)
    return {i: normalize_net_id(i, n, scheme, design.net_names[i]) for i in design.net_names}


@dataclass(frozen=True)
class CanvasTransform:
    """Maps design coordinates (y up) to canvas coordinates (row axis down)."""
    rotate: bool
    width: float  # design width before rotation
    height: float
    scale: float
    off_x: float
    off_y: float

    def rect(self, x0, y0, x1, y1) -> tuple[float, float, float, float]:
        """Return (col0, row0, col1, row1) in continuous canvas units."""
        if self.rotate:
            # clockwise quarter turn: (x, y) -> (y, width - x)
            x0, y0, x1, y1 = y0, self.width - x1, y1, self.width - x0
            h = self.width
        else:
            h = self.height
        return (self.off_x + x0 * self.scale, self.off_y + (h - y1) * self.scale,
                self.off_x + x1 * self.scale, self.off_y + (h - y0) * self.scale)


def canvas_transform(design: LayoutDesign, cfg: RasterConfig) -> CanvasTransform:
    if not (design.width > 0 and design.height > 0):
        raise LayoutError(f"zero-area design {design.cell_name!r}")
    rotate = design.height > design.width
    w, h = (design.height, design.width) if rotate else (design.width, design.height)
    scale = min(cfg.W / w, cfg.H / h)
    return CanvasTransform(rotate, design.width, design.height, scale,
                           (cfg.W - w * scale) / 2.0, (cfg.H - h * scale) / 2.0)


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    centers = np.arange(n) + 0.5
    return (centers >= lo) & (centers < hi)


def _fill(chan: np.ndarray, owner: np.ndarray, box, value: float, net: int, what: str) -> np.ndarray:
    c0, r0, c1, r1 = box
    H, W = chan.shape
    m = np.outer(_coverage(r0, r1, H), _coverage(c0, c1, W))
    clash = m & (owner >= 0) & (owner != net)
    if clash.any():
        raise LayoutError(f"{what} of net {net} overlaps net {int(owner[clash][0])}")
    chan[m] = value
    owner[m] = net
    return m


def _grow(values: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return values.copy()
    return grey_dilation(values, size=(2 * radius + 1, 2 * radius + 1), mode="constant", cval=0.0)


def rasterize(design: LayoutDesign, cfg: RasterConfig) -> LayoutTensor:
    """Rasterize a routed layout into a (3, H, W) net-ID tensor.

    A pixel belongs to a rectangle when its center lies in the half-open box
    [x0, x1) x [y0, y1) after long-edge alignment, uniform scaling and
    centering.  Via cores are stamped into both adjacent layers; the spill
    ring around them and the final per-channel dilation only fill background
    pixels (neighbourhood max on ties).
    """
    design.validate()
    tf = canvas_transform(design, cfg)
    vals = net_values(design, cfg.netid_scheme)
    data = np.zeros((3, cfg.H, cfg.W))
    owner = np.full((3, cfg.H, cfg.W), -1, dtype=np.int64)
    for r in design.rects:
        k = LAYERS.index(r.layer)
        _fill(data[k], owner[k], tf.rect(r.x0, r.y0, r.x1, r.y1), vals[r.net_id], r.net_id, "rect")
    spill = np.zeros((3, cfg.H, cfg.W))
    for v in design.vias:
        box = tf.rect(*v.bbox())
        for k in v.layers:
            core = np.zeros((cfg.H, cfg.W))
            m = _fill(data[k], owner[k], box, vals[v.net_id], v.net_id, "via")
            core[m] = vals[v.net_id]
            spill[k] = np.maximum(spill[k], _grow(core, cfg.via_spill_radius))
    for k in range(3):
        bg = data[k] == 0
        data[k][bg] = spill[k][bg]
        grown = _grow(data[k], cfg.dilation_radius)
        bg = data[k] == 0
        data[k][bg] = grown[bg]
    return LayoutTensor(data, design.cell_name)


def patchify(t: LayoutTensor | np.ndarray, patch_size: int) -> np.ndarray:
    """Split (C, H, W) into (P, C*p*p) row-major patches; each vector is channel-major."""
    x = t.data if isinstance(t, LayoutTensor) else np.asarray(t)
    C, H, W = x.shape
    p = patch_size
    if H % p or W % p:
        raise LayoutError(f"canvas {H}x{W} not divisible by patch {p}")
    return (x.reshape(C, H // p, p, W // p, p)
             .transpose(1, 3, 0, 2, 4)
             .reshape((H // p) * (W // p), C * p * p))


def unpatchify(patches: np.ndarray, patch_size: int, H: int, W: int, channels: int = 3) -> np.ndarray:
    p = patch_size
    return (np.asarray(patches)
            .reshape(H // p, W // p, channels, p, p)
            .transpose(2, 0, 3, 1, 4)
            .reshape(channels, H, W))


def design_to_json(design: LayoutDesign) -> dict:
    nets = [design.net_names[i] for i in range(len(design.net_names))]
    return {
        "cell": design.cell_name,
        "width_nm": design.width,
        "height_nm": design.height,
        "nets": nets,
        "rects": [{"layer": r.layer, "x0": r.x0, "y0": r.y0, "x1": r.x1, "y1": r.y1, "net": r.net_id}
                  for r in design.rects],
        "vias": [{"lower_layer": v.lower_layer, "cx": v.cx, "cy": v.cy, "size": v.size, "net": v.net_id}
                 for v in design.vias],
    }


def design_from_json(doc: dict) -> LayoutDesign:
    try:
        nets = list(doc["nets"])
        rects = [Rect(r["layer"], r["x0"], r["y0"], r["x1"], r["y1"], int(r["net"])) for r in doc["rects"]]
        vias = [Via(v["lower_layer"], v["cx"], v["cy"], v["size"], int(v["net"])) for v in doc.get("vias", [])]
        design = LayoutDesign(doc["cell"], float(doc["width_nm"]), float(doc["height_nm"]),
                              rects, vias, dict(enumerate(nets)))
    except KeyError as e:
        raise LayoutError(f"layout document missing key {e}") from None
    design.validate()
    return design


def load_layout(path) -> LayoutDesign:
    return design_from_json(json.loads(Path(path).read_text()))


def save_layout(design: LayoutDesign, path) -> None:
    Path(path).write_text(json.dumps(design_to_json(design), indent=1) + "\n")
