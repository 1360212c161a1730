"""Dataset loading, stratified splits, target standardization and training."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoders import collate_graphs
from .fusion import Batch, FusionModel, ModelConfig, build_model, uses_graph
from .geometry import RasterConfig, load_layout, rasterize
from .netlist import AdjacencyMask, CellGraph, build_mask, load_graph
from .numcore import AdamWState, Tape, adamw_step, clip_grads, load_checkpoint, save_checkpoint
from .synth import LABEL_COLUMNS

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CellRecord:
    id: str
    cell_type: str
    labels: np.ndarray
    layout: np.ndarray | None = None
    graph: CellGraph | None = None
    mask: AdjacencyMask | None = None


@dataclass
class CellDataset:
    root: Path
    records: dict[str, CellRecord]
    manifest: dict

    @property
    def ids(self) -> list[str]:
        return list(self.records)

    def cell_types(self, ids) -> list[str]:
        return [self.records[i].cell_type for i in ids]

    def labels(self, ids) -> np.ndarray:
        return np.stack([self.records[i].labels for i in ids])


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json in {data_dir}")
    return json.loads(path.read_text())


def load_dataset(data_dir, raster: RasterConfig, with_layout: bool = True, with_graph: bool = True,
                 with_corr: bool = True, ids: list[str] | None = None) -> CellDataset:
    """Load cells; graphs are only parsed when ``with_graph`` is set."""
    root = Path(data_dir)
    manifest = read_manifest(root)
    records = {}
    wanted = set(ids) if ids is not None else None
    for e in manifest["entries"]:
        if wanted is not None and e["id"] not in wanted:
            continue
        rec = CellRecord(e["id"], e["cell_type"],
                         np.array([e["labels"][c] for c in LABEL_COLUMNS], dtype=float))
        if with_layout:
            rec.layout = rasterize(load_layout(root / e["layout"]), raster).data
        if with_graph:
            rec.graph = load_graph((root / e["netlist"]).read_text(), e["cell_type"], with_corr=with_corr)
            rec.mask = build_mask(rec.graph)
        records[e["id"]] = rec
    if wanted is not None and len(records) != len(wanted):
        raise KeyError(f"ids not in manifest: {sorted(wanted - set(records))}")
    return CellDataset(root, records, manifest)


def stratified_split(entries: list[dict], val_ratio: float, seed: int) -> tuple[list[str], list[str]]:
    """Per cell type: seeded shuffle, round(val_ratio*n) (at least 1) to validation."""
    if not 0 < val_ratio < 1:
        raise ValueError("val_ratio must be in (0, 1)")
    by_type: dict[str, list[str]] = {}
    for e in entries:
        by_type.setdefault(e["cell_type"], []).append(e["id"])
    rng = np.random.default_rng(seed)
    train, val = [], []
    for ct in sorted(by_type):
        ids = sorted(by_type[ct])
        if len(ids) < 2:
            raise ValueError(f"cell type {ct!r} has a single entry; cannot stratify")
        n_val = min(max(1, math.floor(val_ratio * len(ids) + 0.5)), len(ids) - 1)
        order = rng.permutation(len(ids))
        val += [ids[i] for i in order[:n_val]]
        train += [ids[i] for i in order[n_val:]]
    return train, val


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, labels: np.ndarray) -> "Standardizer":
        labels = np.asarray(labels, float)
        mu = labels.mean(axis=0)
        sd = labels.std(axis=0)
        if (sd <= 0).any():
            raise ValueError(f"zero standard deviation for targets {np.flatnonzero(sd <= 0).tolist()}")
        return cls(mu, sd)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, float) - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, float) * self.std + self.mean

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist(),
                           "columns": list(LABEL_COLUMNS)}, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Standardizer":
        doc = json.loads(text)
        return cls(np.array(doc["mean"], float), np.array(doc["std"], float))


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 5e-5
    seed: int = 0
    val_ratio: float = 0.1
    weight_decay: float = 0.01
    clip_norm: float | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.val_ratio < 1:
            raise ValueError("val_ratio must be in (0, 1)")

    @property
    def variant(self) -> str:
        return self.model.variant

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


def make_batch(ds: CellDataset, ids: list[str], variant: str,
               standardizer: Standardizer | None = None) -> Batch:
    recs = [ds.records[i] for i in ids]
    layouts = np.stack([r.layout for r in recs])
    graphs = collate_graphs([r.graph for r in recs], [r.mask for r in recs]) if uses_graph(variant) else None
    targets = standardizer.apply(np.stack([r.labels for r in recs])) if standardizer else None
    return Batch(layouts, graphs, targets, list(ids))


def mse_loss(pred, target: np.ndarray):
    """(1/B) * sum_i ||pred_i - target_i||^2."""
    d = pred - target
    return (d * d).sum(axis=-1).mean()


def predict_standardized(model: FusionModel, ds: CellDataset, ids: list[str], batch_size: int = 32) -> np.ndarray:
    out = []
    for i in range(0, len(ids), batch_size):
        out.append(model.predict(make_batch(ds, ids[i:i + batch_size], model.cfg.variant)))
    return np.concatenate(out) if out else np.zeros((0, len(LABEL_COLUMNS)))


def predict_all(model: FusionModel, standardizer: Standardizer, ds: CellDataset,
                ids: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode predictions for ``ids``: (raw units, standardized)."""
    z = predict_standardized(model, ds, ids)
    return standardizer.invert(z), z


def eval_mse(model: FusionModel, ds: CellDataset, ids: list[str], st: Standardizer) -> float:
    z = predict_standardized(model, ds, ids)
    return float(((z - st.apply(ds.labels(ids))) ** 2).sum(axis=1).mean())


@dataclass
class TrainResult:
    model: FusionModel
    standardizer: Standardizer
    history: list[tuple[int, float, float]]
    best_epoch: int
    train_ids: list[str]
    val_ids: list[str]


def train_step(model: FusionModel, opt: AdamWState, batch: Batch, clip_norm: float | None = None) -> float:
    try:
        with Tape() as tape:
            loss = mse_loss(model(batch, train=True), batch.targets)
        grads = tape.backward(loss, model.params)
    except ValueError as e:
        if "non-finite" in str(e):
            raise TrainingDiverged(f"non-finite values during step {opt.step + 1}: {e}") from None
        raise
    if clip_norm is not None:
        grads = clip_grads(grads, clip_norm)
    if not all(np.isfinite(g).all() for g in grads.values()):
        raise TrainingDiverged(f"non-finite gradient at step {opt.step + 1}")
    adamw_step(opt, model.params, grads)
    return float(loss.data)


def train(cfg: TrainConfig, ds: CellDataset, out_dir=None, split: tuple[list, list] | None = None,
          meta: dict | None = None) -> TrainResult:
    """Mini-batch AdamW on standardized targets; keeps the best-validation weights."""
    if not ds.records:
        raise ValueError("empty dataset")
    if split is None:
        entries = [{"id": i, "cell_type": r.cell_type} for i, r in ds.records.items()]
        split = stratified_split(entries, cfg.val_ratio, cfg.seed)
    train_ids, val_ids = split
    st = Standardizer.fit(ds.labels(train_ids))
    model = build_model(cfg.model, cfg.seed)
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    best = (math.inf, 0, model.store.arrays())
    for epoch in range(1, cfg.epochs + 1):
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        for i in range(0, len(order), cfg.batch_size):
            train_step(model, opt, make_batch(ds, order[i:i + cfg.batch_size], cfg.variant, st), cfg.clip_norm)
        tr = eval_mse(model, ds, train_ids, st)
        va = eval_mse(model, ds, val_ids, st) if val_ids else float("nan")
        history.append((epoch, tr, va))
        log.info("epoch %d train_mse %.5f val_mse %.5f", epoch, tr, va)
        if va < best[0]:
            best = (va, epoch, model.store.arrays())
    model.store.load(best[2])
    result = TrainResult(model, st, history, best[1], train_ids, val_ids)
    if out_dir is not None:
        save_run(result, cfg, out_dir, meta or {})
    return result


def save_run(result: TrainResult, cfg: TrainConfig, out_dir, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {"train_config": cfg.to_dict(), "best_epoch": result.best_epoch, **meta}
    save_checkpoint(out / "model.ckpt", result.model.store.arrays(), header)
    (out / "standardizer.json").write_text(result.standardizer.to_json())
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_mse", "val_mse"])
        for ep, tr, va in result.history:
            w.writerow([ep, repr(tr), repr(va)])


def load_run(ckpt_path) -> tuple[FusionModel, Standardizer, dict]:
    """Model, standardizer sidecar and checkpoint metadata."""
    ckpt_path = Path(ckpt_path)
    arrays, meta = load_checkpoint(ckpt_path)
    side = ckpt_path.parent / "standardizer.json"
    if not side.exists():
        raise FileNotFoundError(f"missing standardizer sidecar {side}")
    cfg = TrainConfig(**{**meta["train_config"], "model": ModelConfig(**meta["train_config"]["model"])})
    model = build_model(cfg.model, cfg.seed)
    model.store.load(arrays)
    return model, Standardizer.from_json(side.read_text()), meta


def raster_for(model_cfg: ModelConfig, base: RasterConfig | None = None) -> RasterConfig:
    base = base or RasterConfig()
    return replace(base, H=model_cfg.H, W=model_cfg.W, patch_size=model_cfg.patch_size)
