"""Command-line entry point: gen / train / eval / attn."""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .fusion import VARIANTS, ModelConfig, attention_dump, uses_graph
from .geometry import RasterConfig
from .metrics import evaluate, format_tables, report_json
from .synth import SynthConfig, build_dataset
from .trainer import (TrainConfig, load_dataset, load_run, make_batch, predict_all,
                      raster_for, read_manifest, stratified_split, train)

log = logging.getLogger("fusioncell")


def default_config() -> dict:
    return {
        "synth": SynthConfig().to_dict(),
        "raster": asdict(RasterConfig()),
        "train": TrainConfig().to_dict(),
    }


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ValueError(f"unknown config key {where}{k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict) and k not in ("wire_width_nm", "r_unit_ohm", "sheet_res_ohm"):
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> tuple[dict, dict]:
    """Resolved config and the raw user document (to see which keys were given)."""
    user = json.loads(Path(path).read_text()) if path else {}
    if "config" in user and "command" in user:  # a run manifest snapshot
        user = user["config"]
    return _merge(default_config(), user), user


def resolve_seed(user_section: dict, flag: int | None, default: int) -> int:
    if "seed" in user_section:
        return int(user_section["seed"])
    env = os.environ.get("FUSIONCELL_SEED")
    if env is not None:
        return int(env)
    return default if flag is None else flag


def write_run_manifest(out_dir: Path, command: str, config: dict, seed: int, inputs: dict, outputs: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / f"run_manifest_{command}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def cmd_gen(args) -> int:
    cfg, user = load_config(args.config)
    cfg["synth"]["seed"] = resolve_seed(user.get("synth", {}), args.seed, cfg["synth"]["seed"])
    synth = SynthConfig.from_dict(cfg["synth"])
    out = Path(args.out)
    write_run_manifest(out, "gen", cfg, synth.seed, {"config": args.config}, {"dataset": str(out)})
    manifest = build_dataset(synth, out)
    log.info("wrote %d cells to %s", len(manifest["entries"]), out)
    return 0


def cmd_train(args) -> int:
    cfg, user = load_config(args.config)
    t = cfg["train"]
    t["seed"] = resolve_seed(user.get("train", {}), args.seed, t["seed"])
    for flag, key in (("epochs", "epochs"), ("batch", "batch_size"), ("lr", "lr")):
        if getattr(args, flag) is not None:
            t[key] = getattr(args, flag)
    if args.variant is not None:
        t["model"]["variant"] = args.variant
    if t["model"]["variant"] not in VARIANTS:
        raise ValueError(f"unknown variant {t['model']['variant']!r}; choose from {', '.join(VARIANTS)}")
    tcfg = TrainConfig(**{**t, "model": ModelConfig(**t["model"])})
    raster = raster_for(tcfg.model, RasterConfig(**cfg["raster"]))
    cfg["raster"] = asdict(raster)
    data = Path(args.data).resolve()
    out = Path(args.out)
    write_run_manifest(out, "train", cfg, tcfg.seed, {"data": str(data)},
                       {"checkpoint": str(out / "model.ckpt"), "loss": str(out / "loss.csv")})
    variant = tcfg.variant
    ds = load_dataset(data, raster, with_graph=uses_graph(variant), with_corr=variant != "fusioncell_no_corr")
    meta = {"data_dir": str(data), "raster": asdict(raster)}
    res = train(tcfg, ds, out, meta=meta)
    log.info("best epoch %d, val_mse %.5f", res.best_epoch, res.history[res.best_epoch - 1][2])
    return 0


def _load_for(meta: dict, data_dir, ids=None):
    tcfg = meta["train_config"]
    variant = tcfg["model"]["variant"]
    raster = RasterConfig(**meta["raster"])
    return load_dataset(data_dir, raster, with_graph=uses_graph(variant),
                        with_corr=variant != "fusioncell_no_corr", ids=ids)


def cmd_eval(args) -> int:
    model, st, meta = load_run(args.ckpt)
    tcfg = meta["train_config"]
    manifest = read_manifest(args.data)
    train_ids, val_ids = stratified_split(manifest["entries"], tcfg["val_ratio"], tcfg["seed"])
    ds = _load_for(meta, args.data)
    reports = {}
    variant = tcfg["model"]["variant"]
    for split, ids in (("val", val_ids), ("train", train_ids)):
        raw, _ = predict_all(model, st, ds, ids)
        reports[f"{variant} ({split})"] = evaluate(raw, ds.labels(ids), ds.cell_types(ids))
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(report_json(reports))
    report.with_suffix(".txt").write_text(format_tables(reports))
    print(format_tables(reports))
    return 0


def cmd_attn(args) -> int:
    model, _, meta = load_run(args.ckpt)
    if not uses_graph(model.cfg.variant) or model.cfg.variant in ("late_fusion", "symmetrical"):
        raise ValueError(f"variant {model.cfg.variant!r} has no graph-query -> layout-key attention; "
                         "attention dumps need a fusioncell checkpoint")
    ds = _load_for(meta, meta["data_dir"], ids=[args.cell])
    attention_dump(model, make_batch(ds, [args.cell], model.cfg.variant), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusioncell", description=__doc__)
    p.add_argument("--print-config", action="store_true", help="dump the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model variant")
    t.add_argument("--data", required=True)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attn", help="dump graph-query -> layout-key attention for one cell")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--cell", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.print_config:
        print(json.dumps(default_config(), indent=1))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, OSError) as e:
        print(f"fusioncell {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
