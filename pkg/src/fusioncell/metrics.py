"""Regression and within-family ranking metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .fusion import TARGETS

MAPE_EPS = 1e-9
_TARGET_TITLES = ("Rise Delay", "Fall Delay", "Rise Trans.", "Fall Trans.", "Rise Power", "Fall Power")


def mape(pred, truth, eps: float = MAPE_EPS) -> tuple[float, int]:
    """Mean absolute percentage error in percent, and the count of excluded near-zero truths."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    keep = np.abs(truth) > eps
    if not keep.any():
        return float("nan"), int((~keep).sum())
    err = np.abs(pred[keep] - truth[keep]) / np.abs(truth[keep])
    return float(100.0 * err.mean()), int((~keep).sum())


def r_squared(pred, truth) -> float | None:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if truth.size < 2:
        return None
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return None
    return 1.0 - float(((truth - pred) ** 2).sum()) / ss_tot


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if den == 0.0:
        return None
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


def spearman_rho(pred, truth) -> float | None:
    """Pearson correlation of average ranks; None when either side is constant."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.size < 2:
        return None
    return _pearson(rankdata(pred), rankdata(truth))


def kendall_tau(pred, truth) -> float | None:
    """Kendall tau-b; None when either side is entirely tied."""
    x, y = np.asarray(pred, float), np.asarray(truth, float)
    n = x.size
    if n < 2:
        return None
    iu = np.triu_indices(n, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = n * (n - 1) // 2
    ties_x = int((sx == 0).sum())
    ties_y = int((sy == 0).sum())
    prod = sx * sy
    conc, disc = int((prod > 0).sum()), int((prod < 0).sum())
    den = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if den == 0:
        return None
    return (conc - disc) / den


def _mean_defined(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def per_family_ranking(pred: np.ndarray, truth: np.ndarray, cell_types: list[str],
                       micro: bool = False) -> dict:
    """Within-type Spearman/Kendall per target, macro-averaged over types.

    With ``micro=True`` the average weights each type by its sample count.
    Types with fewer than two samples are skipped and counted.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    types = np.asarray(cell_types)
    per_type = {}
    skipped = 0
    for ct in sorted(set(cell_types)):
        idx = np.flatnonzero(types == ct)
        if idx.size < 2:
            skipped += 1
            continue
        per_type[ct] = {
            "n": int(idx.size),
            "rho": [spearman_rho(pred[idx, t], truth[idx, t]) for t in range(pred.shape[1])],
            "tau": [kendall_tau(pred[idx, t], truth[idx, t]) for t in range(pred.shape[1])],
        }
    out = {"per_type": per_type, "skipped_types": skipped, "rho": [], "tau": []}
    for key in ("rho", "tau"):
        for t in range(pred.shape[1]):
            vals = [(v[key][t], v["n"]) for v in per_type.values() if v[key][t] is not None]
            if not vals:
                out[key].append(None)
            elif micro:
                w = np.array([n for _, n in vals], float)
                out[key].append(float(np.dot([x for x, _ in vals], w) / w.sum()))
            else:
                out[key].append(float(np.mean([x for x, _ in vals])))
        out[f"avg_{key}"] = _mean_defined(out[key])
    return out


@dataclass
class MetricsReport:
    n: int
    mape: list[float]
    r2: list[float | None]
    rho: list[float | None]
    tau: list[float | None]
    avg_mape: float
    avg_r2: float | None
    avg_rho: float | None
    avg_tau: float | None
    mape_excluded: int = 0
    skipped_types: int = 0
    per_type: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "targets": list(TARGETS),
            "mape": self.mape, "r2": self.r2, "rho": self.rho, "tau": self.tau,
            "avg_mape": self.avg_mape, "avg_r2": self.avg_r2,
            "avg_rho": self.avg_rho, "avg_tau": self.avg_tau,
            "mape_excluded": self.mape_excluded, "skipped_types": self.skipped_types,
            "per_type": self.per_type,
        }


def evaluate(pred: np.ndarray, truth: np.ndarray, cell_types: list[str], micro: bool = False) -> MetricsReport:
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    mapes, excluded = zip(*(mape(pred[:, t], truth[:, t]) for t in range(pred.shape[1])))
    r2 = [r_squared(pred[:, t], truth[:, t]) for t in range(pred.shape[1])]
    rank = per_family_ranking(pred, truth, cell_types, micro=micro)
    return MetricsReport(
        n=len(pred), mape=list(mapes), r2=r2, rho=rank["rho"], tau=rank["tau"],
        avg_mape=float(np.mean(mapes)), avg_r2=_mean_defined(r2),
        avg_rho=rank["avg_rho"], avg_tau=rank["avg_tau"],
        mape_excluded=int(sum(excluded)), skipped_types=rank["skipped_types"],
        per_type=rank["per_type"],
    )


def _cell(x, fmt):
    return "-" if x is None else format(x, fmt)


def format_tables(rows: dict[str, MetricsReport]) -> str:
    """Two aligned tables (MAPE/R^2 and rho/tau), one row per method."""
    width = max([len("Method")] + [len(k) for k in rows]) + 2
    out = []
    for title, (a, b, fa, fb) in (("Regression accuracy (MAPE % / R^2)", ("mape", "r2", ".2f", ".3f")),
                                  ("Ranking correlation (Spearman rho / Kendall tau)", ("rho", "tau", ".2f", ".2f"))):
        out.append(title)
        head = "Method".ljust(width) + "".join(f"{t:>18}" for t in (*_TARGET_TITLES, "Average"))
        out.append(head)
        out.append("-" * len(head))
        for name, rep in rows.items():
            va, vb = getattr(rep, a), getattr(rep, b)
            cells = [f"{_cell(x, fa)} / {_cell(y, fb)}" for x, y in zip(va, vb)]
            cells.append(f"{_cell(getattr(rep, 'avg_' + a), fa)} / {_cell(getattr(rep, 'avg_' + b), fb)}")
            out.append(name.ljust(width) + "".join(f"{c:>18}" for c in cells))
        out.append("")
    return "\n".join(out)


def report_json(reports: dict[str, MetricsReport]) -> str:
    return json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=1, sort_keys=True) + "\n"
