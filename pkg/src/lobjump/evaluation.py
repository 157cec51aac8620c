"""Confusion-matrix metrics, the simulated random classifier and the per-set per-stock grid."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np


class EvalError(Exception):
    pass


class LengthMismatch(EvalError):
    pass


class MissingCell(EvalError):
    pass


class DegenerateMarginals(UserWarning):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(predictions, labels) -> ConfusionMatrix:
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} predictions for {y.shape} labels")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    return ConfusionMatrix(tp, fp, fn, len(y) - tp - fp - fn)


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.divide(a, b, out=np.zeros(np.broadcast(a, b).shape), where=b != 0)


def _prf(tp, fp, fn):
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    return p, r, _safe_div(2 * p * r, p + r)


def precision_recall_f1(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """Undefined ratios are 0."""
    return tuple(float(v) for v in _prf(cm.tp, cm.fp, cm.fn))


def f1_from(precision: float, recall: float) -> float:
    return float(_safe_div(2 * precision * recall, precision + recall))


def _kappa(tp, fp, fn, tn):
    n = np.asarray(tp + fp + fn + tn, dtype=np.float64)
    po = (tp + tn) / n
    pc = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / n**2
    degenerate = np.isclose(pc, 1.0, rtol=0, atol=1e-15)
    return np.where(degenerate, 0.0, _safe_div(po - pc, np.where(degenerate, 1.0, 1 - pc))), degenerate


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """(p_o - p_c) / (1 - p_c); 0 with a DegenerateMarginals warning when p_c = 1."""
    if cm.total == 0:
        raise EvalError("kappa of an empty confusion matrix")
    k, degenerate = _kappa(cm.tp, cm.fp, cm.fn, cm.tn)
    if degenerate:
        warnings.warn("chance agreement is 1; kappa reported as 0", DegenerateMarginals, stacklevel=2)
    return float(k)


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    kappa: float
    n: int = 0
    cm: ConfusionMatrix | None = None
    flags: tuple[str, ...] = ()

    def row(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "kappa": self.kappa,
                "n": self.n, "flags": ";".join(self.flags)}


def evaluate(predictions, labels) -> EvalReport:
    cm = confusion(predictions, labels)
    flags = []
    if cm.tp + cm.fp == 0:
        flags.append("precision_undefined")
    if cm.tp + cm.fn == 0:
        flags.append("recall_undefined")
    p, r, f1 = precision_recall_f1(cm)
    k, degenerate = _kappa(cm.tp, cm.fp, cm.fn, cm.tn)
    if degenerate:
        flags.append("degenerate_marginals")
    return EvalReport(p, r, f1, float(k), cm.total, cm, tuple(flags))


def random_baseline(labels, seed: int = 0, trials: int = 1000) -> EvalReport:
    """Mean metrics of a fair-coin classifier over ``trials`` seeded draws."""
    y = np.asarray(labels).astype(bool)
    if y.size == 0:
        raise EvalError("random baseline needs labels")
    rng = np.random.default_rng([seed, 5])
    tp = np.empty(trials)
    fp = np.empty(trials)
    pos = int(y.sum())
    for k in range(trials):
        guess = rng.random(y.size) < 0.5
        tp[k] = np.sum(guess & y)
        fp[k] = np.sum(guess) - tp[k]
    fn = pos - tp
    tn = y.size - tp - fp - fn
    p, r, f1 = _prf(tp, fp, fn)
    kappa, _ = _kappa(tp, fp, fn, tn)
    return EvalReport(float(p.mean()), float(r.mean()), float(f1.mean()), float(kappa.mean()), int(y.size),
                      flags=("random",))


def direction_f1(true_classes, predicted_proba) -> float:
    """Macro F1 of up-vs-down calls on the samples whose true class is a jump.

    Classes are 0 = none, 1 = up, 2 = down; the call is whichever of the two
    jump probabilities is larger.
    """
    y = np.asarray(true_classes)
    q = np.asarray(predicted_proba)
    jumps = y > 0
    if not jumps.any():
        raise EvalError("no jump samples to score direction on")
    up_true = y[jumps] == 1
    up_pred = q[jumps, 1] >= q[jumps, 2]
    f_up = precision_recall_f1(confusion(up_pred, up_true))[2]
    f_down = precision_recall_f1(confusion(~up_pred, ~up_true))[2]
    return 0.5 * (f_up + f_down)


def random_direction_f1(true_classes, seed: int = 0, trials: int = 1000) -> float:
    y = np.asarray(true_classes)
    rng = np.random.default_rng([seed, 6])
    scores = []
    for _ in range(trials):
        coin = rng.random(len(y))
        q = np.stack([np.zeros(len(y)), coin, 1 - coin], axis=1)
        scores.append(direction_f1(y, q))
    return float(np.mean(scores))


# -- grid ---------------------------------------------------------------------------

@dataclass
class Grid:
    sets: list[int]
    stocks: list[str]
    cells: dict[tuple[int, str], EvalReport] = field(default_factory=dict)
    predictions: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    errors: dict[tuple[int, str], str] = field(default_factory=dict)

    def add(self, s: int, stock: str, pred, labels) -> EvalReport:
        rep = evaluate(pred, labels)
        self.cells[(s, stock)] = rep
        self.predictions[(s, stock)] = (np.asarray(pred), np.asarray(labels))
        return rep

    def cell(self, s: int, stock: str) -> EvalReport:
        if (s, stock) not in self.cells:
            raise MissingCell(f"set {s} stock {stock}: {self.errors.get((s, stock), 'not evaluated')}")
        return self.cells[(s, stock)]

    def value(self, s, stock, metric="f1") -> float:
        return getattr(self.cell(s, stock), metric)

    def row_mean(self, s, metric="f1") -> float:
        vals = [getattr(self.cells[(s, k)], metric) for k in self.stocks if (s, k) in self.cells]
        return float(np.mean(vals)) if vals else float("nan")

    def col_mean(self, stock, metric="f1") -> float:
        vals = [getattr(self.cells[(s, stock)], metric) for s in self.sets if (s, stock) in self.cells]
        return float(np.mean(vals)) if vals else float("nan")

    def mean(self, metric="f1") -> float:
        """Average of the individually computed cell scores."""
        vals = [getattr(c, metric) for c in self.cells.values()]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def complete(self) -> bool:
        return not self.errors and len(self.cells) == len(self.sets) * len(self.stocks)


def rolling_grid(run_cell, sets, stocks) -> Grid:
    """Evaluate ``run_cell(set, stock) -> (predictions, labels)`` for every cell.

    A failing cell is recorded in ``errors`` and left out of the averages.
    """
    grid = Grid(list(sets), list(stocks))
    for s in grid.sets:
        for stock in grid.stocks:
            try:
                pred, labels = run_cell(s, stock)
                grid.add(s, stock, pred, labels)
            except Exception as exc:  # noqa: BLE001 - the report shows the failure per cell
                grid.errors[(s, stock)] = f"{type(exc).__name__}: {exc}"
    return grid


def write_grid_csv(path, grid: Grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set", "stock", "precision", "recall", "f1", "kappa", "n", "flags"])
        for s in grid.sets:
            for stock in grid.stocks:
                if (s, stock) in grid.cells:
                    r = grid.cells[(s, stock)]
                    w.writerow([s, stock, f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}",
                                f"{r.kappa:.6f}", r.n, ";".join(r.flags)])
                else:
                    w.writerow([s, stock, "", "", "", "", 0, "error: " + grid.errors.get((s, stock), "missing")])


def format_grid(grid: Grid, metric: str = "f1") -> str:
    """Sets down, stocks across, with per-row and per-column averages."""
    head = ["Set"] + grid.stocks + ["Avg"]
    rows = []
    for s in grid.sets:
        vals = [f"{grid.cells[(s, k)].__dict__[metric]:.2f}" if (s, k) in grid.cells else "ERR" for k in grid.stocks]
        rows.append([str(s)] + vals + [f"{grid.row_mean(s, metric):.2f}"])
    rows.append(["Avg"] + [f"{grid.col_mean(k, metric):.2f}" for k in grid.stocks] + [f"{grid.mean(metric):.2f}"])
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.rjust(wd) for c, wd in zip(r, widths))  # noqa: E731
    return "\n".join([fmt(head), "  ".join("-" * wd for wd in widths)] + [fmt(r) for r in rows]) + "\n"


def format_summary(reports: dict[str, EvalReport]) -> str:
    """One row per model: precision, recall, F1 and kappa."""
    names = list(reports)
    width = max([len(n) for n in names] + [5])
    lines = [f"{'Model'.ljust(width)}  Prec.  Rec.    F1   Kappa"]
    for n in names:
        r = reports[n]
        lines.append(f"{n.ljust(width)}  {r.precision:5.2f}  {r.recall:4.2f}  {r.f1:4.2f}  {r.kappa:6.2f}")
    return "\n".join(lines) + "\n"
