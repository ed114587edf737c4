"""Target-domain inference and the static / sliding-window protocols.

Prediction never touches target-domain history: inputs go through the
encoder alone, and the classifier for domain t is the (t-1)-th element
of the LSTM-generated chain, rolled forward past the source range when
needed. The static protocol trains once on the source prefix; the
dynamic protocol retrains from scratch for every window position and
averages the per-window target accuracies.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from . import tensor as T
from .datagen import DomainSequence, LabeledDataset
from .training import TrainedModel


class ProtocolError(ValueError):
    """Not enough domains for the requested evaluation window layout."""


def predict_target(model: TrainedModel, t_target: int, x_batch) -> np.ndarray:
    """Predict labels for a batch from target domain ``t_target``.

    Pure in the frozen model: rolls the classifier chain to index
    t_target - 1 (regenerating it deterministically when the target lies
    beyond the materialized range) and applies it to encoder outputs.
    """
    if t_target <= model.t_source:
        raise ValueError("t_target %d is inside the source range (T=%d)"
                         % (t_target, model.t_source))
    state = model.frozen_state()
    with T.no_grad():
        if not model.uses_classifier_sequence:
            hvec = T.Tensor(model.classifiers[0])
        else:
            idx = t_target - 1  # classifier index, 1-based
            if idx <= model.classifiers.shape[0]:
                hvec = T.Tensor(model.classifiers[idx - 1])
            else:
                hvec = M.classifier_chain(state, idx)[-1]
        z = M.encode(state, np.asarray(x_batch, dtype=np.float64))
        logits = M.classify(model.config, hvec, z)
    return M.predict_labels(model.config, logits.data)


def accuracy_on(model: TrainedModel, ds: LabeledDataset) -> float:
    pred = predict_target(model, ds.domain_index, ds.features)
    return float((pred == ds.labels).mean())


@dataclass
class WindowResult:
    train_t: int
    per_target: list[tuple[int, float]]

    @property
    def mean_acc(self) -> float:
        return sum(a for _, a in self.per_target) / len(self.per_target)

    def to_dict(self) -> dict:
        return {"train_t": self.train_t,
                "per_target": [[t, a] for t, a in self.per_target]}

    @classmethod
    def from_dict(cls, d: dict) -> "WindowResult":
        return cls(d["train_t"], [(int(t), float(a)) for t, a in d["per_target"]])


@dataclass
class EvalReport:
    protocol: str  # "eval-s" | "eval-d"
    K: int
    seed: int
    method: str
    windows: list[WindowResult]
    ood_avg: float
    ood_wrt: float

    @property
    def per_target_acc(self) -> list[tuple[int, float]]:
        return [pair for w in self.windows for pair in w.per_target]

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "K": self.K, "seed": self.seed,
                "method": self.method, "ood_avg": self.ood_avg,
                "ood_wrt": self.ood_wrt,
                "windows": [w.to_dict() for w in self.windows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["protocol"], d["K"], d["seed"], d["method"],
                   [WindowResult.from_dict(w) for w in d["windows"]],
                   d["ood_avg"], d["ood_wrt"])


def _assemble_report(protocol: str, K: int, seed: int, method: str,
                     windows: list[WindowResult]) -> EvalReport:
    accs = [a for w in windows for _, a in w.per_target]
    ood_avg = sum(accs) / len(accs)
    if protocol == "eval-s":
        ood_wrt = min(accs)  # worst single target
    else:
        ood_wrt = min(w.mean_acc for w in windows)  # worst window mean
    return EvalReport(protocol, K, seed, method, windows, ood_avg, ood_wrt)


def _window_targets(seq: DomainSequence, t: int, K: int) -> list[LabeledDataset]:
    return seq.domains[t:t + K]


def evaluate_window(factory, seq: DomainSequence, t: int, K: int,
                    seed: int) -> WindowResult:
    """Train on domains 1..t and score the K domains after them."""
    model = factory(seq.with_t_source(t), seed)
    per_target = [(ds.domain_index, accuracy_on(model, ds))
                  for ds in _window_targets(seq, t, K)]
    return WindowResult(t, per_target)


def _worker(args):
    factory, seq, t, K, seed = args
    return seed, evaluate_window(factory, seq, t, K, seed)


def _window_positions(seq: DomainSequence, protocol: str, K: int) -> list[int]:
    t_src = seq.T_source
    if K < 1:
        raise ProtocolError("K must be >= 1")
    if protocol == "eval-s":
        if t_src + K > seq.n_domains:
            raise ProtocolError("need %d domains for eval-s with K=%d, have %d"
                                % (t_src + K, K, seq.n_domains))
        return [t_src]
    if protocol == "eval-d":
        if K > t_src:
            raise ProtocolError("eval-d needs K <= T_source")
        if seq.n_domains < 2 * t_src:
            raise ProtocolError("eval-d needs %d domains, have %d"
                                % (2 * t_src, seq.n_domains))
        return list(range(t_src, 2 * t_src - K + 1))
    raise ProtocolError("unknown protocol %r" % protocol)


def run_protocol(factory, seq: DomainSequence, protocol: str, K: int, seeds,
                 jobs: int = 1, method: str = "model") -> list[EvalReport]:
    """One EvalReport per seed; (seed, window) tasks may run in parallel."""
    positions = _window_positions(seq, protocol, K)
    tasks = [(factory, seq, t, K, seed) for seed in seeds for t in positions]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_worker, tasks))
    else:
        raw = [_worker(t) for t in tasks]
    reports = []
    for seed in seeds:
        windows = sorted((w for s, w in raw if s == seed), key=lambda w: w.train_t)
        reports.append(_assemble_report(protocol, K, seed, method, windows))
    return reports


def eval_s(factory, seq: DomainSequence, K: int, seed: int = 0,
           method: str = "model") -> EvalReport:
    return run_protocol(factory, seq, "eval-s", K, [seed], method=method)[0]


def eval_d(factory, seq: DomainSequence, K: int, seed: int = 0, jobs: int = 1,
           method: str = "model") -> EvalReport:
    return run_protocol(factory, seq, "eval-d", K, [seed], jobs=jobs, method=method)[0]


@dataclass
class EvalSummary:
    protocol: str
    K: int
    method: str
    seeds: list[int]
    per_seed: list[EvalReport]
    ood_avg_mean: float = field(init=False)
    ood_avg_std: float = field(init=False)
    ood_wrt_mean: float = field(init=False)
    ood_wrt_std: float = field(init=False)

    def __post_init__(self):
        avgs = np.array([r.ood_avg for r in self.per_seed])
        wrts = np.array([r.ood_wrt for r in self.per_seed])
        ddof = 1 if len(self.per_seed) >= 2 else 0
        self.ood_avg_mean = float(avgs.mean())
        self.ood_avg_std = float(avgs.std(ddof=ddof))
        self.ood_wrt_mean = float(wrts.mean())
        self.ood_wrt_std = float(wrts.std(ddof=ddof))

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "K": self.K, "method": self.method,
                "seeds": self.seeds,
                "ood_avg_mean": self.ood_avg_mean, "ood_avg_std": self.ood_avg_std,
                "ood_wrt_mean": self.ood_wrt_mean, "ood_wrt_std": self.ood_wrt_std,
                "per_seed": [r.to_dict() for r in self.per_seed]}


def summarize(reports: list[EvalReport]) -> EvalSummary:
    first = reports[0]
    return EvalSummary(first.protocol, first.K, first.method,
                       [r.seed for r in reports], list(reports))


# ---------------------------------------------------------------------------
# decision-boundary grids
# ---------------------------------------------------------------------------

@dataclass
class BoundaryGrid:
    xs: np.ndarray
    ys: np.ndarray
    pred: np.ndarray  # (len(ys), len(xs))
    domain_index: int
    model_id: str


def export_boundary(model: TrainedModel, t_target: int, bounds, resolution: int,
                    out_path) -> BoundaryGrid:
    """Sample predictions on a regular grid and write them as CSV + sidecar.

    ``bounds`` is (x1_min, x1_max, x2_min, x2_max); the CSV has columns
    x1,x2,pred with resolution^2 rows.
    """
    if model.config.input_dim != 2:
        raise ValueError("boundary export needs a 2-D feature space, model has %d"
                         % model.config.input_dim)
    x1min, x1max, x2min, x2max = bounds
    xs = np.linspace(x1min, x1max, resolution)
    ys = np.linspace(x2min, x2max, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.reshape(-1), gy.reshape(-1)])
    pred = predict_target(model, t_target, points).reshape(resolution, resolution)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "pred"])
        flat = pred.reshape(-1)
        for i in range(points.shape[0]):
            writer.writerow([repr(float(points[i, 0])), repr(float(points[i, 1])),
                             int(flat[i])])
    sidecar = {"bounds": list(bounds), "resolution": resolution,
               "t_target": t_target, "method": model.method}
    Path(str(out_path) + ".json").write_text(json.dumps(sidecar, indent=2))
    return BoundaryGrid(xs, ys, pred, t_target, model.method)


def boundary_agreement(grid: BoundaryGrid, label_fn) -> float:
    """Fraction of grid cells whose prediction matches ``label_fn(x1, x2)``."""
    gx, gy = np.meshgrid(grid.xs, grid.ys)
    truth = label_fn(gx, gy)
    return float((grid.pred == truth).mean())
