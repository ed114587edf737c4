"""Training loops over a source-domain sequence.

``train_airl`` follows the adaptive recipe: per optimization step it
draws one batch per source domain, builds history-aware representations
for domains 1..T-1, generates each pair's classifier from the LSTM
chain, and steps Adam on the combined prediction + alignment objective.
Importance weights come from training-split label priors of consecutive
domains. ERM / last-domain / fine-tuning baselines share the identical
encoder and classifier shapes but use a single fixed classifier and no
alignment.

Checkpoint selection: best validation accuracy on the last source
domain, evaluated through the same history-free path used at inference.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as M
from . import objectives as obj
from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .datagen import DomainSequence, SplitSpec, split
from .model import AirlConfig, AirlState
from .optim import Adam

AIRL_METHODS = ("airl", "no_lstm", "no_trans", "no_inv")
BASELINE_METHODS = ("erm", "ld", "ft")
FIXED_CLASSIFIER_METHODS = ("erm", "ld", "ft", "no_lstm")


class TrainingError(RuntimeError):
    """Degenerate sequence or a diverged optimization step."""


@dataclass
class TrainConfig:
    batch_per_domain: int = 64
    epochs: int = 100
    alpha: float = 1.0
    lr: float = 1e-3
    seed: int = 0
    early_stop_patience: int = 10
    prior_smoothing: float = 1.0
    grad_clip: float = 0.0  # global gradient-norm ceiling; 0 disables

    def __post_init__(self):
        if self.batch_per_domain < 4:
            raise ValueError("batch_per_domain must be >= 4")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def to_dict(self) -> dict:
        return {"batch_per_domain": self.batch_per_domain, "epochs": self.epochs,
                "alpha": self.alpha, "lr": self.lr, "seed": self.seed,
                "early_stop_patience": self.early_stop_patience,
                "prior_smoothing": self.prior_smoothing,
                "grad_clip": self.grad_clip}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainedModel:
    method: str
    config: AirlConfig
    train_config: TrainConfig
    t_source: int
    arrays: dict[str, np.ndarray]
    classifiers: np.ndarray  # (T-1, vec_len), or (1, vec_len) for fixed-classifier methods
    best_val_acc: float
    best_epoch: int
    epochs_run: int
    step_log: list[dict] = field(default_factory=list, repr=False)
    val_log: list[dict] = field(default_factory=list, repr=False)
    _frozen: AirlState | None = field(default=None, repr=False, compare=False)

    @property
    def uses_classifier_sequence(self) -> bool:
        return self.method not in FIXED_CLASSIFIER_METHODS

    def frozen_state(self) -> AirlState:
        if self._frozen is None:
            self._frozen = AirlState.from_arrays(self.config, self.arrays)
        return self._frozen

    def save(self, run_dir):
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        arrays = dict(self.arrays)
        arrays["classifier_seq"] = self.classifiers
        save_arrays(run_dir / "model.ckpt", arrays)
        meta = {
            "method": self.method,
            "model_config": self.config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "t_source": self.t_source,
            "best_val_acc": self.best_val_acc,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
        }
        (run_dir / "model.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, run_dir) -> "TrainedModel":
        run_dir = Path(run_dir)
        meta = json.loads((run_dir / "model.json").read_text())
        arrays = load_arrays(run_dir / "model.ckpt")
        classifiers = arrays.pop("classifier_seq")
        return cls(method=meta["method"],
                   config=AirlConfig.from_dict(meta["model_config"]),
                   train_config=TrainConfig.from_dict(meta["train_config"]),
                   t_source=meta["t_source"], arrays=arrays,
                   classifiers=classifiers,
                   best_val_acc=meta["best_val_acc"],
                   best_epoch=meta["best_epoch"],
                   epochs_run=meta["epochs_run"])


def _split_domains(seq: DomainSequence, t_source: int, seed: int):
    spec = SplitSpec()
    parts = [split(d, spec, seed + d.domain_index) for d in seq.domains[:t_source]]
    return ([p[0] for p in parts], [p[1] for p in parts], [p[2] for p in parts])


def _class_weight_table(trains, n_classes: int, smoothing: float):
    priors = [obj.estimate_class_priors(d.labels, n_classes, smoothing) for d in trains]
    return [obj.importance_weights(priors[t], priors[t + 1])
            for t in range(len(trains) - 1)]


def _sample_batch(rng: np.random.Generator, ds, n: int):
    take = min(n, ds.n)
    idx = rng.choice(ds.n, size=take, replace=False)
    return ds.features[idx], ds.labels[idx]


def _val_accuracy(state: AirlState, config: AirlConfig, val_ds, hvec) -> float:
    with T.no_grad():
        z = M.encode(state, val_ds.features)
        logits = M.classify(config, hvec, z)
        pred = M.predict_labels(config, logits.data)
    return float((pred == val_ds.labels).mean())


class _Logger:
    def __init__(self, log_path):
        self.fh = open(log_path, "w") if log_path else None

    def write(self, record: dict):
        if self.fh:
            self.fh.write(json.dumps(record) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _run_loop(state, cfg, trainable, step_fn, val_fn, epoch_plan, log_path):
    """Shared epoch/step/early-stop skeleton for every method."""
    optimizer = Adam(trainable, lr=cfg.lr, clip_norm=cfg.grad_clip)
    logger = _Logger(log_path)
    step_log, val_log = [], []
    best = (-1.0, -1, None)  # (val_acc, epoch, snapshot)
    since_best = 0
    global_step = 0
    epochs_run = 0
    try:
        for epoch_idx, steps in enumerate(epoch_plan):
            for _ in range(steps):
                T.clear_tape()
                total, breakdown = step_fn(epoch_idx)
                T.backward(total)
                optimizer.step()
                global_step += 1
                rec = {"step": global_step, "epoch": epoch_idx, **breakdown.to_dict()}
                step_log.append(rec)
                logger.write(rec)
            epochs_run = epoch_idx + 1
            acc = val_fn()
            val_log.append({"epoch": epoch_idx, "val_acc": acc})
            logger.write({"epoch": epoch_idx, "val_acc": acc})
            if acc >= best[0]:
                # ties refresh the snapshot (the later model has trained
                # longer at the same validation level) but only strict
                # improvement resets the stopping clock
                improved = acc > best[0]
                best = (acc, epoch_idx, state.snapshot())
                since_best = 0 if improved else since_best + 1
            else:
                since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    finally:
        logger.close()
    if best[2] is None:
        raise TrainingError("training produced no validated checkpoint")
    state.restore(best[2])
    return best[0], best[1], epochs_run, step_log, val_log


def _materialize_classifiers(state: AirlState, method: str, count: int) -> np.ndarray:
    with T.no_grad():
        if method in FIXED_CLASSIFIER_METHODS:
            return state.params["h1"].data.copy().reshape(1, -1)
        chain = M.classifier_chain(state, count)
    return np.stack([h.data for h in chain])


def train_airl(seq: DomainSequence, model_cfg: AirlConfig, cfg: TrainConfig,
               variant: str = "airl", log_path=None) -> TrainedModel:
    """Adaptive training over the source prefix; ``variant`` selects an ablation."""
    if variant not in AIRL_METHODS:
        raise ValueError("unknown variant %r" % variant)
    t_source = seq.T_source
    if t_source < 2:
        raise TrainingError("need at least two source domains, got %d" % t_source)
    use_trans = variant != "no_trans"
    use_lstm = variant != "no_lstm"
    alpha = 0.0 if variant == "no_inv" else cfg.alpha

    trains, vals, _ = _split_domains(seq, t_source, cfg.seed)
    n_classes = seq.n_classes
    weights = _class_weight_table(trains, n_classes, cfg.prior_smoothing)

    state = AirlState(model_cfg, seed=cfg.seed)
    exclude = ()
    if not use_trans:
        exclude += ("attn.",)
    if not use_lstm or t_source < 3:
        # a two-domain source has a single classifier, so the chain never
        # invokes the cell and its parameters see no gradient
        exclude += ("lstm.",)
    trainable = state.trainable(exclude_prefixes=exclude)

    rng = np.random.default_rng(cfg.seed + 104729)
    n = cfg.batch_per_domain
    steps_per_epoch = max(1, min(d.n for d in trains) // n)

    def step_fn(_epoch):
        batches = [_sample_batch(rng, d, n) for d in trains]
        z = [M.encode(state, x) for x, _ in batches]
        if use_trans:
            zhat = M.attend_sequence(state, z, training=True, limit=t_source - 1)
        else:
            zhat = z[:t_source - 1]
        if use_lstm:
            chain = M.classifier_chain(state, t_source - 1)
        else:
            chain = [state.params["h1"]] * (t_source - 1)
        cls_terms, inv_terms, skipped = [], [], 0
        for t in range(t_source - 1):
            y_t, y_next = batches[t][1], batches[t + 1][1]
            w = obj.per_sample_weights(weights[t], y_t)
            if alpha > 0:
                linv, sk = obj.coral_inv_loss(zhat[t], y_t, w, z[t + 1], y_next,
                                              n_classes)
                skipped += sk
            else:
                linv = T.Tensor(np.asarray(0.0))
            parts = M.classifier_parts(model_cfg, chain[t])
            logits_f = M.classify_with_parts(parts, zhat[t])
            logits_g = M.classify_with_parts(parts, z[t + 1])
            cls_terms.append(obj.weighted_cls_loss(
                logits_f, y_t, w, logits_g, y_next, model_cfg.n_output))
            inv_terms.append(linv)
        return obj.combine_losses(cls_terms, inv_terms, alpha, skipped)

    def val_fn():
        if use_lstm:
            with T.no_grad():
                hvec = M.classifier_chain(state, t_source - 1)[-1]
        else:
            hvec = state.params["h1"]
        return _val_accuracy(state, model_cfg, vals[-1], hvec)

    epoch_plan = [steps_per_epoch] * cfg.epochs
    best_acc, best_epoch, epochs_run, step_log, val_log = _run_loop(
        state, cfg, trainable, step_fn, val_fn, epoch_plan, log_path)

    return TrainedModel(
        method=variant, config=model_cfg, train_config=cfg, t_source=t_source,
        arrays=state.snapshot(),
        classifiers=_materialize_classifiers(state, variant, t_source - 1),
        best_val_acc=best_acc, best_epoch=best_epoch, epochs_run=epochs_run,
        step_log=step_log, val_log=val_log)


def train_baseline(kind: str, seq: DomainSequence, model_cfg: AirlConfig,
                   cfg: TrainConfig, log_path=None) -> TrainedModel:
    """ERM pools sources; LD keeps only the last; FT sweeps them in order."""
    if kind not in BASELINE_METHODS:
        raise ValueError("unknown baseline %r" % kind)
    t_source = seq.T_source
    trains, vals, _ = _split_domains(seq, t_source, cfg.seed)

    state = AirlState(model_cfg, seed=cfg.seed)
    trainable = state.trainable(exclude_prefixes=("attn.", "lstm."))
    rng = np.random.default_rng(cfg.seed + 104729)
    batch = cfg.batch_per_domain * t_source

    if kind == "erm":
        pools = [(np.concatenate([d.features for d in trains]),
                  np.concatenate([d.labels for d in trains]))]
    elif kind == "ld":
        pools = [(trains[-1].features, trains[-1].labels)]
    else:  # ft: one pool per domain, visited in order
        pools = [(d.features, d.labels) for d in trains]

    # budget parity: ft divides the epoch budget across the domain sweep
    if kind == "ft":
        per_domain_epochs = max(1, cfg.epochs // t_source)
        plan = []  # (pool index, steps) per epoch
        for pi, (px, _) in enumerate(pools):
            steps = max(1, px.shape[0] // min(batch, px.shape[0]))
            plan.extend((pi, steps) for _ in range(per_domain_epochs))
    else:
        px = pools[0][0]
        steps = max(1, px.shape[0] // min(batch, px.shape[0]))
        plan = [(0, steps) for _ in range(cfg.epochs)]

    def step_fn(epoch_idx):
        px, py = pools[plan[epoch_idx][0]]
        take = min(batch, px.shape[0])
        idx = rng.choice(px.shape[0], size=take, replace=False)
        z = M.encode(state, px[idx])
        logits = M.classify(model_cfg, state.params["h1"], z)
        ce = obj.cross_entropy_terms(logits, py[idx], model_cfg.n_output)
        loss = T.reduce_mean(ce)
        return obj.combine_losses([loss], [T.Tensor(np.asarray(0.0))], 0.0)

    def val_fn():
        return _val_accuracy(state, model_cfg, vals[-1], state.params["h1"])

    epoch_plan = [steps for _, steps in plan]
    best_acc, best_epoch, epochs_run, step_log, val_log = _run_loop(
        state, cfg, trainable, step_fn, val_fn, epoch_plan, log_path)

    return TrainedModel(
        method=kind, config=model_cfg, train_config=cfg, t_source=t_source,
        arrays=state.snapshot(),
        classifiers=_materialize_classifiers(state, kind, t_source - 1),
        best_val_acc=best_acc, best_epoch=best_epoch, epochs_run=epochs_run,
        step_log=step_log, val_log=val_log)


def ablate(variant: str, seq: DomainSequence, model_cfg: AirlConfig,
           cfg: TrainConfig, log_path=None) -> TrainedModel:
    if variant not in ("no_lstm", "no_trans", "no_inv"):
        raise ValueError("unknown ablation %r" % variant)
    return train_airl(seq, model_cfg, cfg, variant=variant, log_path=log_path)


def train(method: str, seq: DomainSequence, model_cfg: AirlConfig, cfg: TrainConfig,
          log_path=None) -> TrainedModel:
    """Dispatch on method name: airl, erm, ld, ft, no_lstm, no_trans, no_inv."""
    if method == "airl":
        return train_airl(seq, model_cfg, cfg, log_path=log_path)
    if method in BASELINE_METHODS:
        return train_baseline(method, seq, model_cfg, cfg, log_path=log_path)
    return ablate(method, seq, model_cfg, cfg, log_path=log_path)


@dataclass
class TrainSpec:
    """Picklable model factory handed to the evaluation protocols."""
    method: str
    model_cfg: AirlConfig
    train_cfg: TrainConfig

    def __call__(self, seq: DomainSequence, seed: int) -> TrainedModel:
        return train(self.method, seq, self.model_cfg,
                     replace(self.train_cfg, seed=seed))
