"""Adaptive-representation networks.

Three pieces: a shared MLP encoder, an attention layer that mixes each
sample's representation with its counterparts from earlier domains
(current and past positions only), and an LSTM that writes the weight
vector of the next domain's classifier from the classifiers before it.

The encoder alone is the history-free mapping used at inference; encoder
plus attention is the history-aware mapping used for training-time
alignment.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .tensor import BatchNormState, Tensor


@dataclass
class AirlConfig:
    input_dim: int
    n_classes: int
    repr_dim: int = 32
    encoder_layers: int = 4
    lstm_hidden: int = 128
    classifier_hidden: int = 32
    attention_softmax: bool = False  # normalize attention scores (off: raw scaled dot products)

    def __post_init__(self):
        if min(self.input_dim, self.n_classes, self.repr_dim,
               self.encoder_layers, self.lstm_hidden, self.classifier_hidden) < 1:
            raise ValueError("all architecture sizes must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")

    @property
    def n_output(self) -> int:
        return 1 if self.n_classes == 2 else self.n_classes

    @property
    def classifier_vec_len(self) -> int:
        d, ch, no = self.repr_dim, self.classifier_hidden, self.n_output
        return (d * ch + ch) + (ch * no + no)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AirlConfig":
        return cls(**d)


# classifier vector layout: hidden weights (d*ch row-major), hidden bias (ch),
# output weights (ch*no row-major), output bias (no)

def classifier_layout(config: AirlConfig):
    d, ch, no = config.repr_dim, config.classifier_hidden, config.n_output
    return [("w1", (d, ch)), ("b1", (ch,)), ("w2", (ch, no)), ("b2", (no,))]


def vectorize_classifier(w1, b1, w2, b2) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1)
                           for a in (w1, b1, w2, b2)])


def devectorize_classifier(vec: np.ndarray, config: AirlConfig):
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.shape[0] != config.classifier_vec_len:
        raise ValueError("classifier vector has length %d, expected %d"
                         % (vec.shape[0], config.classifier_vec_len))
    parts = []
    off = 0
    for _, shape in classifier_layout(config):
        size = int(np.prod(shape))
        parts.append(vec[off:off + size].reshape(shape).copy())
        off += size
    return tuple(parts)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class AirlState:
    """All trainable parameters plus batchnorm running statistics."""

    BN_KEYS = ("bn.running_mean", "bn.running_var")

    def __init__(self, config: AirlConfig, seed: int):
        self.config = config
        rng = np.random.default_rng(seed)
        d, hid = config.repr_dim, config.lstm_hidden
        cv = config.classifier_vec_len
        p: dict[str, Tensor] = {}

        for i in range(config.encoder_layers):
            fan = config.input_dim if i == 0 else d
            p["enc%d.w" % i] = Tensor(_uniform(rng, (fan, d), fan), requires_grad=True)
            p["enc%d.b" % i] = Tensor(np.zeros(d), requires_grad=True)

        for name in ("q", "k", "v", "u", "post"):
            p["attn.%s.w" % name] = Tensor(_uniform(rng, (d, d), d), requires_grad=True)
            p["attn.%s.b" % name] = Tensor(np.zeros(d), requires_grad=True)
        p["attn.gamma"] = Tensor(np.ones(d), requires_grad=True)
        p["attn.beta"] = Tensor(np.zeros(d), requires_grad=True)

        p["lstm.in.w"] = Tensor(_uniform(rng, (cv, hid), cv), requires_grad=True)
        p["lstm.in.b"] = Tensor(np.zeros(hid), requires_grad=True)
        p["lstm.w_ih"] = Tensor(_uniform(rng, (hid, 4 * hid), hid), requires_grad=True)
        p["lstm.w_hh"] = Tensor(_uniform(rng, (hid, 4 * hid), hid), requires_grad=True)
        b_ih = np.zeros(4 * hid)
        b_ih[hid:2 * hid] = 1.0  # forget-gate bias
        p["lstm.b_ih"] = Tensor(b_ih, requires_grad=True)
        p["lstm.b_hh"] = Tensor(np.zeros(4 * hid), requires_grad=True)
        p["lstm.out.w"] = Tensor(_uniform(rng, (hid, cv), hid), requires_grad=True)
        p["lstm.out.b"] = Tensor(np.zeros(cv), requires_grad=True)

        ch, no = config.classifier_hidden, config.n_output
        p["h1"] = Tensor(vectorize_classifier(
            _uniform(rng, (d, ch), d), np.zeros(ch),
            _uniform(rng, (ch, no), ch), np.zeros(no)), requires_grad=True)

        self.params = p
        self.bn = BatchNormState(d)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def trainable(self, exclude_prefixes=()) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items()
                if not any(k.startswith(pre) for pre in exclude_prefixes)}

    def snapshot(self) -> dict[str, np.ndarray]:
        arrays = {k: v.data.copy() for k, v in self.params.items()}
        arrays["bn.running_mean"] = self.bn.running_mean.copy()
        arrays["bn.running_var"] = self.bn.running_var.copy()
        return arrays

    def restore(self, arrays: dict[str, np.ndarray]):
        for k, t in self.params.items():
            if k not in arrays:
                raise KeyError("checkpoint is missing parameter %r" % k)
            if arrays[k].shape != t.data.shape:
                raise ValueError("parameter %r has shape %r, expected %r"
                                 % (k, arrays[k].shape, t.data.shape))
            t.data = arrays[k].copy()
            t.grad = None
        self.bn.running_mean = arrays["bn.running_mean"].copy()
        self.bn.running_var = arrays["bn.running_var"].copy()

    @classmethod
    def from_arrays(cls, config: AirlConfig, arrays: dict[str, np.ndarray]) -> "AirlState":
        state = cls(config, seed=0)
        state.restore(arrays)
        return state

    def save(self, path):
        save_arrays(path, self.snapshot())

    def load(self, path):
        self.restore(load_arrays(path))


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def encode(state: AirlState, x) -> Tensor:
    """Map an (n, input_dim) batch to (n, repr_dim); no history involved."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    p = state.params
    last = state.config.encoder_layers - 1
    for i in range(state.config.encoder_layers):
        h = T.affine(h, p["enc%d.w" % i], p["enc%d.b" % i])
        if i < last:
            h = T.relu(h)
    return h


def _project(state: AirlState, z_list, name: str):
    p = state.params
    return [T.affine(z, p["attn.%s.w" % name], p["attn.%s.b" % name]) for z in z_list]


def _attend_one(state: AirlState, kz, vz, z_t: Tensor, training: bool) -> Tensor:
    p = state.params
    d = state.config.repr_dim
    n = z_t.shape[0]
    qt = T.affine(z_t, p["attn.q.w"], p["attn.q.b"])
    ut = T.affine(z_t, p["attn.u.w"], p["attn.u.b"])
    inv = 1.0 / math.sqrt(d)
    scores = [T.rowwise_dot(k, qt, inv) for k in kz]
    if state.config.attention_softmax:
        mat = T.concat([T.reshape(s, (n, 1)) for s in scores], axis=1)
        sm = T.softmax(mat, axis=1)
        scores = [T.reshape(T.slice_axis(sm, 1, i, i + 1), (n,))
                  for i in range(len(kz))]
    acc = T.scale_rows(vz[0], scores[0])
    for s in range(1, len(kz)):
        acc = T.add_scaled_rows(acc, vz[s], scores[s])
    zhat = T.add(acc, ut)
    out = T.affine(zhat, p["attn.post.w"], p["attn.post.b"])
    out = T.batchnorm_1d(out, p["attn.gamma"], p["attn.beta"], state.bn, training)
    return T.leaky_relu(out)


def attend(state: AirlState, z_seq, training: bool) -> Tensor:
    """History-aware representation of the latest position in ``z_seq``.

    ``z_seq`` lists one (n, repr_dim) batch per domain, oldest first; sample
    slot j attends over its own row at every position. Only the given
    positions enter, so the output is causal by construction.
    """
    if not z_seq:
        raise ValueError("attend: empty representation sequence")
    kz = _project(state, z_seq, "k")
    vz = _project(state, z_seq, "v")
    return _attend_one(state, kz, vz, z_seq[-1], training)


def attend_sequence(state: AirlState, z_list, training: bool, limit=None):
    """History-aware representation at every position t = 1..limit.

    Equivalent to calling ``attend`` on each prefix, but shares the key and
    value projections across positions.
    """
    count = len(z_list) if limit is None else limit
    if count < 1 or count > len(z_list):
        raise ValueError("attend_sequence: bad limit %r" % limit)
    kz = _project(state, z_list[:count], "k")
    vz = _project(state, z_list[:count], "v")
    return [_attend_one(state, kz[:t + 1], vz[:t + 1], z_list[t], training)
            for t in range(count)]


def generate_classifier(state: AirlState, h_history) -> Tensor:
    """Run the LSTM over the vectorized classifier history; emit the next one."""
    if not h_history:
        raise ValueError("generate_classifier: empty classifier history")
    p = state.params
    hid = state.config.lstm_hidden
    cv = state.config.classifier_vec_len
    hh = Tensor(np.zeros((1, hid)))
    cc = Tensor(np.zeros((1, hid)))
    for hv in h_history:
        v = T.reshape(hv, (1, cv))
        u = T.affine(v, p["lstm.in.w"], p["lstm.in.b"])
        hh, cc = T.lstm_cell(u, hh, cc, p["lstm.w_ih"], p["lstm.w_hh"],
                             p["lstm.b_ih"], p["lstm.b_hh"])
    out = T.affine(hh, p["lstm.out.w"], p["lstm.out.b"])
    return T.reshape(out, (cv,))


def classifier_chain(state: AirlState, count: int, h1: Tensor | None = None):
    """[h_1 .. h_count] where each later vector is the LSTM's next step.

    The cell state carries across the chain, which matches re-reading the
    full history at every step because the cell is deterministic.
    """
    if count < 1:
        raise ValueError("classifier_chain: count must be >= 1")
    p = state.params
    hid = state.config.lstm_hidden
    cv = state.config.classifier_vec_len
    chain = [p["h1"] if h1 is None else h1]
    hh = Tensor(np.zeros((1, hid)))
    cc = Tensor(np.zeros((1, hid)))
    for _ in range(count - 1):
        v = T.reshape(chain[-1], (1, cv))
        u = T.affine(v, p["lstm.in.w"], p["lstm.in.b"])
        hh, cc = T.lstm_cell(u, hh, cc, p["lstm.w_ih"], p["lstm.w_hh"],
                             p["lstm.b_ih"], p["lstm.b_hh"])
        chain.append(T.reshape(T.affine(hh, p["lstm.out.w"], p["lstm.out.b"]), (cv,)))
    return chain


def classifier_parts(config: AirlConfig, hvec: Tensor):
    """Slice a flat classifier vector into its four layer tensors.

    Slicing keeps the graph connected, so gradients reach whatever
    produced ``hvec`` (the LSTM during training).
    """
    d, ch, no = config.repr_dim, config.classifier_hidden, config.n_output
    hvec = hvec if isinstance(hvec, Tensor) else Tensor(hvec)
    o1 = d * ch
    w1 = T.reshape(T.slice_axis(hvec, 0, 0, o1), (d, ch))
    b1 = T.slice_axis(hvec, 0, o1, o1 + ch)
    o2 = o1 + ch
    w2 = T.reshape(T.slice_axis(hvec, 0, o2, o2 + ch * no), (ch, no))
    b2 = T.slice_axis(hvec, 0, o2 + ch * no, o2 + ch * no + no)
    return w1, b1, w2, b2


def classify_with_parts(parts, z: Tensor) -> Tensor:
    w1, b1, w2, b2 = parts
    hidden = T.relu(T.affine(z, w1, b1))
    return T.affine(hidden, w2, b2)


def classify(config: AirlConfig, hvec: Tensor, z: Tensor) -> Tensor:
    """Apply a vectorized classifier to (n, repr_dim) representations."""
    d = config.repr_dim
    if z.shape[1] != d:
        raise T.ShapeError("classify: representations have width %d, expected %d"
                           % (z.shape[1], d))
    return classify_with_parts(classifier_parts(config, hvec), z)


def predict_labels(config: AirlConfig, logits: np.ndarray) -> np.ndarray:
    """Argmax with ties broken toward the lower class index (binary: logit > 0)."""
    if config.n_output == 1:
        return (logits.reshape(-1) > 0).astype(np.int64)
    return np.argmax(logits, axis=1).astype(np.int64)
