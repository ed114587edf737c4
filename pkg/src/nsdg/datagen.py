"""Synthetic evolving-domain sequences with known drift mechanisms.

Each generator emits an ordered list of labeled datasets together with
the ground-truth 2-D rotation that carries domain t onto domain t+1.
Randomness comes from numpy's PCG64 (``default_rng``); domain t draws
from its own stream seeded ``base_seed + t`` so domains stay decoupled.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ParameterError(ValueError):
    """A generator or split was configured with unusable parameters."""


class DataFormatError(ValueError):
    """A dataset file is missing, corrupt, or inconsistent."""


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, feature_dim) float64
    labels: np.ndarray    # (n,) int64
    domain_index: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ParameterError("dataset must be a nonempty (n, d) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ParameterError("labels must align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ParameterError("non-finite feature values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[idx].copy(), self.labels[idx].copy(),
                              self.domain_index)


@dataclass
class GroundTruthMap:
    kind: str  # only "rotation2d"
    matrix: np.ndarray  # 2x2

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.kind != "rotation2d":
            raise ParameterError("unknown map kind %r" % self.kind)
        if self.matrix.shape != (2, 2):
            raise ParameterError("rotation2d needs a 2x2 matrix")
        if (np.abs(self.matrix @ self.matrix.T - np.eye(2)).max() > 1e-12
                or abs(np.linalg.det(self.matrix) - 1.0) > 1e-12):
            raise ParameterError("matrix is not a proper rotation")


def rotation2d(angle: float) -> GroundTruthMap:
    c, s = math.cos(angle), math.sin(angle)
    return GroundTruthMap("rotation2d", np.array([[c, -s], [s, c]]))


@dataclass
class DomainSequence:
    domains: list[LabeledDataset]
    T_source: int
    mappings: list[GroundTruthMap] | None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.domains)
        idxs = [d.domain_index for d in self.domains]
        if idxs != list(range(1, n + 1)):
            raise ParameterError("domain indices must run 1..%d" % n)
        if n == 1:
            if self.T_source != 1:
                raise ParameterError("single-domain sequence must have T_source 1")
        elif not 1 <= self.T_source < n:
            raise ParameterError("need 1 <= T_source < #domains")
        if self.mappings is not None and len(self.mappings) != n - 1:
            raise ParameterError("need one mapping per consecutive domain pair")

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    @property
    def n_classes(self) -> int:
        return int(self.metadata["n_classes"])

    @property
    def feature_dim(self) -> int:
        return self.domains[0].feature_dim

    def source_domains(self, t_source: int | None = None) -> list[LabeledDataset]:
        t = self.T_source if t_source is None else t_source
        return self.domains[:t]

    def with_t_source(self, t_source: int) -> "DomainSequence":
        if not 1 <= t_source < self.n_domains:
            raise ParameterError("t_source %d out of range" % t_source)
        meta = dict(self.metadata)
        return DomainSequence(self.domains, t_source, self.mappings, meta)


@dataclass
class SplitSpec:
    train_frac: float = 0.81
    val_frac: float = 0.09
    idtest_frac: float = 0.10

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.idtest_frac
        if abs(total - 1.0) > 1e-9:
            raise ParameterError("split fractions must sum to 1, got %r" % total)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _circle_domain(mean: np.ndarray, n: int, radius: float, noise_sigma: float,
                   rng: np.random.Generator, domain_index: int) -> LabeledDataset:
    x = mean + noise_sigma * rng.standard_normal((n, 2))
    # label rule: squared distance from the labeling center (origin) <= radius;
    # with the default radius 1 this coincides with the geometric disk
    y = ((x ** 2).sum(axis=1) <= radius).astype(np.int64)
    return LabeledDataset(x, y, domain_index)


def gen_circle(T_total: int = 30, n_per_domain: int = 1000, radius: float = 1.0,
               noise_sigma: float = 0.2, seed: int = 0) -> DomainSequence:
    """Domain means walk a semicircle in steps of pi/T_total."""
    if T_total < 2 or n_per_domain < 2:
        raise ParameterError("need T_total >= 2 and n_per_domain >= 2")
    if radius <= 0 or noise_sigma <= 0:
        raise ParameterError("radius and noise_sigma must be positive")
    domains = []
    for t in range(1, T_total + 1):
        angle = math.pi * (t - 1) / T_total
        mean = radius * np.array([math.cos(angle), math.sin(angle)])
        rng = np.random.default_rng(seed + t)
        domains.append(_circle_domain(mean, n_per_domain, radius, noise_sigma, rng, t))
    step = math.pi / T_total
    mappings = [rotation2d(step) for _ in range(T_total - 1)]
    meta = {"generator": "circle", "seed": seed, "n_classes": 2,
            "params": {"T_total": T_total, "n_per_domain": n_per_domain,
                       "radius": radius, "noise_sigma": noise_sigma}}
    return DomainSequence(domains, T_total // 2, mappings, meta)


def circle_hard_angles(T_total: int) -> list[float]:
    """theta_1 = 0; theta_t = theta_{t-1} + pi*(t-1)/180."""
    angles = [0.0]
    for t in range(2, T_total + 1):
        angles.append(angles[-1] + math.pi * (t - 1) / 180.0)
    return angles


def gen_circle_hard(T_total: int = 30, n_per_domain: int = 1000, radius: float = 1.0,
                    noise_sigma: float = 0.2, seed: int = 0) -> DomainSequence:
    """Like gen_circle but the angular step grows linearly with the domain index."""
    if T_total < 2 or n_per_domain < 2:
        raise ParameterError("need T_total >= 2 and n_per_domain >= 2")
    if radius <= 0 or noise_sigma <= 0:
        raise ParameterError("radius and noise_sigma must be positive")
    angles = circle_hard_angles(T_total)
    domains = []
    for t in range(1, T_total + 1):
        mean = radius * np.array([math.cos(angles[t - 1]), math.sin(angles[t - 1])])
        rng = np.random.default_rng(seed + t)
        domains.append(_circle_domain(mean, n_per_domain, radius, noise_sigma, rng, t))
    mappings = [rotation2d(math.pi * t / 180.0) for t in range(1, T_total)]
    meta = {"generator": "circle-hard", "seed": seed, "n_classes": 2,
            "params": {"T_total": T_total, "n_per_domain": n_per_domain,
                       "radius": radius, "noise_sigma": noise_sigma}}
    return DomainSequence(domains, T_total // 2, mappings, meta)


def gen_rotating_gaussian(class_means, class_covs, step_angle_fn, T_total: int,
                          n_per_domain: int, seed: int = 0,
                          class_priors=None) -> DomainSequence:
    """Class-conditional 2-D Gaussians rotated rigidly from one domain to the next.

    ``step_angle_fn(t)`` gives the rotation carrying domain t onto domain t+1,
    so domain t sits at the cumulative angle of the first t-1 steps.
    """
    means = [np.asarray(m, dtype=np.float64) for m in class_means]
    covs = [np.asarray(c, dtype=np.float64) for c in class_covs]
    if len(means) < 1 or len(means) != len(covs):
        raise ParameterError("need matching nonempty class means and covariances")
    for c in covs:
        if c.shape != (2, 2) or np.linalg.det(c) <= 0:
            raise ParameterError("covariances must be 2x2 and nonsingular")
    if class_priors is None:
        class_priors = np.full(len(means), 1.0 / len(means))
    class_priors = np.asarray(class_priors, dtype=np.float64)
    chols = [np.linalg.cholesky(c) for c in covs]

    domains = []
    cumulative = 0.0
    for t in range(1, T_total + 1):
        rng = np.random.default_rng(seed + t)
        rot = rotation2d(cumulative).matrix
        y = rng.choice(len(means), size=n_per_domain, p=class_priors)
        z = rng.standard_normal((n_per_domain, 2))
        x = np.empty((n_per_domain, 2))
        for k in range(len(means)):
            sel = y == k
            x[sel] = means[k] + z[sel] @ chols[k].T
        domains.append(LabeledDataset(x @ rot.T, y.astype(np.int64), t))
        if t < T_total:
            cumulative += step_angle_fn(t)
    mappings = [rotation2d(step_angle_fn(t)) for t in range(1, T_total)]
    meta = {"generator": "rotating-gaussian", "seed": seed, "n_classes": len(means),
            "params": {"T_total": T_total, "n_per_domain": n_per_domain}}
    t_source = max(1, T_total // 2) if T_total > 1 else 1
    return DomainSequence(domains, t_source, mappings, meta)


def apply_ground_truth_map(ds: LabeledDataset, m: GroundTruthMap) -> LabeledDataset:
    """Push features through the map; labels ride along unchanged."""
    if ds.feature_dim != m.matrix.shape[1]:
        raise ParameterError("map expects %d-dim features, got %d"
                             % (m.matrix.shape[1], ds.feature_dim))
    return LabeledDataset(ds.features @ m.matrix.T, ds.labels.copy(), ds.domain_index)


def split(ds: LabeledDataset, spec: SplitSpec, seed: int):
    """Deterministic shuffle-split into (train, val, idtest)."""
    n = ds.n
    n_val = int(n * spec.val_frac)
    n_idtest = int(n * spec.idtest_frac)
    n_train = n - n_val - n_idtest
    if min(n_train, n_val, n_idtest) < 1:
        raise ParameterError("split of %d rows leaves an empty part" % n)
    perm = np.random.default_rng(seed).permutation(n)
    return (ds.subset(perm[:n_train]),
            ds.subset(perm[n_train:n_train + n_val]),
            ds.subset(perm[n_train + n_val:]))


# ---------------------------------------------------------------------------
# low-res rotated digits (optional extra; not part of the main benchmarks)
# ---------------------------------------------------------------------------

def _read_idx_images(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16 or int.from_bytes(raw[:4], "big") != 2051:
        raise DataFormatError("%s is not an IDX image file" % path)
    n = int.from_bytes(raw[4:8], "big")
    rows = int.from_bytes(raw[8:12], "big")
    cols = int.from_bytes(raw[12:16], "big")
    data = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if data.size != n * rows * cols:
        raise DataFormatError("%s is truncated" % path)
    return data.reshape(n, rows, cols).astype(np.float64) / 255.0


def _read_idx_labels(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 8 or int.from_bytes(raw[:4], "big") != 2049:
        raise DataFormatError("%s is not an IDX label file" % path)
    n = int.from_bytes(raw[4:8], "big")
    data = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if data.size != n:
        raise DataFormatError("%s is truncated" % path)
    return data.astype(np.int64)


def rotate_images(images: np.ndarray, degrees: float) -> np.ndarray:
    """Counterclockwise rotation about the image center, bilinear resampling."""
    if degrees % 360 == 0:
        return images.copy()
    n, h, w = images.shape
    theta = math.radians(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # inverse map: rotate output coords by -theta into input space
    dy, dx = yy - cy, xx - cx
    sy = cy + dy * math.cos(theta) - dx * math.sin(theta)
    sx = cx + dy * math.sin(theta) + dx * math.cos(theta)
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 2)
    wy = np.clip(sy - y0, 0.0, 1.0)
    wx = np.clip(sx - x0, 0.0, 1.0)
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    out = (images[:, y0, x0] * (1 - wy) * (1 - wx)
           + images[:, y0 + 1, x0] * wy * (1 - wx)
           + images[:, y0, x0 + 1] * (1 - wy) * wx
           + images[:, y0 + 1, x0 + 1] * wy * wx)
    return out * inside


def load_rmnist_lite(path, T_total: int = 30, step_deg: float = 6.0,
                     downsample_to: int = 7, n_per_domain: int = 1000,
                     seed: int = 0) -> DomainSequence:
    """Rotated low-res digits: domain t rotates by (t-1)*step_deg degrees.

    Expects the classic IDX pair ``train-images-idx3-ubyte`` /
    ``train-labels-idx1-ubyte`` under ``path``. Images are rotated,
    block-averaged down to ``downsample_to`` square, and flattened.
    """
    base = Path(path)
    img_file = base / "train-images-idx3-ubyte"
    lbl_file = base / "train-labels-idx1-ubyte"
    if not img_file.exists() or not lbl_file.exists():
        raise DataFormatError("digit archive not found under %s" % base)
    images = _read_idx_images(img_file)
    labels = _read_idx_labels(lbl_file)
    side = images.shape[1]
    if side % downsample_to != 0:
        raise ParameterError("cannot block-average %d down to %d" % (side, downsample_to))
    block = side // downsample_to

    domains = []
    for t in range(1, T_total + 1):
        rng = np.random.default_rng(seed + t)
        pick = rng.choice(images.shape[0], size=n_per_domain, replace=False)
        rot = rotate_images(images[pick], (t - 1) * step_deg)
        small = rot.reshape(n_per_domain, downsample_to, block, downsample_to, block)
        small = small.mean(axis=(2, 4))
        domains.append(LabeledDataset(small.reshape(n_per_domain, -1),
                                      labels[pick], t))
    meta = {"generator": "rmnist-lite", "seed": seed, "n_classes": 10,
            "params": {"T_total": T_total, "step_deg": step_deg,
                       "downsample_to": downsample_to, "n_per_domain": n_per_domain}}
    return DomainSequence(domains, T_total // 2, None, meta)


# ---------------------------------------------------------------------------
# file format: CSV table plus JSON sidecar, bit-exact round trip
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1


def write_domain_sequence(seq: DomainSequence, base_path):
    """Write ``<base>.csv`` (domain,y,x1..xd) and ``<base>.json`` metadata."""
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    d = seq.feature_dim
    with open(base.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "y"] + ["x%d" % (i + 1) for i in range(d)])
        for dom in seq.domains:
            for i in range(dom.n):
                writer.writerow([dom.domain_index, int(dom.labels[i])]
                                + [repr(float(v)) for v in dom.features[i]])
    sidecar = {
        "format_version": FORMAT_VERSION,
        "T_source": seq.T_source,
        "n_domains": seq.n_domains,
        "feature_dim": d,
        "metadata": seq.metadata,
        "mappings": None if seq.mappings is None else [
            {"kind": m.kind, "matrix": [[float(v) for v in row] for row in m.matrix]}
            for m in seq.mappings],
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)


def read_domain_sequence(base_path) -> DomainSequence:
    base = Path(base_path)
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    if not csv_path.exists() or not json_path.exists():
        raise DataFormatError("missing dataset files at %s" % base)
    with open(json_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format_version") != FORMAT_VERSION:
        raise DataFormatError("unsupported dataset format version")
    d = sidecar["feature_dim"]
    rows_by_domain: dict[int, list] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["domain", "y"] + ["x%d" % (i + 1) for i in range(d)]:
            raise DataFormatError("unexpected CSV header in %s" % csv_path)
        for row in reader:
            rows_by_domain.setdefault(int(row[0]), []).append(row[1:])
    domains = []
    for t in sorted(rows_by_domain):
        rows = rows_by_domain[t]
        labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
        feats = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
        domains.append(LabeledDataset(feats, labels, t))
    mappings = None
    if sidecar["mappings"] is not None:
        mappings = [GroundTruthMap(m["kind"], np.array(m["matrix"]))
                    for m in sidecar["mappings"]]
    return DomainSequence(domains, sidecar["T_source"], mappings, sidecar["metadata"])


GENERATORS = {
    "circle": gen_circle,
    "circle-hard": gen_circle_hard,
}
