"""Exact divergence identities and inequalities on finite distributions.

Everything here works on explicitly enumerated probability tables, so
the error-transfer inequality, the label-reweighting decomposition, and
the Pinsker step can be verified by direct summation rather than by
sampling estimators. Divergences use natural log, making ln 2 the JS
ceiling.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PROB_ATOL = 1e-12


class DistributionError(ValueError):
    """Malformed probability table."""


def _validate_probs(p: np.ndarray, name: str):
    if np.any(p < 0):
        raise DistributionError("%s has negative entries" % name)
    if abs(p.sum() - 1.0) > PROB_ATOL:
        raise DistributionError("%s sums to %r, not 1" % (name, p.sum()))


@dataclass
class FiniteDist:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        _validate_probs(self.probs, "distribution")

    @property
    def support_size(self) -> int:
        return self.probs.shape[0]


@dataclass
class FiniteJoint:
    grid: np.ndarray  # (|X|, |Y|)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise DistributionError("joint must be a 2-D grid")
        _validate_probs(self.grid.reshape(-1), "joint")

    def marginal_x(self) -> np.ndarray:
        return self.grid.sum(axis=1)

    def marginal_y(self) -> np.ndarray:
        return self.grid.sum(axis=0)

    def conditional_x_given_y(self, y: int) -> np.ndarray:
        py = self.grid[:, y].sum()
        if py <= 0:
            raise DistributionError("conditioning on zero-probability label %d" % y)
        return self.grid[:, y] / py


def _as_array(p) -> np.ndarray:
    if isinstance(p, FiniteDist):
        return p.probs
    if isinstance(p, FiniteJoint):
        return p.grid.reshape(-1)
    return np.asarray(p, dtype=np.float64).reshape(-1)


def kl(p, q) -> float:
    """KL(P || Q) in nats; +inf when Q misses mass that P carries."""
    p, q = _as_array(p), _as_array(q)
    if p.shape != q.shape:
        raise DistributionError("supports differ: %r vs %r" % (p.shape, q.shape))
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    # clamp the rounding residue: the sum can land at -1e-17 for P ~ Q
    return max(0.0, float((p[mask] * np.log(p[mask] / q[mask])).sum()))


def js(p, q) -> float:
    """Jensen-Shannon divergence via the midpoint mixture; always finite."""
    p, q = _as_array(p), _as_array(q)
    if p.shape != q.shape:
        raise DistributionError("supports differ: %r vs %r" % (p.shape, q.shape))
    m = 0.5 * (p + q)
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def tv(p, q) -> float:
    """Total variation distance, half the L1 gap."""
    p, q = _as_array(p), _as_array(q)
    if p.shape != q.shape:
        raise DistributionError("supports differ: %r vs %r" % (p.shape, q.shape))
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class TheoryReport:
    name: str
    trials: int
    violations: list = field(default_factory=list)
    max_slack: float = -math.inf
    min_slack: float = math.inf
    max_gap: float = 0.0  # largest |lhs - rhs| for equality checks

    @property
    def passed(self) -> bool:
        return not self.violations

    def record_inequality(self, lhs: float, rhs: float, witness, eps: float = 1e-12):
        slack = rhs - lhs
        self.max_slack = max(self.max_slack, slack)
        self.min_slack = min(self.min_slack, slack)
        if slack < -eps:
            self.violations.append({"lhs": lhs, "rhs": rhs, "witness": witness})

    def record_equality(self, lhs: float, rhs: float, witness, tol: float):
        gap = abs(lhs - rhs)
        self.max_gap = max(self.max_gap, gap)
        if gap >= tol:
            self.violations.append({"lhs": lhs, "rhs": rhs, "witness": witness})

    def to_dict(self) -> dict:
        return {"name": self.name, "trials": self.trials, "passed": self.passed,
                "n_violations": len(self.violations),
                "max_slack": None if math.isinf(self.max_slack) else self.max_slack,
                "min_slack": None if math.isinf(self.min_slack) else self.min_slack,
                "max_gap": self.max_gap,
                "violations": self.violations[:10]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _random_joint(rng: np.random.Generator, nx: int, ny: int) -> np.ndarray:
    # symmetric Dirichlet(1) over the grid cells
    g = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    return g


def check_error_transfer(trials: int, sizes=(6, 3), loss_bound: float = 1.0,
                         seed: int = 0) -> TheoryReport:
    """Error transfer: E_P[L] <= E_Q[L] + sqrt(2)*C*sqrt(JS(P, Q)).

    Random joints and a random loss table in [0, C] per trial; the
    expectations are exact sums, so any violation is a real counterexample.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = TheoryReport("lemma1", trials)
    nx_max, ny_max = sizes
    for k in range(trials):
        nx = int(rng.integers(1, nx_max + 1))
        ny = int(rng.integers(1, ny_max + 1))
        p = _random_joint(rng, nx, ny)
        q = _random_joint(rng, nx, ny)
        loss = loss_bound * rng.random((nx, ny))
        lhs = float((p * loss).sum())
        rhs = float((q * loss).sum()) + math.sqrt(2.0) * loss_bound * math.sqrt(js(p, q))
        report.record_inequality(lhs, rhs, {"trial": k, "nx": nx, "ny": ny})
    return report


def _random_label_preserving_map(rng: np.random.Generator, nx: int) -> np.ndarray:
    """Index map m: X -> X, either a permutation or an arbitrary (many-to-one) map."""
    if rng.random() < 0.5:
        return rng.permutation(nx)
    return rng.integers(0, nx, size=nx)


def push_forward_x(grid: np.ndarray, index_map: np.ndarray) -> np.ndarray:
    """Push a joint through (x, y) -> (m(x), y)."""
    out = np.zeros_like(grid)
    np.add.at(out, index_map, grid)
    return out


def reweight_labels(grid: np.ndarray, target_prior: np.ndarray) -> np.ndarray:
    """Scale each label column so the label marginal matches ``target_prior``."""
    prior = grid.sum(axis=0)
    if np.any(prior <= 0):
        raise DistributionError("reweighting needs positive label priors")
    return grid * (target_prior / prior)[None, :]


def check_reweighting_identity(trials: int, sizes=(6, 3), seed: int = 0,
                               tol: float = 1e-10,
                               marginal_tol: float = 1e-12) -> TheoryReport:
    """Joint JS after label reweighting + any X-only map equals the
    label-averaged conditional JS, and the reweighted label marginal
    lands exactly on the target's.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = TheoryReport("prop1", trials)
    nx_max, ny_max = sizes
    done = 0
    while done < trials:
        nx = int(rng.integers(2, nx_max + 1))
        ny = int(rng.integers(2, ny_max + 1))
        prev = _random_joint(rng, nx, ny)
        cur = _random_joint(rng, nx, ny)
        if np.any(prev.sum(axis=0) <= 0) or np.any(cur.sum(axis=0) <= 0):
            continue  # zero label prior: redraw the trial
        cur_prior = cur.sum(axis=0)
        weighted = reweight_labels(prev, cur_prior)
        report.record_equality(float(np.abs(weighted.sum(axis=0) - cur_prior).max()),
                               0.0, {"trial": done, "check": "marginal"}, marginal_tol)
        pushed = push_forward_x(weighted, _random_label_preserving_map(rng, nx))
        lhs = js(cur.reshape(-1), pushed.reshape(-1))
        rhs = 0.0
        for y in range(ny):
            rhs += cur_prior[y] * js(cur[:, y] / cur_prior[y], pushed[:, y] / cur_prior[y])
        report.record_equality(lhs, rhs, {"trial": done, "nx": nx, "ny": ny}, tol)
        done += 1
    return report


def check_pinsker(trials: int, sizes=(8,), seed: int = 0) -> TheoryReport:
    """TV(P, Q) <= sqrt(KL(P || Q) / 2) on random finite distributions."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = TheoryReport("pinsker", trials)
    (m_max,) = sizes
    for k in range(trials):
        m = int(rng.integers(2, m_max + 1))
        p = rng.dirichlet(np.ones(m))
        q = rng.dirichlet(np.ones(m))
        d = kl(p, q)
        rhs = math.inf if math.isinf(d) else math.sqrt(d / 2.0)
        report.record_inequality(tv(p, q), rhs, {"trial": k, "m": m})
    return report
