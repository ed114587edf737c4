"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    n_checked: int
    n_skipped: int
    worst: tuple[int, int] | None = None  # (param index, flat coordinate)
    skipped: list[tuple[int, int]] = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return ("grad_check %s: max_rel_err=%.3e tol=%.1e checked=%d skipped=%d"
                % (status, self.max_rel_err, self.tol, self.n_checked, self.n_skipped))


def grad_check(f, params, step: float = 1e-5, tol: float = 1e-4,
               kink_fn=None, fallback_steps=()) -> GradCheckReport:
    """Compare analytic gradients of ``f(*params)`` against central differences.

    ``f`` must return a scalar Tensor and be deterministic. ``kink_fn``, when
    given, maps a parameter's data to a boolean mask of coordinates sitting at
    (or within ~1e-6 of) a non-differentiable point; those are skipped and
    reported rather than checked.

    Relative error uses the larger of the two magnitudes with a 1e-8 absolute
    floor in the denominator. A coordinate whose gradient is far below that
    floor measures nothing but roundoff at the primary step size, so
    ``fallback_steps`` lets it retry at larger steps where the roundoff
    shrinks; a genuinely wrong gradient disagrees at every step size and
    still fails.
    """
    if isinstance(params, T.Tensor):
        params = [params]
    params = list(params)
    T.zero_grads(params)
    loss = f(*params)
    T.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    T.zero_grads(params)

    max_rel = 0.0
    worst = None
    n_checked = 0
    skipped = []
    with T.no_grad():
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            aflat = analytic[pi].reshape(-1)
            kinks = None
            if kink_fn is not None:
                kinks = np.asarray(kink_fn(p.data)).reshape(-1)
            for ci in range(flat.shape[0]):
                if kinks is not None and kinks[ci]:
                    skipped.append((pi, ci))
                    continue
                best = None
                for h in (step, *fallback_steps):
                    orig = flat[ci]
                    flat[ci] = orig + h
                    up = f(*params).item()
                    flat[ci] = orig - h
                    down = f(*params).item()
                    flat[ci] = orig
                    numeric = (up - down) / (2.0 * h)
                    denom = max(abs(aflat[ci]), abs(numeric), 1e-8)
                    rel = abs(aflat[ci] - numeric) / denom
                    best = rel if best is None else min(best, rel)
                    if best < tol:
                        break
                n_checked += 1
                if best > max_rel:
                    max_rel = best
                    worst = (pi, ci)
    return GradCheckReport(max_rel_err=max_rel, passed=max_rel < tol, tol=tol,
                           n_checked=n_checked, n_skipped=len(skipped),
                           worst=worst, skipped=skipped)
