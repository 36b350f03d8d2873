import itertools

import numpy as np
import pytest

from saot import tensor as T
from saot.errors import DeterminismError, DimensionError
from saot.gradcheck import grad_check
from saot.nn import ParameterStore


def _store(rng, **shapes):
    s = ParameterStore(0)
    for name, shape in shapes.items():
        s.add(name, rng.standard_normal(shape))
    return s


def test_quadratic(rng):
    s = _store(rng, a=(3, 4), b=(5,))
    rep = grad_check(lambda p: T.tsum(T.square(p["a"])) + T.tsum(T.square(p["b"])), s, h=1e-5)
    assert rep.max_error < 1e-9
    assert rep.elementwise["a"] < 1e-9


def test_constant_function(rng):
    s = _store(rng, a=(4,))
    rep = grad_check(lambda p: T.Tensor(3.0) + 0.0 * T.tsum(p["a"]), s)
    assert max(rep.max_abs_numeric.values()) < 1e-10
    assert rep.max_error == 0.0


def test_parameters_restored(rng):
    s = _store(rng, a=(3, 3))
    before = s["a"].data.copy()
    grad_check(lambda p: T.tsum(T.tanh(p["a"])), s)
    np.testing.assert_array_equal(s["a"].data, before)
    assert not s["a"].grad.any()


def test_nondeterministic_function_rejected(rng):
    s = _store(rng, a=(2,))
    counter = itertools.count()
    with pytest.raises(DeterminismError):
        grad_check(lambda p: T.tsum(p["a"]) + float(next(counter)), s)


def test_wrong_gradient_is_caught(rng):
    s = _store(rng, a=(3,))

    def broken(p):
        a = p["a"]
        # forward is a^2, backward claims 3a
        return T.tsum(T.make_node(a.data**2, (a,), lambda g: (3 * a.data * g,)))

    rep = grad_check(broken, s)
    assert not rep.passed(1e-4)
    assert rep.failures(1e-4) == {"a": rep.errors["a"]}


def test_non_scalar_rejected(rng):
    s = _store(rng, a=(2,))
    with pytest.raises(DimensionError):
        grad_check(lambda p: p["a"] * 2.0, s)
