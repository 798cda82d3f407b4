"""Drift fields ``f(x, t)`` with the derivative hooks the estimators need.

A drift field evaluates batches of states and can pull cotangents back to its
parameters. Fields that also expose ``input_vjp``/``input_jvp`` support the
Euler-Maruyama backward pass, observation gradients and SDE reconstruction.
"""
from __future__ import annotations

from typing import Callable, Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class DriftField(Protocol):
    dim: int
    param_count: int

    def eval(self, x, t) -> np.ndarray: ...

    def eval_batch(self, X, t) -> np.ndarray: ...

    def pullback(self, X, t, cotangents) -> np.ndarray: ...


class Drift:
    """Base class: single evaluations go through the batched path."""

    dim: int
    param_count = 0
    piecewise_linear = False

    @property
    def params(self) -> np.ndarray:
        return np.zeros(0)

    def with_params(self, params) -> "Drift":
        if np.size(params):
            raise ValueError(f"{type(self).__name__} has no parameters")
        return self

    def eval(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.eval_batch(x[None, :], np.array([t], dtype=np.float64))[0]

    def eval_batch(self, X, t) -> np.ndarray:
        raise NotImplementedError

    def pullback(self, X, t, cotangents) -> np.ndarray:
        return np.zeros(self.param_count)

    def input_vjp(self, X, t, cotangents) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no input VJP")

    def input_jvp(self, X, t, tangents) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no input JVP")

    def vjp(self, X, t, cotangents):
        """``(parameter gradient, input cotangents)`` in one pass."""
        return self.pullback(X, t, cotangents), self.input_vjp(X, t, cotangents)


class ZeroDrift(Drift):
    piecewise_linear = True

    def __init__(self, dim: int):
        self.dim = dim

    def eval_batch(self, X, t):
        return np.zeros_like(np.asarray(X, dtype=np.float64))

    def input_vjp(self, X, t, cotangents):
        return np.zeros_like(np.asarray(cotangents, dtype=np.float64))

    def input_jvp(self, X, t, tangents):
        return np.zeros_like(np.asarray(tangents, dtype=np.float64))


class ConstantDrift(Drift):
    """``f(x, t) = c``; the parameters are the entries of ``c``."""

    piecewise_linear = True

    def __init__(self, c):
        self.c = np.array(c, dtype=np.float64).reshape(-1)
        self.dim = self.c.size
        self.param_count = self.dim

    @property
    def params(self):
        return self.c.copy()

    def with_params(self, params):
        return ConstantDrift(params)

    def eval_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        return np.broadcast_to(self.c, X.shape).copy()

    def pullback(self, X, t, cotangents):
        return np.asarray(cotangents, dtype=np.float64).sum(axis=0)

    def input_vjp(self, X, t, cotangents):
        return np.zeros_like(np.asarray(cotangents, dtype=np.float64))

    def input_jvp(self, X, t, tangents):
        return np.zeros_like(np.asarray(tangents, dtype=np.float64))


class LinearDrift(Drift):
    """``f(x, t) = rate * x`` with a single scalar parameter ``rate``.

    ``LinearDrift(-theta, d)`` is the Ornstein-Uhlenbeck drift.
    """

    piecewise_linear = True

    def __init__(self, rate: float, dim: int):
        self.rate = float(rate)
        self.dim = dim
        self.param_count = 1

    @property
    def params(self):
        return np.array([self.rate])

    def with_params(self, params):
        return LinearDrift(float(np.asarray(params).reshape(-1)[0]), self.dim)

    def eval_batch(self, X, t):
        return self.rate * np.asarray(X, dtype=np.float64)

    def pullback(self, X, t, cotangents):
        return np.array([np.sum(np.asarray(X) * cotangents)])

    def input_vjp(self, X, t, cotangents):
        return self.rate * np.asarray(cotangents, dtype=np.float64)

    def input_jvp(self, X, t, tangents):
        return self.rate * np.asarray(tangents, dtype=np.float64)


class FunctionDrift(Drift):
    """Wrap a batched callable ``fn(X, t) -> (M, d)`` with no parameters.

    ``jac(X, t) -> (M, d, d)`` is optional and enables the input products.
    """

    def __init__(self, fn: Callable, dim: int, jac: Callable | None = None):
        self.fn = fn
        self.dim = dim
        self.jac = jac

    def eval_batch(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), X.shape[:1])
        return np.asarray(self.fn(X, t), dtype=np.float64)

    def _jacobian(self, X, t):
        if self.jac is None:
            raise NotImplementedError("FunctionDrift built without a Jacobian")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), np.shape(X)[:1])
        return np.asarray(self.jac(np.asarray(X, dtype=np.float64), t))

    def input_vjp(self, X, t, cotangents):
        return np.einsum("mij,mi->mj", self._jacobian(X, t), cotangents)

    def input_jvp(self, X, t, tangents):
        return np.einsum("mij,mj->mi", self._jacobian(X, t), tangents)


def as_drift(field, dim: int | None = None) -> Drift:
    """Accept either a drift object or a batched callable."""
    if isinstance(field, Drift) or isinstance(field, DriftField):
        return field
    if dim is None:
        raise ValueError("dim is required to wrap a plain callable")
    return FunctionDrift(field, dim)
