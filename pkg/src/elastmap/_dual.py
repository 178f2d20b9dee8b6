"""Forward-mode dual numbers over numpy arrays or torch tensors.

``der`` may carry extra leading axes (one per tangent direction); the
arithmetic broadcasts them against ``val``.
"""
from __future__ import annotations

import numpy as np


def _log(x):
    return x.log() if hasattr(x, "log") else np.log(x)


class Dual:
    __slots__ = ("val", "der")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, val, der):
        self.val = val
        self.der = der

    @staticmethod
    def _split(other):
        if isinstance(other, Dual):
            return other.val, other.der
        return other, 0.0

    def __add__(self, other):
        v, d = self._split(other)
        return Dual(self.val + v, self.der + d)

    __radd__ = __add__

    def __sub__(self, other):
        v, d = self._split(other)
        return Dual(self.val - v, self.der - d)

    def __rsub__(self, other):
        v, d = self._split(other)
        return Dual(v - self.val, d - self.der)

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __mul__(self, other):
        v, d = self._split(other)
        return Dual(self.val * v, self.der * v + self.val * d)

    __rmul__ = __mul__

    def __truediv__(self, other):
        v, d = self._split(other)
        return Dual(self.val / v, (self.der * v - self.val * d) / (v * v))

    def __rtruediv__(self, other):
        v, d = self._split(other)
        return Dual(v / self.val, (d * self.val - v * self.der) / (self.val * self.val))

    def log(self):
        return Dual(_log(self.val), self.der / self.val)

    def clamp_min(self, floor):
        if hasattr(self.val, "clamp_min"):
            return Dual(self.val.clamp_min(floor), self.der * (self.val > floor))
        return Dual(np.maximum(self.val, floor), self.der * (self.val > floor))


def tangent_of(fn, args, direction):
    """Directional derivative of ``fn(*args)`` (tuple output) along ``direction``.

    ``direction`` has one entry per argument (array or 0.0).
    """
    duals = [Dual(a, np.broadcast_to(np.asarray(d, dtype=float), np.shape(a))) for a, d in zip(args, direction)]
    out = fn(*duals)
    shape = np.shape(args[0])
    return tuple(
        np.broadcast_to(o.der if isinstance(o, Dual) else 0.0, shape).astype(float) for o in out
    )
