"""Forward-mode dual numbers over numpy arrays.

A ``Dual`` carries a value array of shape ``S`` and a partials array of
shape ``S + (m,)``, where ``m`` is the number of seed directions.  All
arithmetic broadcasts like numpy, so a scalar parameter seeded with an
m-vector of partials can flow through formulas evaluated at many points
at once.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "value",
    "partials",
    "seed",
    "sin",
    "cos",
    "sqrt",
    "arccos",
    "arctan2",
    "where",
]


class Dual:
    __slots__ = ("val", "eps")

    def __init__(self, val, eps):
        self.val = np.asarray(val, dtype=float)
        self.eps = np.asarray(eps, dtype=float)

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.eps + other.eps)
        return Dual(self.val + other, _match(self.eps, np.shape(self.val + other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.eps - other.eps)
        return Dual(self.val - other, _match(self.eps, np.shape(self.val - other)))

    def __rsub__(self, other):
        return Dual(other - self.val, _match(-self.eps, np.shape(other - self.val)))

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.eps * other.val[..., None] + other.eps * self.val[..., None],
            )
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.eps * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            val = self.val / other.val
            eps = (self.eps * other.val[..., None] - other.eps * self.val[..., None]) / (
                other.val**2
            )[..., None]
            return Dual(val, eps)
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.eps / other[..., None])

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        val = other / self.val
        eps = -self.eps * (other / self.val**2)[..., None]
        return Dual(val, eps)

    def __pow__(self, p):
        val = self.val**p
        eps = self.eps * (p * self.val ** (p - 1))[..., None]
        return Dual(val, eps)

    def __repr__(self):  # pragma: no cover
        return f"Dual(val={self.val!r}, eps={self.eps!r})"


def _match(eps, val_shape):
    """Broadcast a partials array against a value shape."""
    target = tuple(val_shape) + (eps.shape[-1],)
    return np.broadcast_to(eps, np.broadcast_shapes(eps.shape, target))


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def partials(x, m=None):
    if isinstance(x, Dual):
        return x.eps
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape + (m,))


def seed(val, direction, m):
    """Dual scalar seeded with a unit partial in slot ``direction``."""
    eps = np.zeros(m)
    eps[direction] = 1.0
    return Dual(val, eps)


# -- elementary functions ---------------------------------------------------


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), x.eps * np.cos(x.val)[..., None])
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -x.eps * np.sin(x.val)[..., None])
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        root = np.sqrt(x.val)
        denom = np.where(root > 0.0, 2.0 * root, np.inf)
        return Dual(root, x.eps / denom[..., None])
    return np.sqrt(x)


def arccos(x):
    if isinstance(x, Dual):
        v = np.clip(x.val, -1.0, 1.0)
        denom = np.sqrt(np.maximum(1.0 - v * v, 1e-300))
        return Dual(np.arccos(v), -x.eps / denom[..., None])
    return np.arccos(np.clip(x, -1.0, 1.0))


def arctan2(y, x):
    yd, xd = isinstance(y, Dual), isinstance(x, Dual)
    if not yd and not xd:
        return np.arctan2(y, x)
    yv, xv = value(y), value(x)
    val = np.arctan2(yv, xv)
    m = (y.eps if yd else x.eps).shape[-1]
    yeps = partials(y, m)
    xeps = partials(x, m)
    denom = (xv * xv + yv * yv)[..., None]
    return Dual(val, (yeps * xv[..., None] - xeps * yv[..., None]) / denom)


def where(cond, a, b):
    """Branch select preserving partials of the active branch."""
    ad, bd = isinstance(a, Dual), isinstance(b, Dual)
    if not ad and not bd:
        return np.where(cond, a, b)
    m = (a.eps if ad else b.eps).shape[-1]
    av, bv = value(a), value(b)
    val = np.where(cond, av, bv)
    aeps = _match(partials(a, m), val.shape)
    beps = _match(partials(b, m), val.shape)
    return Dual(val, np.where(np.asarray(cond)[..., None], aeps, beps))
