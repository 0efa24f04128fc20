"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` stores the Taylor coefficients of one or more scalar
quantities around a fixed base point, up to a total degree ``order``.
Coefficients live on the last array axis in graded-lexicographic layout;
all leading axes are free, so a vector field is a ``Jet`` of shape ``(d,)``
and a matrix field one of shape ``(d, d)``.

Invariant kept by every operation: coefficients of total degree larger than
``jet.order`` are zero.  Products truncate at the smaller operand order and
differentiation lowers the order by one, so the ``order`` attribute always
reports how many derivative levels are exact.
"""

from __future__ import annotations

import functools
import itertools
import math
from typing import Sequence

import numpy as np

from .errors import DomainError, OrderError

DEFAULT_ORDER = 4
MIN_ORDER = 3


class JetSpace:
    """Multi-index tables for a fixed ``(dim, order)`` pair.

    Instances are built once per pair through :func:`jet_space` and never
    mutated afterwards, so they are safe to share between threads.
    """

    def __init__(self, dim: int, order: int):
        if dim < 1:
            raise ValueError("jet dimension must be positive")
        if order < 0:
            raise ValueError("jet order must be non-negative")
        self.dim = dim
        self.order = order

        multi = []
        for deg in range(order + 1):
            for combo in itertools.combinations_with_replacement(range(dim), deg):
                alpha = [0] * dim
                for v in combo:
                    alpha[v] += 1
                multi.append(tuple(alpha))
        self.multi = np.array(multi, dtype=np.int64).reshape(len(multi), dim)
        self.size = len(multi)
        self.index = {alpha: k for k, alpha in enumerate(multi)}
        self.degree = self.multi.sum(axis=1)
        self.factorial = np.array(
            [math.prod(math.factorial(a) for a in alpha) for alpha in multi], dtype=float
        )
        self.masks = [(self.degree <= o).astype(float) for o in range(order + 1)]

        pairs = []
        for i, a in enumerate(multi):
            for j, b in enumerate(multi):
                if self.degree[i] + self.degree[j] <= order:
                    k = self.index[tuple(x + y for x, y in zip(a, b))]
                    pairs.append((k, i, j))
        pairs.sort()
        pk = np.array([p[0] for p in pairs])
        self.pair_i = np.array([p[1] for p in pairs])
        self.pair_j = np.array([p[2] for p in pairs])
        self.starts = np.searchsorted(pk, np.arange(self.size))

        # d/dx_a maps coefficient of alpha + e_a (times alpha_a + 1) to alpha
        self.dsrc, self.ddst, self.dfac = [], [], []
        for a in range(dim):
            src, dst, fac = [], [], []
            for k, alpha in enumerate(multi):
                if self.degree[k] < order:
                    up = list(alpha)
                    up[a] += 1
                    src.append(self.index[tuple(up)])
                    dst.append(k)
                    fac.append(up[a])
            self.dsrc.append(np.array(src, dtype=np.int64))
            self.ddst.append(np.array(dst, dtype=np.int64))
            self.dfac.append(np.array(fac, dtype=float))

    def __repr__(self):
        return f"JetSpace(dim={self.dim}, order={self.order})"


@functools.lru_cache(maxsize=None)
def jet_space(dim: int, order: int = DEFAULT_ORDER) -> JetSpace:
    return JetSpace(dim, order)


def _as_tuple(key):
    return key if isinstance(key, tuple) else (key,)


class Jet:
    """Array of truncated Taylor expansions sharing one :class:`JetSpace`."""

    __slots__ = ("space", "coeffs", "order")
    __array_priority__ = 1000

    def __init__(self, space: JetSpace, coeffs, order: int | None = None):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1:] != (space.size,):
            raise ValueError(f"coefficient axis must have length {space.size}")
        self.space = space
        self.coeffs = coeffs
        self.order = space.order if order is None else int(order)

    # construction ----------------------------------------------------------
    @classmethod
    def constant(cls, space: JetSpace, value, order: int | None = None) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros(value.shape + (space.size,))
        c[..., 0] = value
        return cls(space, c, order)

    @classmethod
    def zeros(cls, space: JetSpace, shape=(), order: int | None = None) -> "Jet":
        return cls(space, np.zeros(tuple(shape) + (space.size,)), order)

    # array protocol --------------------------------------------------------
    @property
    def shape(self):
        return self.coeffs.shape[:-1]

    @property
    def ndim(self):
        return self.coeffs.ndim - 1

    @property
    def dim(self):
        return self.space.dim

    @property
    def value(self):
        """Values at the base point (plain ndarray, or float for scalars)."""
        v = self.coeffs[..., 0]
        return float(v) if v.ndim == 0 else v.copy()

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, key):
        key = _as_tuple(key)
        return Jet(self.space, self.coeffs[key + (slice(None),)], self.order)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def _axis(self, axis):
        if axis is None:
            return tuple(range(self.ndim))
        if isinstance(axis, int):
            axis = (axis,)
        return tuple(a % self.ndim for a in axis)

    def sum(self, axis=None) -> "Jet":
        return Jet(self.space, self.coeffs.sum(axis=self._axis(axis)), self.order)

    def transpose(self, *axes) -> "Jet":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Jet(self.space, self.coeffs.transpose(tuple(axes) + (self.ndim,)), self.order)

    @property
    def T(self):
        return self.transpose()

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Jet(self.space, self.coeffs.reshape(tuple(shape) + (self.space.size,)), self.order)

    def expand(self, axis: int) -> "Jet":
        """Insert a length-one leading axis (``np.expand_dims`` analogue)."""
        if axis < 0:
            axis += self.ndim + 1
        return Jet(self.space, np.expand_dims(self.coeffs, axis), self.order)

    def with_order(self, order: int) -> "Jet":
        order = min(order, self.order)
        return Jet(self.space, self.coeffs * self.space.masks[order], order)

    def copy(self) -> "Jet":
        return Jet(self.space, self.coeffs.copy(), self.order)

    # arithmetic ------------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, Jet):
            if other.space is not self.space:
                raise ValueError("jets from different spaces cannot be combined")
            return other
        return Jet.constant(self.space, other)

    def __add__(self, other):
        if isinstance(other, Jet):
            o = self._lift(other)
            order = min(self.order, o.order)
            c = self.coeffs + o.coeffs
            if order < max(self.order, o.order):
                c = c * self.space.masks[order]
            return Jet(self.space, c, order)
        other = np.asarray(other, dtype=float)
        shape = np.broadcast_shapes(self.shape, other.shape)
        c = np.broadcast_to(self.coeffs, shape + (self.space.size,)).copy()
        c[..., 0] += other
        return Jet(self.space, c, self.order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coeffs, self.order)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(self.space, self.coeffs * other[..., None], self.order)
        o = self._lift(other)
        sp = self.space
        order = min(self.order, o.order)
        prod = self.coeffs[..., sp.pair_i] * o.coeffs[..., sp.pair_j]
        c = np.add.reduceat(prod, sp.starts, axis=-1)
        if order < sp.order:
            c = c * sp.masks[order]
        return Jet(sp, c, order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = np.asarray(other, dtype=float)
        if np.any(other == 0):
            raise DomainError("division by zero")
        return Jet(self.space, self.coeffs / other[..., None], self.order)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, exponent):
        if isinstance(exponent, Jet):
            if np.all(exponent.coeffs[..., 1:] == 0):
                return self ** exponent.coeffs[..., 0]
            return (exponent * self.log()).exp()
        e = np.asarray(exponent, dtype=float)
        if e.ndim == 0 and float(e).is_integer():
            n = int(e)
            if n == 0:
                return Jet.constant(self.space, np.ones(self.shape), self.order)
            base = self if n > 0 else self.reciprocal()
            return _int_power(base, abs(n))
        return self.power(e)

    def __rpow__(self, base):
        base = np.asarray(base, dtype=float)
        if np.any(base <= 0):
            raise DomainError("non-positive base with jet exponent")
        return (self * np.log(base)).exp()

    # calculus --------------------------------------------------------------
    def diff(self, var: int) -> "Jet":
        """Partial derivative along chart variable ``var``; lowers the order."""
        if self.order < 1:
            raise OrderError("cannot differentiate an order-0 jet")
        sp = self.space
        c = np.zeros_like(self.coeffs)
        c[..., sp.ddst[var]] = self.coeffs[..., sp.dsrc[var]] * sp.dfac[var]
        return Jet(sp, c, self.order - 1)

    def grad(self) -> "Jet":
        """All first partials, stacked on a new leading axis of length ``dim``."""
        if self.order < 1:
            raise OrderError("cannot differentiate an order-0 jet")
        sp = self.space
        c = np.zeros((sp.dim,) + self.coeffs.shape)
        for a in range(sp.dim):
            c[a][..., sp.ddst[a]] = self.coeffs[..., sp.dsrc[a]] * sp.dfac[a]
        return Jet(sp, c, self.order - 1)

    def partial(self, alpha: Sequence[int]):
        """Mixed partial derivative value at the base point."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.space.dim:
            raise ValueError("multi-index length must equal the jet dimension")
        if sum(alpha) > self.order:
            raise OrderError(f"|alpha| = {sum(alpha)} exceeds jet order {self.order}")
        k = self.space.index[alpha]
        v = self.coeffs[..., k] * self.space.factorial[k]
        return float(v) if v.ndim == 0 else v

    # elementary functions -----------------------------------------------------
    def compose(self, taylor) -> "Jet":
        """Evaluate sum_k taylor[k] * (self - value)^k.

        ``taylor[k]`` must broadcast against ``self.shape`` and holds the k-th
        Taylor coefficient of the outer function at the base value.
        """
        sp = self.space
        h = self.copy()
        h.coeffs[..., 0] = 0.0
        out = Jet.constant(sp, np.broadcast_to(taylor[0], self.shape), self.order)
        power = None
        for k in range(1, self.order + 1):
            power = h if power is None else power * h
            out = out + power * taylor[k]
        return out

    def reciprocal(self) -> "Jet":
        a0 = self.coeffs[..., 0]
        if np.any(a0 == 0):
            raise DomainError("division by zero")
        inv = 1.0 / a0
        return self.compose([(-1.0) ** k * inv ** (k + 1) for k in range(self.order + 1)])

    def power(self, r) -> "Jet":
        r = np.asarray(r, dtype=float)
        a0 = self.coeffs[..., 0]
        if np.any(a0 < 0):
            raise DomainError("real power of a negative number")
        if np.any(a0 == 0) and self.order > 0:
            raise DomainError("real power at zero is not differentiable")
        taylor, binom = [], np.ones_like(r)
        for k in range(self.order + 1):
            taylor.append(binom * a0 ** (r - k))
            binom = binom * (r - k) / (k + 1)
        return self.compose(taylor)

    def sqrt(self) -> "Jet":
        a0 = self.coeffs[..., 0]
        if np.any(a0 < 0):
            raise DomainError("sqrt of a negative number")
        if np.any(a0 == 0) and self.order > 0:
            raise DomainError("sqrt at zero is not differentiable")
        return self.power(0.5)

    def exp(self) -> "Jet":
        e = np.exp(self.coeffs[..., 0])
        return self.compose([e / math.factorial(k) for k in range(self.order + 1)])

    def log(self) -> "Jet":
        a0 = self.coeffs[..., 0]
        if np.any(a0 <= 0):
            raise DomainError("log of a non-positive number")
        taylor = [np.log(a0)]
        for k in range(1, self.order + 1):
            taylor.append((-1.0) ** (k + 1) / (k * a0**k))
        return self.compose(taylor)

    def sin(self) -> "Jet":
        a0 = self.coeffs[..., 0]
        cyc = [np.sin(a0), np.cos(a0), -np.sin(a0), -np.cos(a0)]
        return self.compose([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def cos(self) -> "Jet":
        a0 = self.coeffs[..., 0]
        cyc = [np.cos(a0), -np.sin(a0), -np.cos(a0), np.sin(a0)]
        return self.compose([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def __repr__(self):
        return f"Jet(shape={self.shape}, dim={self.space.dim}, order={self.order})"


def _int_power(base: Jet, n: int) -> Jet:
    result = None
    sq = base
    while n:
        if n & 1:
            result = sq if result is None else result * sq
        n >>= 1
        if n:
            sq = sq * sq
    return result


def variables(point: Sequence[float], order: int = DEFAULT_ORDER) -> Jet:
    """Coordinate jets ``x_a`` at ``point`` as a Jet of shape ``(dim,)``."""
    point = np.asarray(point, dtype=float)
    sp = jet_space(len(point), order)
    c = np.zeros((sp.dim, sp.size))
    c[:, 0] = point
    for a in range(sp.dim if order >= 1 else 0):
        e = [0] * sp.dim
        e[a] = 1
        c[a, sp.index[tuple(e)]] = 1.0
    return Jet(sp, c)


def extract_partial(jet: Jet, alpha: Sequence[int]):
    """Mixed partial derivative ``d^alpha`` of ``jet`` at its base point."""
    return jet.partial(alpha)


def stack(jets: Sequence, axis: int = 0, space: JetSpace | None = None) -> Jet:
    """Stack jets (or plain numbers) into a new leading axis."""
    if space is None:
        space = next(j.space for j in jets if isinstance(j, Jet))
    lifted = [j if isinstance(j, Jet) else Jet.constant(space, j) for j in jets]
    order = min(j.order for j in lifted)
    shape = np.broadcast_shapes(*(j.shape for j in lifted))
    arrs = [np.broadcast_to(j.coeffs, shape + (space.size,)) for j in lifted]
    if axis < 0:
        axis += len(shape) + 1
    c = np.stack(arrs, axis=axis)
    if order < space.order:
        c = c * space.masks[order]
    return Jet(space, c, order)


def matmul(a, b) -> Jet:
    """Matrix product over the last two leading axes; operands may be ndarrays."""
    if isinstance(a, Jet) and isinstance(b, Jet):
        return (a.expand(-1) * b.expand(-3)).sum(-2)
    if isinstance(a, Jet):
        b = np.asarray(b, dtype=float)
        c = np.einsum("...ijn,...jk->...ikn", a.coeffs, b)
        return Jet(a.space, c, a.order)
    a = np.asarray(a, dtype=float)
    c = np.einsum("...ij,...jkn->...ikn", a, b.coeffs)
    return Jet(b.space, c, b.order)


def inverse(a: Jet) -> Jet:
    """Inverse of a square jet matrix by the nilpotent Neumann series."""
    a0 = a.coeffs[..., 0]
    inv0 = np.linalg.inv(a0)
    tail = a.copy()
    tail.coeffs[..., 0] = 0.0
    m = matmul(inv0, tail)
    out = Jet.constant(a.space, inv0, a.order)
    term = out
    for _ in range(a.order):
        term = -matmul(m, term)
        out = out + term
    return out


def logdet(a: Jet) -> Jet:
    """``log det a`` for a jet matrix with positive determinant at the base."""
    a0 = a.coeffs[..., 0]
    sign, ld = np.linalg.slogdet(a0)
    if np.any(sign <= 0):
        raise DomainError("determinant is not positive at the base point")
    tail = a.copy()
    tail.coeffs[..., 0] = 0.0
    m = matmul(np.linalg.inv(a0), tail)
    out = Jet.constant(a.space, ld, a.order)
    power = m
    for k in range(1, a.order + 1):
        tr = Jet(a.space, np.trace(power.coeffs, axis1=-3, axis2=-2), power.order)
        out = out + tr * ((-1.0) ** (k + 1) / k)
        if k < a.order:
            power = matmul(power, m)
    return out


def contract(subscripts: str, a, b):
    """Two-operand ``einsum`` over leading axes with jet multiplication.

    ``subscripts`` uses numpy notation for the leading (non-coefficient) axes
    only, e.g. ``"ij,jk->ik"``.  Either operand may be a plain array.
    """
    lhs, out = subscripts.split("->")
    sa, sb = lhs.split(",")
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return np.einsum(subscripts, np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if not isinstance(a, Jet):
        c = np.einsum(f"{sa},{sb}z->{out}z", np.asarray(a, dtype=float), b.coeffs)
        return Jet(b.space, c, b.order)
    if not isinstance(b, Jet):
        c = np.einsum(f"{sa}z,{sb}->{out}z", a.coeffs, np.asarray(b, dtype=float))
        return Jet(a.space, c, a.order)
    sp = a.space
    if b.space is not sp:
        raise ValueError("jets from different spaces cannot be combined")
    order = min(a.order, b.order)
    prod = np.einsum(f"{sa}z,{sb}z->{out}z", a.coeffs[..., sp.pair_i], b.coeffs[..., sp.pair_j])
    c = np.add.reduceat(prod, sp.starts, axis=-1)
    if order < sp.order:
        c = c * sp.masks[order]
    return Jet(sp, c, order)
