"""Levi-Civita and adapted connections in an orthonormal adapted frame.

All quantities are expressed in the frame ``E_alpha`` produced by
:func:`geometry.build_frames` (``E_0..E_{n-1}`` horizontal, the rest
vertical).  Three-index arrays follow the convention

    gamma[a, b, c] = <D_{E_a} E_b, E_c>        (Levi-Civita)
    omega[a, b, c] = <nabla_{E_a} E_b, E_c>    (adapted connection)
    T[a, b, c]     = <Tor(E_a, E_b), E_c>
    c[a, b, k]     = <[E_a, E_b], E_k>

and every array is a :class:`Jet`, so derivatives along the frame are
available for curvature and torsion-divergence terms.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import OrderError
from .geometry import FrameData, ModelSpec, build_frames
from .jets import DEFAULT_ORDER, Jet, contract


def block_masks(n: int, m: int):
    """Indicator vectors of the horizontal and vertical frame slots."""
    d = n + m
    h = np.zeros(d)
    h[:n] = 1.0
    return h, 1.0 - h


def _outer3(a, b, c):
    return a[:, None, None] * b[None, :, None] * c[None, None, :]


class FrameGeometry:
    """Connection data of a model at one point, computed once and cached."""

    def __init__(self, spec: ModelSpec, point, order: int = DEFAULT_ORDER, route: str = "auto"):
        self.spec = spec
        self.frames: FrameData = build_frames(spec, point, order, route)
        fr = self.frames
        self.n, self.m, self.d = fr.n, fr.m, fr.dim
        self.point = fr.point
        self.h, self.v = block_masks(self.n, self.m)
        F, theta, g = fr.F, fr.coframe, fr.g

        # E_a(F[b, k])
        self.EF = contract("ak,kbc->abc", F, F.grad())
        bracket = self.EF - self.EF.transpose(1, 0, 2)
        self.bracket = bracket
        self.c = contract("abk,kc->abc", bracket, theta)

        dg = g.grad()  # dg[c, a, b] = d_c g_ab
        lower = 0.5 * (dg.transpose(2, 0, 1) + dg.transpose(1, 2, 0) - dg)  # [c, a, b]
        self.christoffel = contract("kc,cab->kab", fr.ginv, lower)
        frame_lower = contract("ai,ijk->ajk", F, lower.transpose(1, 2, 0))  # [a, b_chart, c_chart]
        frame_lower = contract("bj,ajk->abk", F, frame_lower)
        frame_lower = contract("ck,abk->abc", F, frame_lower)
        self.gamma = contract("abk,kc->abc", self.EF, theta) + frame_lower

        # (L_{E_a} g)(E_b, E_c) from chart Lie derivatives of g
        dF = F.grad()  # dF[k, a, c] = d_k F[a, c]
        lie = contract("ac,cij->aij", F, dg)
        gdF = contract("cj,iac->aij", g, dF)
        lie = lie + gdF + gdF.transpose(0, 2, 1)
        lie = contract("bi,aij->abj", F, lie)
        self.lie = contract("cj,abj->abc", F, lie)

        h, v = self.h, self.v
        self.C = 0.5 * (self.lie * (_outer3(v, h, h) + _outer3(h, v, v)))
        mixed = self.c + self.C
        self.omega = (self.gamma * (_outer3(h, h, h) + _outer3(v, v, v))
                      + mixed * (_outer3(v, h, h) + _outer3(h, v, v)))
        self.T = self.omega - self.omega.transpose(1, 0, 2) - self.c

        hor, ver = np.arange(self.n), np.arange(self.n, self.d)
        self.H = self.gamma[ver, ver].sum(0) * h if self.m else Jet.zeros(F.space, (self.d,), F.order - 1)
        self.drift = self.gamma[hor, hor].sum(0) * h + self.H

    # frame derivatives -----------------------------------------------------------
    def E(self, u: Jet) -> Jet:
        """Frame derivatives ``E_a u``, stacked on a new leading axis."""
        if u.order < 1:
            raise OrderError("not enough jet order left to differentiate")
        return contract("ak,k...->a...", self.frames.F, u.grad())

    # derived tensors (jets of order ``order - 2``) --------------------------------
    @functools.cached_property
    def R(self) -> Jet:
        """``R[a, b, c, e] = <Riem(E_a, E_b) E_c, E_e>``."""
        w, c = self.omega, self.c
        Ew = self.E(w)
        out = Ew - Ew.transpose(1, 0, 2, 3)
        out = out + contract("bcd,ade->abce", w, w) - contract("acd,bde->abce", w, w)
        return out - contract("abd,dce->abce", c, w)

    @functools.cached_property
    def ric(self) -> Jet:
        """``Ric_H(E_a, E_b) = sum_i <Riem(E_a, X_i) X_i, E_b>``."""
        i = np.arange(self.n)
        return self.R[:, i, i, :].sum(1)

    @functools.cached_property
    def dT(self) -> Jet:
        """``dT[a, b, c, e] = <(nabla_{E_a} Tor)(E_b, E_c), E_e>``."""
        T, w = self.T, self.omega
        out = self.E(T)
        out = out + contract("bcx,axe->abce", T, w)
        out = out - contract("abx,xce->abce", w, T)
        return out - contract("acx,bxe->abce", w, T)

    @functools.cached_property
    def delta_T(self) -> Jet:
        """``delta_T[b, e] = <delta_H Tor(E_b), E_e>``."""
        i = np.arange(self.n)
        return self.dT[i, i].sum(0)

    @functools.cached_property
    def dH(self) -> Jet:
        """``dH[a, b] = <nabla_{E_a} H, E_b>``."""
        return self.E(self.H) + contract("c,acb->ab", self.H, self.omega)

    # point values ------------------------------------------------------------------
    @functools.cached_property
    def values(self) -> "GeometryValues":
        return GeometryValues(
            n=self.n, m=self.m,
            c=self.c.value, gamma=self.gamma.value, lie=self.lie.value, C=self.C.value,
            omega=self.omega.value, T=self.T.value, R=self.R.value, ric=self.ric.value,
            dT=self.dT.value, delta_T=self.delta_T.value, H=self.H.value, dH=self.dH.value,
        )

    # vector-level API on chart-component fields ---------------------------------------
    def to_frame(self, A) -> Jet | np.ndarray:
        """Frame components ``<A, E_a>`` of a chart vector (jet or array)."""
        theta = self.frames.coframe
        return contract("k,ka->a", A, theta if isinstance(A, Jet) else theta.value)

    def to_chart(self, a) -> Jet | np.ndarray:
        F = self.frames.F
        return contract("a,ak->k", a, F if isinstance(a, Jet) else F.value)

    def covariant(self, A: Jet, B: Jet) -> Jet:
        """``nabla_A B`` for chart-component jet fields, in chart components."""
        a, b = self.to_frame(A), self.to_frame(B)
        db = contract("k,kb->b", A, b.grad())
        return self.to_chart(db + contract("c,cb->b", b, contract("a,acb->cb", a, self.omega)))

    def levi_civita_covariant(self, A: Jet, B: Jet) -> Jet:
        a, b = self.to_frame(A), self.to_frame(B)
        db = contract("k,kb->b", A, b.grad())
        return self.to_chart(db + contract("c,cb->b", b, contract("a,acb->cb", a, self.gamma)))

    def riem(self, A: Jet, B: Jet, W: Jet) -> Jet:
        """``Riem(A, B) W`` through nested covariant derivatives of jet fields."""
        from .geometry import lie_bracket

        first = self.covariant(A, self.covariant(B, W))
        second = self.covariant(B, self.covariant(A, W))
        return first - second - self.covariant(lie_bracket(A, B), W)


@dataclass(frozen=True)
class GeometryValues:
    """Point values of the frame tensors of :class:`FrameGeometry`."""

    n: int
    m: int
    c: np.ndarray
    gamma: np.ndarray
    lie: np.ndarray
    C: np.ndarray
    omega: np.ndarray
    T: np.ndarray
    R: np.ndarray
    ric: np.ndarray
    dT: np.ndarray
    delta_T: np.ndarray
    H: np.ndarray
    dH: np.ndarray


@functools.lru_cache(maxsize=512)
def geometry_at(spec: ModelSpec, point: tuple, order: int = DEFAULT_ORDER) -> FrameGeometry:
    """Cached :class:`FrameGeometry` keyed by ``(spec, point, order)``."""
    return FrameGeometry(spec, point, order)


def _geo(spec, point, order=DEFAULT_ORDER) -> FrameGeometry:
    return geometry_at(spec, tuple(float(p) for p in point), order)


# public point-level API ------------------------------------------------------------

def levi_civita(spec: ModelSpec, point, order: int = DEFAULT_ORDER) -> Jet:
    """Chart Christoffel symbols ``Gamma^k_ab`` as jets (shape ``(k, a, b)``)."""
    return _geo(spec, point, order).christoffel


def c_tensor(spec: ModelSpec, point, X, Y):
    """``C_X Y`` in chart components."""
    geo = _geo(spec, point)
    x, y = geo.to_frame(X), geo.to_frame(Y)
    C = geo.C if isinstance(x, Jet) or isinstance(y, Jet) else geo.C.value
    return geo.to_chart(contract("b,bc->c", y, contract("a,abc->bc", x, C)))


def adapted_connect(spec: ModelSpec, point, A: Jet, B: Jet) -> Jet:
    """``nabla_A B`` for jet fields in chart components."""
    return _geo(spec, point).covariant(A, B)


def torsion(spec: ModelSpec, point, A, B):
    """``Tor(A, B)`` in chart components (tensorial, so point values suffice)."""
    geo = _geo(spec, point)
    a, b = _value(geo.to_frame(A)), _value(geo.to_frame(B))
    return geo.to_chart(np.einsum("a,b,abc->c", a, b, geo.values.T))


def j_map(spec: ModelSpec, point, Z, X):
    """``J_Z X`` in chart components, defined by ``<J_Z X, Y> = <Z, Tor(X, Y)>``."""
    geo = _geo(spec, point)
    z, x = _value(geo.to_frame(Z)), _value(geo.to_frame(X))
    return geo.to_chart(np.einsum("c,a,abc->b", z, x, geo.values.T))


def mean_curvature(spec: ModelSpec, point, order: int = DEFAULT_ORDER) -> Jet:
    """``H = sum_l (D_{Z_l} Z_l)_H`` in chart components, as a jet."""
    geo = _geo(spec, point, order)
    return geo.to_chart(geo.H)


def riem_adapted(spec: ModelSpec, point, A: Jet, B: Jet, W: Jet) -> np.ndarray:
    """``Riem(A, B) W`` value in chart components."""
    out = _geo(spec, point).riem(A, B, W)
    if out.order < 0:
        raise OrderError("insufficient jet depth for curvature")
    return out.value


def _value(u):
    return u.value if isinstance(u, Jet) else np.asarray(u, dtype=float)


# axioms -----------------------------------------------------------------------------------

def _random_field(geo: FrameGeometry, rng, mask=None) -> Jet:
    """Chart components of ``sum_a phi_a E_a`` with random quadratic coefficients ``phi_a``."""
    from .jets import variables

    d = geo.d
    xs = variables(geo.point, geo.frames.F.order)
    dx = xs - np.asarray(geo.point)
    lin = rng.uniform(-1, 1, size=(d, d))
    quad = rng.uniform(-1, 1, size=(d, d, d))
    coef = rng.uniform(-1, 1, size=d) + contract("ak,k->a", lin, dx)
    coef = coef + contract("akl,kl->a", quad, contract("k,l->kl", dx, dx))
    if mask is not None:
        coef = coef * mask
    return geo.to_chart(coef)


def connection_axioms(spec: ModelSpec, point, seed: int = 0) -> dict:
    """Max residual of each defining property of the adapted connection at ``point``."""
    from .geometry import lie_bracket

    geo = _geo(spec, point)
    v = geo.values
    n, d = geo.n, geo.d
    h, vm = geo.h, geo.v
    H, V = slice(0, n), slice(n, d)
    T, w, g = v.T, v.omega, geo.frames.g
    rng = np.random.default_rng(seed)
    out = {}

    A, B, C = (_random_field(geo, rng) for _ in range(3))
    inner = contract("a,a->", B, contract("ab,b->a", g, C))
    lhs = contract("k,k->", A, inner.grad())
    nab, nac = geo.covariant(A, B), geo.covariant(A, C)
    rhs = (contract("a,a->", nab, contract("ab,b->a", g, C))
           + contract("a,a->", B, contract("ab,b->a", g, nac)))
    out["metric_compatibility"] = max(abs(float((lhs - rhs).value)),
                                      float(np.max(np.abs(w + w.transpose(0, 2, 1)))))

    Xf = _random_field(geo, rng, h)
    Zf = _random_field(geo, rng, vm)
    split = max(float(np.max(np.abs(geo.to_frame(geo.covariant(A, Xf)).value * vm))),
                float(np.max(np.abs(geo.to_frame(geo.covariant(A, Zf)).value * h))))
    out["splitting_parallelism"] = max(split, float(np.max(np.abs(w[:, H, V]), initial=0.0)),
                                       float(np.max(np.abs(w[:, V, H]), initial=0.0)))

    sym = 0.0
    if geo.m:
        sym = max(float(np.max(np.abs(T[H, V, H] - T[H, V, H].transpose(2, 1, 0)))),
                  float(np.max(np.abs(T[V, H, V] - T[V, H, V].transpose(2, 1, 0)))),
                  float(np.max(np.abs(T[H, H, H]))))
    out["torsion_symmetries"] = sym

    # Tor(A, B) against nabla_A B - nabla_B A - [A, B]
    tor_chart = geo.covariant(A, B) - geo.covariant(B, A) - lie_bracket(A, B)
    a, b = geo.to_frame(A).value, geo.to_frame(B).value
    tor_direct = np.einsum("a,b,abc->c", a, b, T)
    out["torsion_definition"] = float(np.max(np.abs(geo.to_frame(tor_chart.value) - tor_direct)))

    # nabla = D + Tor/2 - J_A B/2 - J_B A/2, with (J_A B)_c = <A, Tor(B, E_c)>
    lc = v.gamma + 0.5 * T - 0.5 * T.transpose(2, 0, 1) - 0.5 * T.transpose(0, 2, 1)
    lc_frame = float(np.max(np.abs(w - lc)))
    lc_fields = geo.covariant(A, B) - geo.levi_civita_covariant(A, B)
    j_ab = np.einsum("a,b,bca->c", a, b, T)
    j_ba = np.einsum("a,b,acb->c", a, b, T)
    expect = 0.5 * tor_direct - 0.5 * j_ab - 0.5 * j_ba
    out["levi_civita_relation"] = max(lc_frame,
                                      float(np.max(np.abs(geo.to_frame(lc_fields.value) - expect))))

    Cv = v.C
    out["c_tensor_pattern"] = max(float(np.max(np.abs(Cv[V, V, :]), initial=0.0)),
                                  float(np.max(np.abs(Cv[H, H, :]), initial=0.0)),
                                  float(np.max(np.abs(Cv[V, H, V]), initial=0.0)),
                                  float(np.max(np.abs(Cv[H, V, H]), initial=0.0)))
    out["mean_curvature_horizontal"] = float(np.max(np.abs(v.H * vm)))
    return out
