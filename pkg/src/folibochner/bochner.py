"""Bochner identities and curvature-dimension inequalities at a point.

The left-hand sides (iterated horizontal Laplacians of squared gradients)
are computed by differentiating jet-valued scalar fields along the frame.
The right-hand sides are assembled from point values of the connection
tensors.  The two halves share only the frame and the connection
coefficients, so agreement is a genuine check of the identities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .connection import FrameGeometry, geometry_at
from .expressions import Expression, as_expression
from .geometry import ModelSpec
from .jets import DEFAULT_ORDER, Jet, contract
from .tensors import CDParams, _tensor_parts, frak_r_matrix

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class TestFunction:
    expr: Expression
    label: str = ""
    degree: int | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expression(self.expr))

    @classmethod
    def of(cls, f, label: str | None = None, degree: int | None = None) -> "TestFunction":
        if isinstance(f, TestFunction):
            return f
        e = as_expression(f)
        return cls(e, label or str(e), degree)


@dataclass
class IdentityResult:
    """Outcome of one identity (``residual``) or inequality (``slack``) check."""

    name: str
    point: tuple
    lhs: float
    rhs: float
    residual: float
    scale: float
    tol: float = DEFAULT_TOL
    kind: str = "identity"
    diagnostic: bool = False
    passed: bool = field(init=False)

    def __post_init__(self):
        self.point = tuple(float(x) for x in self.point)
        if self.kind == "identity":
            self.passed = bool(abs(self.residual) <= self.tol * max(self.scale, 1.0))
        else:
            self.passed = bool(self.residual >= -self.tol * max(self.scale, 1.0))

    @property
    def relative(self) -> float:
        return abs(self.residual) / max(self.scale, 1.0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["point"] = list(self.point)
        return out


def _geo(spec: ModelSpec, point, order: int) -> FrameGeometry:
    return geometry_at(spec, tuple(float(x) for x in point), order)


def laplacian_jet(geo: FrameGeometry, u: Jet) -> Jet:
    """``Delta_H u = sum_i X_i X_i u - sum_j b_j X_j u`` with ``b`` the frame drift."""
    n = geo.n
    Eu = geo.E(u)
    EEu = geo.E(Eu[:n])  # EEu[k, i] = E_k E_i u
    i = np.arange(n)
    second = EEu[i, i].sum(0)
    return second - contract("a,a->", geo.drift, Eu)


@dataclass
class PointCalculus:
    """All derivatives of ``f`` needed by the identities at one point."""

    geo: FrameGeometry
    f: Jet
    a: np.ndarray  # E_a f
    hess: np.ndarray  # Hess^nabla f(E_a, E_b)
    lap: float
    grad_lap: np.ndarray  # E_a Delta_H f
    u1: Jet  # |grad_H f|^2 / 2
    u2: Jet  # |grad_V f|^2 / 2
    half_lap_u1: float
    half_lap_u2: float
    grad_u1: np.ndarray
    grad_u2: np.ndarray
    Hf_grad: np.ndarray  # E_a (H f)

    @property
    def aH(self):
        out = self.a.copy()
        out[self.geo.n:] = 0.0
        return out

    @property
    def aV(self):
        out = self.a.copy()
        out[: self.geo.n] = 0.0
        return out


def point_calculus(spec: ModelSpec, f, point, order: int = DEFAULT_ORDER) -> PointCalculus:
    geo = _geo(spec, point, order)
    tf = TestFunction.of(f)
    fj = tf.expr.jet(geo.point, order)
    n = geo.n
    Ef = geo.E(fj)
    EEf = geo.E(Ef)
    a = Ef.value
    hess = EEf.value - np.einsum("abc,c->ab", geo.values.omega, a)
    lapf = laplacian_jet(geo, fj)
    u1 = 0.5 * contract("i,i->", Ef[:n], Ef[:n])
    u2 = 0.5 * contract("i,i->", Ef[n:], Ef[n:])
    Hf = contract("a,a->", geo.H, Ef)
    return PointCalculus(
        geo=geo, f=fj, a=a, hess=hess, lap=float(lapf.value), grad_lap=geo.E(lapf).value,
        u1=u1, u2=u2,
        half_lap_u1=float(laplacian_jet(geo, u1).value),
        half_lap_u2=float(laplacian_jet(geo, u2).value),
        grad_u1=geo.E(u1).value, grad_u2=geo.E(u2).value, Hf_grad=geo.E(Hf).value,
    )


def horizontal_laplacian(spec: ModelSpec, f, point, order: int = DEFAULT_ORDER) -> tuple[float, float]:
    """Frame-formula value and divergence-form oracle value of ``Delta_H f``."""
    geo = _geo(spec, point, order)
    fj = TestFunction.of(f).expr.jet(geo.point, order)
    frame_value = float(laplacian_jet(geo, fj).value)
    n = geo.n
    F = geo.frames.F
    Ef = contract("ak,k->a", F[:n], fj.grad())
    W = contract("i,ia->a", Ef, F[:n])
    flux = geo.frames.sqrt_det * W
    div = flux[0].diff(0)
    for k in range(1, geo.d):
        div = div + flux[k].diff(k)
    oracle = float((div / geo.frames.sqrt_det).value)
    return frame_value, oracle


def gamma2(spec: ModelSpec, f, point, order: int = DEFAULT_ORDER) -> tuple[float, float]:
    pc = point_calculus(spec, f, point, order)
    n = pc.geo.n
    g2h = pc.half_lap_u1 - float(pc.a[:n] @ pc.grad_lap[:n])
    g2v = pc.half_lap_u2 - float(pc.a[n:] @ pc.grad_lap[n:])
    return g2h, g2v


# helpers on point values ----------------------------------------------------------------

class _Ops:
    def __init__(self, geo: FrameGeometry):
        v = geo.values
        self.v = v
        self.n = geo.n
        self.d = geo.d
        self.T = v.T
        self.X = np.eye(self.d)[: self.n]

    def tor(self, a, b):
        return np.einsum("a,b,abc->c", a, b, self.T)

    def H_(self, u):
        out = np.array(u, dtype=float)
        out[self.n:] = 0.0
        return out

    def V_(self, u):
        out = np.array(u, dtype=float)
        out[: self.n] = 0.0
        return out

    def delta(self, u):
        return u @ self.v.delta_T

    def tor_pair(self, u, w):
        return sum(self.tor(u, x) @ self.tor(w, x) for x in self.X)

    def tau(self, u, w):
        return sum(self.tor(x, self.tor(x, u)) @ w for x in self.X)

    def jj(self, u, w):
        # <J_u X_i, E_g> = <u, Tor(X_i, E_g)>
        ju = np.einsum("c,igc->ig", u, self.T[: self.n])[:, : self.n]
        jw = np.einsum("c,igc->ig", w, self.T[: self.n])[:, : self.n]
        return float(np.sum(ju * jw))

    def sym_dH(self, u, w):
        return 0.5 * (u @ self.v.dH @ w + w @ self.v.dH @ u)

    def ric(self, u, w):
        return u @ self.v.ric @ w


def _result(name, point, lhs, terms, tol, kind="identity", diagnostic=False):
    rhs = float(sum(terms))
    scale = abs(lhs) + sum(abs(t) for t in terms)
    return IdentityResult(name, point, float(lhs), rhs, float(lhs - rhs), float(scale), tol, kind, diagnostic)


def horizontal_terms(pc: PointCalculus) -> list[float]:
    o = _Ops(pc.geo)
    n = o.n
    a, aH, aV, hs = pc.a, pc.aH, pc.aV, pc.hess
    Hv = o.v.H
    sym = 0.5 * (hs + hs.T)
    cross = 2.0 * sum(o.V_(hs[i]) @ o.tor(aH, o.X[i]) for i in range(n))
    return [
        float(aH @ pc.grad_lap),
        cross,
        float(np.sum(sym[:n, :n] ** 2)),
        -float(aV @ o.delta(aH)),
        float(o.ric(aH, aH)),
        -float(o.tor_pair(aH, aV)),
        0.25 * o.jj(aV, aV),
        float(o.sym_dH(aH, aH)),
        float(o.tor(Hv, aH) @ a),
        -float(o.tau(aH, aH)),
    ]


def vertical_terms(pc: PointCalculus, displayed: bool = False) -> list[float]:
    """Right-hand side of the vertical identity.

    The torsion-square term is ``-tau(grad_V f, grad_V f)``; with
    ``displayed=True`` it is replaced by ``-(Tor(grad_V f), Tor(grad_V f))_H``,
    which agrees only when ``Tor(H, V)`` is vertical (bundle-like metrics).
    """
    o = _Ops(pc.geo)
    n = o.n
    a, aH, aV, hs = pc.a, pc.aH, pc.aV, pc.hess
    Hv = o.v.H
    cross = 2.0 * sum(hs[i] @ o.tor(aV, o.X[i]) for i in range(n))
    return [
        float(aV @ pc.grad_lap),
        cross,
        float(np.sum(hs[:n, n:] ** 2)),
        -float(a @ o.delta(aV)),
        -float(o.tor_pair(aV, aV) if displayed else o.tau(aV, aV)),
        float(o.ric(aV, aH)),
        2.0 * float(o.sym_dH(aH, aV)),
        float(o.tor(Hv, aV) @ a),
        -float(o.tau(aV, aH)),
    ]


def full_gradient_terms(pc: PointCalculus, displayed: bool = False) -> list[float]:
    """Completed-square form with ``R(grad f, grad f)``.

    The sum of the two identities also carries ``1/4 (J, J)_H`` of the
    vertical gradient and the non-bundle-like correction
    ``(Tor(grad_V f), Tor(grad_V f))_H - tau(grad_V f, grad_V f)``;
    ``displayed=True`` drops both.
    """
    o = _Ops(pc.geo)
    n = o.n
    a, aV, hs = pc.a, pc.aV, pc.hess
    sym = 0.5 * (hs + hs.T)
    shift = np.array([[o.tor(aV, o.X[i])[j] for j in range(n)] for i in range(n)])
    square_h = float(np.sum((sym[:n, :n] + shift) ** 2))
    square_v = sum(float(np.sum((o.V_(hs[i]) - o.V_(o.tor(o.X[i], a))) ** 2)) for i in range(n))
    frak = float(a @ frak_r_matrix(o.v) @ a)
    terms = [float(a @ pc.grad_lap), square_h, square_v, frak]
    if not displayed:
        terms.append(0.25 * o.jj(aV, aV))
        terms.append(float(o.tor_pair(aV, aV) - o.tau(aV, aV)))
    return terms


def bochner_residuals(spec: ModelSpec, f, point, tol: float = DEFAULT_TOL,
                      order: int = DEFAULT_ORDER) -> list[IdentityResult]:
    """Horizontal, vertical and full-gradient identities (plus the displayed-form diagnostic)."""
    pc = point_calculus(spec, f, point, order)
    p = pc.geo.point
    full_lhs = pc.half_lap_u1 + pc.half_lap_u2
    return [
        _result("horizontal", p, pc.half_lap_u1, horizontal_terms(pc), tol),
        _result("vertical", p, pc.half_lap_u2, vertical_terms(pc), tol),
        _result("full_gradient", p, full_lhs, full_gradient_terms(pc), tol),
        _result("vertical_displayed", p, pc.half_lap_u2, vertical_terms(pc, displayed=True), tol,
                diagnostic=True),
        _result("full_gradient_displayed", p, full_lhs, full_gradient_terms(pc, displayed=True), tol,
                diagnostic=True),
    ]


def lemma_checks(spec: ModelSpec, f, point, tol: float = DEFAULT_TOL,
                 order: int = DEFAULT_ORDER) -> list[IdentityResult]:
    pc = point_calculus(spec, f, point, order)
    geo = pc.geo
    o = _Ops(geo)
    n = o.n
    p = geo.point
    a, aH, aV, hs = pc.a, pc.aH, pc.aV, pc.hess
    Hv = o.v.H
    sym = 0.5 * (hs + hs.T)
    out = []

    out.append(_result("symmetrized_hessian", p, float(np.sum(hs[:n, :n] ** 2)),
                       [float(np.sum(sym[:n, :n] ** 2)), 0.25 * o.jj(aV, aV)], tol))

    ring = float(np.trace(hs[:n, :n]))
    hf = float(Hv @ a)
    out.append(_result("split_laplacian", p, pc.lap, [ring, -hf], tol))

    def vec_result(name, lhs_vec, rhs_vecs):
        rhs_vec = sum(rhs_vecs)
        res = float(np.linalg.norm(lhs_vec - rhs_vec))
        scale = float(np.linalg.norm(lhs_vec) + sum(np.linalg.norm(r) for r in rhs_vecs))
        return IdentityResult(name, p, float(np.linalg.norm(lhs_vec)), float(np.linalg.norm(rhs_vec)),
                              res, scale, tol)

    # <J_a U, X_j> = <a, Tor(U, X_j)>
    J_aH = np.array([a @ o.tor(aH, o.X[j]) for j in range(n)])
    J_aV = np.array([a @ o.tor(aV, o.X[j]) for j in range(n)])
    out.append(vec_result("gradient_u1", pc.grad_u1[:n], [aH @ hs[:, :n], J_aH]))
    out.append(vec_result("gradient_u2", pc.grad_u2[:n], [aV @ hs[:, :n], J_aV]))

    lhs_h = float(Hv @ pc.grad_u1) - float(aH @ pc.Hf_grad)
    out.append(_result("mean_curvature_horizontal", p, lhs_h,
                       [-o.sym_dH(aH, aH), -float(o.tor(Hv, aH) @ a)], tol))
    lhs_v = float(Hv @ pc.grad_u2) - float(aV @ pc.Hf_grad)
    out.append(_result("mean_curvature_vertical", p, lhs_v,
                       [-2.0 * o.sym_dH(aV, aH), -float(o.tor(Hv, aV) @ a)], tol))

    out.append(mean_curvature_identity(geo, tol))
    return out


def mean_curvature_identity(geo: FrameGeometry, tol: float = DEFAULT_TOL) -> IdentityResult:
    """``H = sum_l J_{Z_l} Z_l`` (valid also when the vertical bundle is not integrable)."""
    T = geo.values.T
    ver = np.arange(geo.n, geo.d)
    # <J_Z Z, E_g> = <Z, Tor(Z, E_g)> = T[l, g, l]
    jz = T[ver, :, ver].sum(0) if len(ver) else np.zeros(geo.d)
    H = geo.values.H
    res = float(np.linalg.norm(H - jz))
    return IdentityResult("mean_curvature_J", geo.point, float(np.linalg.norm(H)),
                          float(np.linalg.norm(jz)), res,
                          float(np.linalg.norm(H) + np.linalg.norm(jz)), tol)


def cd_check(spec: ModelSpec, f, point, params: CDParams, nu: float = 1.0,
             tol: float = DEFAULT_TOL, order: int = DEFAULT_ORDER) -> list[IdentityResult]:
    """Slacks (LHS - RHS) of the three curvature-dimension inequalities."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    pc = point_calculus(spec, f, point, order)
    geo = pc.geo
    n = geo.n
    p = geo.point
    v = geo.values
    a, aH, aV = pc.a, pc.aH, pc.aV
    g2h = pc.half_lap_u1 - float(aH @ pc.grad_lap)
    g2v = pc.half_lap_u2 - float(aV @ pc.grad_lap)
    iota = _tensor_parts(v)["iota"]
    lap = pc.lap
    out = []

    o = _Ops(geo)
    ring = lap + float(v.H @ a)  # trace of the adapted Hessian
    base = abs(pc.half_lap_u1) + abs(float(aH @ pc.grad_lap))
    base_v = abs(pc.half_lap_u2) + abs(float(aV @ pc.grad_lap))

    def ineq(name, lhs, terms, weight_v=1.0, diagnostic=False):
        res = _result(name, p, lhs, terms, tol, kind="inequality", diagnostic=diagnostic)
        res.scale = float(res.scale + base + weight_v * base_v)
        res.__post_init__()
        return res

    frak = float(a @ frak_r_matrix(v) @ a)
    extra = [0.25 * o.jj(aV, aV), float(o.tor_pair(aV, aV) - o.tau(aV, aV))]
    out.append(ineq("bochner_inequality", g2h + g2v,
                    [(ring + float(iota @ aV)) ** 2 / n, frak] + extra))
    out.append(ineq("bochner_inequality_displayed", g2h + g2v,
                    [(lap + float(iota @ aV)) ** 2 / n, frak], diagnostic=True))

    lam = params.lam
    coef = 1.0 / n if math.isinf(lam) else lam / (n * (1.0 + lam))
    out.append(ineq("cd_with_R", g2h + g2v, [coef * lap**2, params.K * float(a @ a)]))

    rhs_g = [lap**2 / params.N,
             (params.rho1 - params.kappa / nu) * float(aH @ aH),
             (params.rho2 - params.rho3 * nu - params.rho4 * nu**2) * float(aV @ aV)]
    out.append(ineq(f"general_cd[nu={nu:g}]", g2h + nu * g2v, rhs_g, weight_v=nu))
    return out


def converse_slacks(spec: ModelSpec, point, params: CDParams, order: int = DEFAULT_ORDER) -> dict:
    """Pointwise slack of each tensorial constraint implied by the general CD inequality."""
    from .tensors import converse_forms, tensor_report

    forms = converse_forms(tensor_report(spec, point, order))

    def lo(mat):
        return float(np.linalg.eigvalsh(mat)[0]) if mat.size else 0.0

    def hi(mat):
        return float(np.linalg.eigvalsh(mat)[-1]) if mat.size else 0.0

    return {
        "rho1": lo(forms["rho1"]) - params.rho1,
        "kappa": params.kappa - hi(forms["kappa"]),
        "rho2": lo(forms["rho2"]) - params.rho2,
        "rho3": params.rho3 - hi(forms["rho3"]),
        "rho4": params.rho4 - hi(forms["rho4"]),
    }


def _derived_fields(spec: ModelSpec, f, point, order: int):
    geo = _geo(spec, point, order)
    fj = TestFunction.of(f).expr.jet(geo.point, order)
    Ef = geo.E(fj)
    n = geo.n
    return contract("i,i->", Ef[:n], Ef[:n]), laplacian_jet(geo, fj)


def finite_difference_check(spec: ModelSpec, f, point, step: float = 1e-4,
                            order: int = DEFAULT_ORDER) -> dict:
    """Jet gradients of ``|grad_H f|^2`` and ``Delta_H f`` against central differences.

    Returns the relative gap ``|jet - fd| / max(|jet|, 1)`` per field (max over
    chart directions).
    """
    x = np.asarray(point, dtype=float)
    jets = _derived_fields(spec, f, x, order)
    out = {"grad_h_sq": 0.0, "laplacian": 0.0}
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = step
        plus = _derived_fields(spec, f, x + e, order)
        minus = _derived_fields(spec, f, x - e, order)
        for idx, name in enumerate(("grad_h_sq", "laplacian")):
            fd = (float(plus[idx].value) - float(minus[idx].value)) / (2 * step)
            exact = float(jets[idx].diff(k).value)
            out[name] = max(out[name], abs(exact - fd) / max(abs(exact), 1.0))
    return out


def _horner(coeffs: dict, dim: int, var: int, degree: int) -> Expression:
    """Nested Horner form in ``x_var, x_{var+1}, ...`` of ``sum c_alpha x^alpha``."""
    if var == dim:
        return Expression.const(coeffs.get((), 0.0))
    out = None
    for k in range(degree, -1, -1):
        sub = {alpha[1:]: c for alpha, c in coeffs.items() if alpha and alpha[0] == k}
        if var == dim - 1:
            sub = {(): coeffs.get((k,), 0.0)}
        inner = _horner(sub, dim, var + 1, degree - k)
        out = inner if out is None else out * Expression.var(var) + inner
    return out


def random_polynomial(dim: int, degree: int = 4, seed: int = 0) -> Expression:
    """Dense polynomial of total degree ``<= degree`` with uniform ``[-1, 1]`` coefficients."""
    rng = np.random.default_rng(seed)
    monomials = [a for a in itertools.product(range(degree + 1), repeat=dim) if sum(a) <= degree]
    coeffs = dict(zip(monomials, rng.uniform(-1.0, 1.0, len(monomials))))
    return _horner(coeffs, dim, 0, degree)


CURATED_FUNCTIONS = ("x0", "x1", "x{last}", "x{last}^2", "x0^2", "x0*x{last}", "exp(x0)*sin(x1)")


def curated_functions(dim: int) -> list[TestFunction]:
    return [TestFunction.of(s.format(last=dim - 1)) for s in CURATED_FUNCTIONS]
