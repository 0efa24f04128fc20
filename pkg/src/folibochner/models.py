"""Model geometries: flat products, Carnot groups, SU(2) and warped variants.

Group models are realised on exponential coordinates of the first kind,
where the left-invariant field generated by ``e_i`` reads

    X_i(x) = ad_x / (1 - exp(-ad_x)) e_i
           = (1 + ad_x / 2 + ad_x^2 / 12 - ad_x^4 / 720 + ...) e_i,

a finite sum for nilpotent algebras.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .connection import geometry_at
from .errors import BadStructureConstants, ModelError
from .expressions import Expression, as_expression
from .geometry import ModelSpec, build_frames, lie_bracket

JACOBI_TOL = 1e-12
CLASSIFY_TOL = 1e-8
DEPTH_CAP = 6

MODEL_KINDS = (
    "flat_product",
    "heisenberg",
    "carnot",
    "engel",
    "su2_round",
    "warped_heisenberg_vertical",
    "warped_heisenberg_horizontal",
)


@dataclass(frozen=True)
class CarnotStructure:
    """Graded nilpotent Lie algebra on an orthonormal basis.

    ``constants[k, i, j]`` is the ``e_k`` component of ``[e_i, e_j]``; the
    basis is ordered by layer, with ``dims[0]`` horizontal vectors first.
    """

    dims: tuple
    constants: np.ndarray

    def __post_init__(self):
        dims = tuple(int(x) for x in self.dims)
        c = np.asarray(self.constants, dtype=float)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "constants", c)
        d = sum(dims)
        if c.shape != (d, d, d):
            raise BadStructureConstants(f"structure constants must have shape {(d, d, d)}")
        if any(x < 1 for x in dims):
            raise BadStructureConstants("layer dimensions must be positive")
        self.validate()

    @property
    def dim(self) -> int:
        return sum(self.dims)

    @property
    def step(self) -> int:
        return len(self.dims)

    def layer_of(self, i: int) -> int:
        acc = 0
        for layer, size in enumerate(self.dims):
            acc += size
            if i < acc:
                return layer
        raise IndexError(i)

    def bracket(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.einsum("kij,...i,...j->...k", self.constants, a, b)

    def ad(self, x: np.ndarray) -> np.ndarray:
        """Matrix of ``ad_x`` (acting on column vectors)."""
        return np.einsum("kij,i->kj", self.constants, x)

    def validate(self) -> None:
        c = self.constants
        d = self.dim
        if np.max(np.abs(c + c.transpose(0, 2, 1)), initial=0.0) > JACOBI_TOL:
            raise BadStructureConstants("structure constants are not antisymmetric")
        # [[a,b],c] + [[b,c],a] + [[c,a],b] on basis triples
        cc = np.einsum("kij,lkm->lijm", c, c)
        jac = cc + cc.transpose(0, 2, 3, 1) + cc.transpose(0, 3, 1, 2)
        if np.max(np.abs(jac), initial=0.0) > JACOBI_TOL:
            raise BadStructureConstants("Jacobi identity fails")
        layers = [self.layer_of(i) for i in range(d)]
        s = self.step
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    if abs(c[k, i, j]) <= JACOBI_TOL:
                        continue
                    li, lj, lk = layers[i], layers[j], layers[k]
                    if min(li, lj) == 0:
                        if lk != max(li, lj) + 1 or max(li, lj) == s - 1:
                            raise BadStructureConstants(f"[e{i}, e{j}] leaves the grading")
                    elif lk < li + lj + 1:
                        raise BadStructureConstants(f"[e{i}, e{j}] leaves the grading")
        # V_{j+1} = [V_1, V_j]
        start = 0
        for j in range(s - 1):
            lo, hi = start, start + self.dims[j]
            nxt = slice(hi, hi + self.dims[j + 1])
            block = c[nxt][:, : self.dims[0], lo:hi].reshape(self.dims[j + 1], -1)
            if np.linalg.matrix_rank(block, tol=1e-10) < self.dims[j + 1]:
                raise BadStructureConstants(f"layer {j + 2} is not generated by the first layer")
            start = hi


def heisenberg_structure(k: int = 1) -> CarnotStructure:
    d = 2 * k + 1
    c = np.zeros((d, d, d))
    for i in range(k):
        c[2 * k, i, k + i] = 1.0
        c[2 * k, k + i, i] = -1.0
    return CarnotStructure((2 * k, 1), c)


def engel_structure() -> CarnotStructure:
    c = np.zeros((4, 4, 4))
    c[2, 0, 1], c[2, 1, 0] = 1.0, -1.0
    c[3, 0, 2], c[3, 2, 0] = 1.0, -1.0
    return CarnotStructure((2, 1, 1), c)


def _bernoulli_plus(count: int) -> list[Fraction]:
    """Coefficients of ``t / (1 - exp(-t))``."""
    b = [Fraction(1)]
    for mm in range(1, count):
        b.append(-sum(Fraction(math.comb(mm + 1, k)) * b[k] for k in range(mm)) / (mm + 1))
    return [bk * (-1) ** k / math.factorial(k) for k, bk in enumerate(b)]


def _expr_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = []
    for i in range(rows):
        row = []
        for j in range(cols):
            acc = Expression.const(0.0)
            for k in range(inner):
                if a[i][k].is_const(0.0) or b[k][j].is_const(0.0):
                    continue
                acc = acc + a[i][k] * b[k][j]
            row.append(acc)
        out.append(row)
    return out


def carnot_frame(s: CarnotStructure) -> list[list[Expression]]:
    """Rows ``X_i`` (chart components) of the left-invariant frame."""
    d = s.dim
    x = [Expression.var(i) for i in range(d)]
    ad = [[Expression.const(0.0) for _ in range(d)] for _ in range(d)]
    for k in range(d):
        for j in range(d):
            acc = Expression.const(0.0)
            for i in range(d):
                coef = s.constants[k, i, j]
                if coef != 0.0:
                    acc = acc + float(coef) * x[i]
            ad[k][j] = acc
    coeffs = _bernoulli_plus(s.step + 1)
    total = [[Expression.const(1.0 if i == j else 0.0) for j in range(d)] for i in range(d)]
    power = [row[:] for row in total]
    for k in range(1, s.step):
        power = _expr_matmul(ad, power)
        ck = float(coeffs[k])
        if ck == 0.0:
            continue
        total = [[total[i][j] + ck * power[i][j] if not power[i][j].is_const(0.0) else total[i][j]
                  for j in range(d)] for i in range(d)]
    # column j of ``total`` holds the components of X_j
    return [[total[k][j] for k in range(d)] for j in range(d)]


def _heisenberg_rows():
    return carnot_frame(heisenberg_structure(1))


def build_model(kind: str, params: Mapping | None = None) -> ModelSpec:
    params = dict(params or {})
    if kind == "flat_product":
        n, m = int(params.get("n", 2)), int(params.get("m", 1))
        d = n + m
        frame = [["1" if i == j else "0" for j in range(d)] for i in range(d)]
        return ModelSpec(f"flat_product({n},{m})", n, m, frame=frame, params={"kind": kind, "n": n, "m": m})
    if kind == "heisenberg":
        k = int(params.get("k", 1))
        s = heisenberg_structure(k)
        name = "heisenberg" if k == 1 else f"heisenberg({k})"
        return ModelSpec(name, 2 * k, 1, frame=carnot_frame(s), params={"kind": kind, "k": k})
    if kind == "engel":
        return ModelSpec("engel", 2, 2, frame=carnot_frame(engel_structure()), params={"kind": kind})
    if kind == "carnot":
        s = params.get("structure")
        if not isinstance(s, CarnotStructure):
            try:
                s = CarnotStructure(tuple(params["dims"]), np.asarray(params["constants"], dtype=float))
            except KeyError as exc:
                raise ModelError(f"carnot model needs {exc}") from None
        name = params.get("name", "carnot")
        meta = {"kind": kind, "dims": list(s.dims), "constants": s.constants.tolist()}
        return ModelSpec(name, s.dims[0], s.dim - s.dims[0], frame=carnot_frame(s), params=meta)
    if kind == "su2_round":
        return ModelSpec("su2_round", 2, 1, frame=su2_frame(), params={"kind": kind})
    if kind == "warped_heisenberg_vertical":
        phi = as_expression(params.get("phi", "x0"))
        rows = _heisenberg_rows()
        damp = Expression("exp", (-phi,))
        rows[2] = [r * damp for r in rows[2]]
        return ModelSpec(f"warped_heisenberg_vertical(phi={phi})", 2, 1, frame=rows,
                         params={"kind": kind, "phi": str(phi)})
    if kind == "warped_heisenberg_horizontal":
        psi = as_expression(params.get("psi", "x2"))
        rows = _heisenberg_rows()
        damp = Expression("exp", (-psi,))
        rows[0] = [r * damp for r in rows[0]]
        rows[1] = [r * damp for r in rows[1]]
        return ModelSpec(f"warped_heisenberg_horizontal(psi={psi})", 2, 1, frame=rows,
                         params={"kind": kind, "psi": str(psi)})
    raise ModelError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")


def su2_structure_constants() -> np.ndarray:
    """``[X, Y] = 2Z``, ``[Y, Z] = 2X``, ``[Z, X] = 2Y``."""
    c = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        c[k, i, j], c[k, j, i] = 2.0, -2.0
    return c


def su2_frame() -> list[list[Expression]]:
    """Left-invariant frame of SU(2) in exponential coordinates.

    With ``ad_x = 2 [x]_x`` and ``r = |x|`` the generating series sums to
    ``I + K + (1 - r cot r) / r^2 K^2`` where ``K = [x]_x``.
    """
    x = [Expression.var(i) for i in range(3)]
    r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
    r = Expression("sqrt", (r2,))
    q = (1 - r * Expression("cos", (r,)) / Expression("sin", (r,))) / r2
    zero = Expression.const(0.0)
    K = [[zero, -x[2], x[1]], [x[2], zero, -x[0]], [-x[1], x[0], zero]]
    K2 = _expr_matmul(K, K)
    M = [[Expression.const(1.0 if i == j else 0.0) + K[i][j] + q * K2[i][j] for j in range(3)]
         for i in range(3)]
    return [[M[k][j] for k in range(3)] for j in range(3)]


def load_model(ref) -> ModelSpec:
    """Resolve a built-in name (``"heisenberg"``, ``"flat_product(2,1)"``...) or a JSON path."""
    from pathlib import Path
    import json
    import re

    if isinstance(ref, ModelSpec):
        return ref
    if isinstance(ref, Mapping):
        return _from_mapping(ref)
    text = str(ref)
    if text.endswith(".json") or Path(text).exists():
        path = Path(text)
        if not path.exists():
            raise ModelError(f"model file not found: {text}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ModelError(f"model file {text} is not valid JSON: {exc}") from None
        return _from_mapping(data)
    m = re.fullmatch(r"(\w+)(?:\((.*)\))?", text.strip())
    if not m:
        raise ModelError(f"cannot parse model reference {text!r}")
    kind, args = m.group(1), m.group(2)
    params: dict = {}
    if args:
        for pos, piece in enumerate(a.strip() for a in args.split(",")):
            if "=" in piece:
                key, val = piece.split("=", 1)
                params[key.strip()] = val.strip()
            else:
                key = {"flat_product": ("n", "m"), "heisenberg": ("k",),
                       "warped_heisenberg_vertical": ("phi",),
                       "warped_heisenberg_horizontal": ("psi",)}.get(kind, ())
                if pos >= len(key):
                    raise ModelError(f"too many arguments for {kind}")
                params[key[pos]] = piece
    return build_model(kind, params)


def _from_mapping(data: Mapping) -> ModelSpec:
    if "kind" in data:
        extra = set(data) - {"kind", "params", "name"}
        if extra:
            raise ModelError(f"unknown model fields: {sorted(extra)}")
        return build_model(str(data["kind"]), data.get("params", {}))
    return ModelSpec.from_dict(data)


# classification ---------------------------------------------------------------------

@dataclass(frozen=True)
class ClassificationFlags:
    bundle_like: bool
    bundle_like_lie_sup: float
    bundle_like_torsion_sup: float
    totally_geodesic: bool
    totally_geodesic_lie_sup: float
    totally_geodesic_torsion_sup: float
    minimal: bool
    mean_curvature_sup: float
    bracket_generating_depth: int | None
    characterizations_agree: bool
    samples: int

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


def bracket_depth(spec: ModelSpec, point, cap: int = DEPTH_CAP, tol: float = 1e-9) -> int | None:
    """Smallest ``k`` such that brackets of length ``<= k`` of horizontal frame fields span ``T_pM``."""
    fr = build_frames(spec, point, order=max(cap, 3))
    d, n = spec.dim, spec.n
    level = [fr.X[i] for i in range(n)]
    span = [v.value for v in level]
    if np.linalg.matrix_rank(np.array(span), tol=tol) == d:
        return 1
    for depth in range(2, cap + 1):
        nxt = []
        for i in range(n):
            for v in level:
                if v.order < 1:
                    return None
                nxt.append(lie_bracket(fr.X[i], v))
        level = nxt
        span.extend(v.value for v in level)
        if np.linalg.matrix_rank(np.array(span), tol=tol) == d:
            return depth
    return None


def classify(spec: ModelSpec, sample_points: Iterable, tol: float = CLASSIFY_TOL) -> ClassificationFlags:
    pts = [tuple(float(x) for x in p) for p in sample_points]
    if len(pts) < 5:
        raise ValueError("classification needs at least 5 sample points")
    n, d = spec.n, spec.dim
    H, V = slice(0, n), slice(n, d)
    bl_lie = bl_tor = tg_lie = tg_tor = h_sup = 0.0
    depth = None
    for k, p in enumerate(pts):
        v = geometry_at(spec, p).values
        bl_lie = max(bl_lie, float(np.max(np.abs(v.lie[V, H, H]), initial=0.0)))
        bl_tor = max(bl_tor, float(np.max(np.abs(v.T[H, V, H]), initial=0.0)))
        tg_lie = max(tg_lie, float(np.max(np.abs(v.lie[H, V, V]), initial=0.0)))
        tg_tor = max(tg_tor, float(np.max(np.abs(v.T[H, V, V]), initial=0.0)))
        h_sup = max(h_sup, float(np.linalg.norm(v.H)))
        if k == 0:
            depth = bracket_depth(spec, p)
    agree = (bl_lie <= tol) == (bl_tor <= tol) and (tg_lie <= tol) == (tg_tor <= tol)
    return ClassificationFlags(
        bundle_like=bl_lie <= tol and bl_tor <= tol,
        bundle_like_lie_sup=bl_lie,
        bundle_like_torsion_sup=bl_tor,
        totally_geodesic=tg_lie <= tol and tg_tor <= tol,
        totally_geodesic_lie_sup=tg_lie,
        totally_geodesic_torsion_sup=tg_tor,
        minimal=h_sup <= tol,
        mean_curvature_sup=h_sup,
        bracket_generating_depth=depth,
        characterizations_agree=bool(agree),
        samples=len(pts),
    )


ACCEPTANCE_MODELS = (
    "flat_product(2,1)",
    "heisenberg",
    "engel",
    "warped_heisenberg_vertical(phi=x0)",
    "warped_heisenberg_horizontal(psi=x2)",
)


def carnot_table(s: CarnotStructure, form: str = "derived") -> np.ndarray:
    """``<nabla_{e_a} e_b, e_c>`` for left-invariant fields from structure constants.

    ``form="derived"`` evaluates Koszul's formula on each block:
    ``0`` on HH and VH, ``(ad_X Y - ad*_X Y)/2`` on HV, and the vertical
    part of ``(ad_X Y - ad*_Y X - ad*_X Y)/2`` on VV.  ``form="displayed"``
    uses ``ad_X Y / 2`` on HV and ``-(ad_X Y + ad*_Y X + ad*_X Y)/2`` on VV
    without projection.
    """
    c = s.constants
    d, n = s.dim, s.dims[0]
    ad = c.transpose(1, 2, 0)  # ad[a, b, k] = <[e_a, e_b], e_k>
    ad_star = c.transpose(1, 0, 2)  # ad_star[a, b, k] = <e_b, [e_a, e_k]>
    h = np.zeros(d)
    h[:n] = 1.0
    v = 1.0 - h
    out = np.zeros((d, d, d))
    H, V = slice(0, n), slice(n, d)
    if form == "derived":
        out[H, V] = (0.5 * (ad - ad_star) * v)[H, V]
        vv = 0.5 * (ad - ad_star.transpose(1, 0, 2) - ad_star) * v
        out[V, V] = vv[V, V]
    elif form == "displayed":
        out[H, V] = (0.5 * ad)[H, V]
        out[V, V] = (-0.5 * (ad + ad_star.transpose(1, 0, 2) + ad_star))[V, V]
    else:
        raise ValueError(f"unknown table form {form!r}")
    return out


def carnot_table_residuals(s: CarnotStructure, point=None) -> dict:
    """Engine connection and torsion on the left-invariant frame versus the table.

    ``derived`` and ``displayed`` are the max deviations of ``<nabla_{e_a} e_b, e_c>``
    from the two table forms; ``torsion`` compares with ``-[e_a, e_b]_V`` on ``H x H``.
    """
    spec = ModelSpec("carnot", s.dims[0], s.dim - s.dims[0], frame=carnot_frame(s), params={"kind": "carnot"})
    if point is None:
        point = np.linspace(-0.7, 0.9, s.dim)
    v = geometry_at(spec, tuple(float(x) for x in point)).values
    n = s.dims[0]
    vert = np.zeros(s.dim)
    vert[n:] = 1.0
    tor = -s.constants.transpose(1, 2, 0)[:n, :n] * vert
    return {
        "derived": float(np.abs(v.omega - carnot_table(s, "derived")).max()),
        "displayed": float(np.abs(v.omega - carnot_table(s, "displayed")).max()),
        "torsion": float(np.abs(v.T[:n, :n] - tor).max()),
    }
