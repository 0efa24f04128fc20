"""Curvature-type tensors of the adapted connection and CD constant extraction.

Every bilinear form is returned as a ``(d, d)`` matrix on the adapted
orthonormal frame, ``M[a, b] = form(E_a, E_b)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .connection import GeometryValues, geometry_at
from .errors import EmptySampleSet, InfiniteLambdaWithNonzeroIota
from .geometry import ModelSpec
from .jets import DEFAULT_ORDER

IOTA_TOL = 1e-8


@dataclass(frozen=True)
class TensorReport:
    point: tuple
    n: int
    m: int
    ric: np.ndarray
    delta_T: np.ndarray  # delta_T[b, e] = <delta_H Tor(E_b), E_e>
    tor_pair: np.ndarray  # (Tor(E_a), Tor(E_b))_H
    tau: np.ndarray
    iota: np.ndarray
    jj: np.ndarray  # (J_{E_a}, J_{E_b})_H
    sym_dH: np.ndarray
    frak_r: np.ndarray
    H: np.ndarray
    tor_v_sq: np.ndarray  # sum_i <Tor(E_a, X_i)_V, Tor(E_b, X_i)_V>
    tor_h_sq: np.ndarray  # sum_i <Tor(E_a, X_i)_H, Tor(E_b, X_i)_H>
    tor_H: np.ndarray  # <Tor(H, E_a), E_b>

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        out["point"] = list(self.point)
        return out


def _tensor_parts(v: GeometryValues):
    n = v.n
    T = v.T
    d = T.shape[0]
    h = np.zeros(d)
    h[:n] = 1.0
    vm = 1.0 - h
    TX = T[:, :n, :]  # TX[a, i, e] = <Tor(E_a, X_i), E_e>
    tor_pair = np.einsum("aie,bie->ab", TX, TX)
    tor_v_sq = np.einsum("aie,bie,e->ab", TX, TX, vm)
    tor_h_sq = np.einsum("aie,bie,e->ab", TX, TX, h)
    tau = np.einsum("iax,ixb->ab", T[:n], T[:n])
    iota = np.einsum("aii->a", T[:, :n, :n])
    # <J_{E_a} X_i, E_g> = <E_a, Tor(X_i, E_g)> = T[i, g, a]
    jj = np.einsum("iga,igb,g->ab", T[:n], T[:n], h)
    sym_dH = 0.5 * (v.dH + v.dH.T)
    tor_H = np.einsum("c,cab->ab", v.H, T)
    return dict(tor_pair=tor_pair, tor_v_sq=tor_v_sq, tor_h_sq=tor_h_sq, tau=tau,
                iota=iota, jj=jj, sym_dH=sym_dH, tor_H=tor_H, h=h, vm=vm)


def frak_r_matrix(v: GeometryValues, parts=None) -> np.ndarray:
    """``R[a, b]`` assembled from the matrices of its seven constituents."""
    p = parts or _tensor_parts(v)
    h, vm = p["h"], p["vm"]
    return (-v.delta_T.T
            - 2.0 * p["tor_pair"] * vm[None, :]
            - p["tor_pair"] * h[None, :]
            - p["tau"] * h[None, :]
            + v.ric * h[None, :]
            + p["sym_dH"]
            + p["tor_H"])


def frak_r_form(v: GeometryValues, U: np.ndarray, W: np.ndarray) -> float:
    """``R(U, W)`` evaluated directly from vectors (independent of the matrix path)."""
    n, T = v.n, v.T
    UH, UV = U.copy(), U.copy()
    UH[n:] = 0.0
    UV[:n] = 0.0
    WH, WV = W.copy(), W.copy()
    WH[n:] = 0.0
    WV[:n] = 0.0

    def tor(a, b):
        return np.einsum("a,b,abc->c", a, b, T)

    X = np.eye(len(U))[:n]
    delta = np.einsum("b,be->e", W, v.delta_T)
    pair_v = sum(tor(U, x) @ tor(WV, x) for x in X)
    pair_h = sum(tor(U, x) @ tor(WH, x) for x in X)
    tau = sum(tor(x, tor(x, U)) @ WH for x in X)
    ric = U @ v.ric @ WH
    sym_dh = 0.5 * (U @ v.dH @ W + W @ v.dH @ U)
    return float(-U @ delta - 2.0 * pair_v - pair_h - tau + ric + sym_dh + tor(v.H, U) @ W)


def tensor_report(spec: ModelSpec, point, order: int = DEFAULT_ORDER) -> TensorReport:
    geo = geometry_at(spec, tuple(float(x) for x in point), order)
    v = geo.values
    p = _tensor_parts(v)
    return TensorReport(
        point=geo.point, n=v.n, m=v.m, ric=v.ric, delta_T=v.delta_T, tor_pair=p["tor_pair"],
        tau=p["tau"], iota=p["iota"], jj=p["jj"], sym_dH=p["sym_dH"], frak_r=frak_r_matrix(v, p),
        H=v.H, tor_v_sq=p["tor_v_sq"], tor_h_sq=p["tor_h_sq"], tor_H=p["tor_H"],
    )


@dataclass
class CDParams:
    """Constants of the curvature-dimension inequalities."""

    rho1: float = 0.0
    rho2: float = 0.0
    rho3: float = 0.0
    rho4: float = 0.0
    kappa: float = 0.0
    N: float = 1.0
    K: float = 0.0
    lam: float = math.inf
    provenance: str = "user-supplied"
    per_sample: dict = field(default_factory=dict, repr=False)

    @property
    def N_lambda(self) -> float:
        """Dimension ``n (1 + lam) / lam`` paired with ``K`` (``n`` when ``lam`` is infinite)."""
        n = self.per_sample.get("n", self.N)
        return float(n) if math.isinf(self.lam) else n * (1.0 + self.lam) / self.lam

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("rho1", "rho2", "rho3", "rho4", "kappa", "N", "K", "provenance")}
        out["lam"] = "inf" if math.isinf(self.lam) else self.lam
        out["per_sample"] = self.per_sample
        return out


def _sym(a):
    return 0.5 * (a + a.T)


def _eig_min(a) -> float:
    return float(np.linalg.eigvalsh(_sym(a))[0]) if a.size else 0.0


def _eig_max(a) -> float:
    return float(np.linalg.eigvalsh(_sym(a))[-1]) if a.size else 0.0


def converse_forms(r: TensorReport) -> dict:
    """The five symmetric forms whose extremal eigenvalues give the CD constants."""
    n = r.n
    hh = slice(0, n)
    vv = slice(n, n + r.m)
    rho3_form = r.tor_v_sq + r.delta_T + r.tor_pair + r.tor_H
    return {
        "rho1": _sym(r.ric + r.sym_dH)[hh, hh],
        "kappa": _sym(r.tor_pair)[hh, hh],
        "rho2": _sym(0.25 * r.jj)[vv, vv],
        "rho3": _sym(rho3_form)[vv, vv],
        "rho4": _sym(r.tor_h_sq)[vv, vv],
    }


def cd_constants_extract(spec: ModelSpec, sample_points: Iterable, order: int = DEFAULT_ORDER) -> CDParams:
    pts = [tuple(float(x) for x in p) for p in sample_points]
    if not pts:
        raise EmptySampleSet("need at least one sample point")
    per = {"rho1": [], "kappa": [], "rho2": [], "rho3": [], "rho4": []}
    iota_sup = 0.0
    for p in pts:
        r = tensor_report(spec, p, order)
        forms = converse_forms(r)
        per["rho1"].append(_eig_min(forms["rho1"]))
        per["kappa"].append(_eig_max(forms["kappa"]))
        per["rho2"].append(_eig_min(forms["rho2"]))
        per["rho3"].append(_eig_max(forms["rho3"]))
        per["rho4"].append(_eig_max(forms["rho4"]))
        iota_sup = max(iota_sup, float(np.max(np.abs(r.iota))) if r.iota.size else 0.0)
    lam = math.inf if iota_sup <= IOTA_TOL else 1.0
    K = frak_R_lower_bound(spec, pts, lam, order)
    params = CDParams(
        rho1=min(per["rho1"]),
        kappa=max(0.0, max(per["kappa"])),
        rho2=max(0.0, min(per["rho2"])),
        rho3=max(per["rho3"]),
        rho4=max(0.0, max(per["rho4"])),
        N=float(spec.n),
        K=K,
        lam=lam,
        provenance="extracted",
        per_sample={"n": spec.n, "iota_sup": iota_sup, **per},
    )
    return params


def frak_R_lower_bound(spec: ModelSpec, sample_points: Iterable, lam: float,
                       order: int = DEFAULT_ORDER) -> float:
    """``min`` over samples of the smallest eigenvalue of ``sym(R) - lam iota (x) iota``."""
    pts = [tuple(float(x) for x in p) for p in sample_points]
    if not pts:
        raise EmptySampleSet("need at least one sample point")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    best = math.inf
    for p in pts:
        r = tensor_report(spec, p, order)
        form = _sym(r.frak_r)
        if math.isinf(lam):
            if np.max(np.abs(r.iota)) > IOTA_TOL:
                raise InfiniteLambdaWithNonzeroIota(
                    f"iota = {np.max(np.abs(r.iota)):.3e} at {p}; lambda = inf is not admissible")
        else:
            form = form - lam * np.outer(r.iota, r.iota)
        best = min(best, _eig_min(form))
    return float(best)
