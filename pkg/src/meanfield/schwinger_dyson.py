"""Tree/loop splitting of multiple commutators and the truncated loop expansion.

G^{(k,l,m)} is built recursively on the symmetric (p+k-l-m)-sector:

    tree  : i (s-1) [W_{t_k}, G^{(k-1,l,m)}]_1
    loop  : i binom(s,2) [W_{t_k}, G^{(k-1,l-1,m)}]_2
    field : i s [V_{t_k}, G^{(k-1,l,m-1)}]_1          (potential mode only)

with s = p+k-l-m the particle number of the result and G^{(0,0,0)} = a_t.
Without potential mode V is folded into the one-body part of the free
evolution and m = 0 throughout.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

from .errors import BudgetExceeded
from .fock_core import (ModeSpace, QuantizationParams, SectorOperator, build_hamiltonian,
                        contract_matrices, embed_matrix, quantize, sector_dim, symmetric_to_full,
                        tensor_isometry)

DENSE_BUDGET = 4000


@dataclass(frozen=True)
class LoopTermRequest:
    k: int
    l: int
    times: tuple[float, ...]
    t: float
    m: int = 0

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(x) for x in self.times))
        if self.k < 0 or self.m < 0:
            raise ValueError("k and m must be nonnegative")
        if len(self.times) != self.k:
            raise ValueError(f"need {self.k} intermediate times, got {len(self.times)}")


@dataclass(frozen=True)
class ExpansionOrder:
    K: int
    L: int | None = None
    quad_order: int = 16

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.L is None:
            object.__setattr__(self, "L", self.K + 1)
        if not 1 <= self.L <= self.K + 1:
            raise ValueError(f"L must lie in [1, K+1], got L={self.L}")
        if self.quad_order < 2:
            raise ValueError("quad_order must be at least 2")


@dataclass(frozen=True)
class RadiusReport:
    bounded_threshold: float | None
    coulomb_radius: float | None
    smallness: float | None
    above_threshold: bool = False
    tail_estimate: float | None = None
    term_norms: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "bounded_threshold": self.bounded_threshold,
            "coulomb_radius": self.coulomb_radius,
            "smallness": self.smallness,
            "above_threshold": self.above_threshold,
            "tail_estimate": self.tail_estimate,
        }


def radius(nu: float, w_norm: float | None = None, kappa: float | None = None,
           t: float | None = None) -> RadiusReport:
    """Convergence thresholds 1/(8 nu ||w||) and 1/(128 pi kappa^2 nu^2).

    ``smallness`` is t divided by the bounded threshold when ||w|| is given,
    otherwise sqrt(t / rho).
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    if w_norm is None and kappa is None:
        raise ValueError("give the interaction norm, the Coulomb coupling, or both")
    bounded = coulomb = small = None
    if w_norm is not None:
        if not w_norm > 0:
            raise ValueError("interaction norm must be positive")
        bounded = 1 / (8 * nu * w_norm)
    if kappa is not None:
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        coulomb = 1 / (128 * math.pi * kappa ** 2 * nu ** 2)
    if t is not None:
        small = abs(t) / bounded if bounded is not None else math.sqrt(abs(t) / coulomb)
    return RadiusReport(bounded, coulomb, small, above_threshold=small is not None and small >= 1)


# ---------------------------------------------------------------------------
# free evolution


class FreeEvolution:
    """Gamma(e^{ith}) on symmetric sectors, from cached eigendecompositions."""

    def __init__(self, h: np.ndarray, M: int):
        self.h = np.asarray(h, dtype=complex)
        self.M = M
        self._eig = {}

    def _decomp(self, p: int):
        if p not in self._eig:
            H0 = p * embed_matrix(self.h, self.M, 1, 1, p - 1) if p else np.zeros((1, 1))
            self._eig[p] = np.linalg.eigh(H0)
        return self._eig[p]

    def unitary(self, p: int, t: float) -> np.ndarray:
        lam, E = self._decomp(p)
        return (E * np.exp(1j * t * lam)) @ E.conj().T

    def conjugate(self, mat: np.ndarray, q: int, p: int, t: float) -> np.ndarray:
        """Gamma_q(e^{ith}) mat Gamma_p(e^{-ith}) for mat: Sym^p -> Sym^q."""
        if t == 0:
            return np.asarray(mat, dtype=complex)
        lq, Eq = self._decomp(q)
        lp, Ep = self._decomp(p)
        inner = Eq.conj().T @ mat @ Ep
        phase = np.exp(1j * t * (lq[:, None] - lp[None, :]))
        return Eq @ (phase * inner) @ Ep.conj().T


def free_evolve(a: SectorOperator, t: float, ms: ModeSpace,
                include_potential: bool = True) -> SectorOperator:
    """a_t = Gamma(e^{ith}) a Gamma(e^{-ith}) on the p-sector."""
    fe = FreeEvolution(ms.one_body(include_potential), ms.M)
    return SectorOperator(fe.conjugate(a.mat, a.p, a.p, t), a.p, a.M)


# ---------------------------------------------------------------------------
# recursion


class _Vertices:
    """Free-evolved W and V at arbitrary times plus their sector embeddings."""

    def __init__(self, ms: ModeSpace, with_potential: bool):
        self.ms = ms
        self.M = ms.M
        self.with_potential = with_potential and ms.V is not None
        self.fe = FreeEvolution(ms.one_body(include_potential=not with_potential), ms.M)

    def W(self, tau):
        return self.fe.conjugate(self.ms.W, 2, 2, tau)

    def V(self, tau):
        return self.fe.conjugate(self.ms.V, 1, 1, tau)


def _step(prev: dict, Wt, Vt, p: int, j: int, M: int, n: int | None) -> dict:
    """Level j of the recursion from level j-1 (dicts keyed by (l, m))."""
    out = {}
    embedded = {}

    def emb(mat, one, s):
        key = (one, s)
        if key not in embedded:
            embedded[key] = embed_matrix(mat, M, one, one, s - one)
        return embedded[key]

    max_m = j if Vt is not None else 0
    for m in range(max_m + 1):
        for l in range(j - m + 1):
            s = p + j - l - m
            if n is not None and s > n:
                continue
            acc = None
            src = prev.get((l, m))
            if src is not None and s - 1 >= 1:
                wg = contract_matrices(Wt, 2, 2, src, s - 1, s - 1, 1, M)
                gw = contract_matrices(src, s - 1, s - 1, Wt, 2, 2, 1, M)
                acc = 1j * (s - 1) * (wg - gw)
            src = prev.get((l - 1, m))
            if src is not None and s >= 2:
                We = emb(Wt, 2, s)
                term = 1j * math.comb(s, 2) * (We @ src - src @ We)
                acc = term if acc is None else acc + term
            if Vt is not None:
                src = prev.get((l, m - 1))
                if src is not None:
                    Ve = emb(Vt, 1, s)
                    term = 1j * s * (Ve @ src - src @ Ve)
                    acc = term if acc is None else acc + term
            if acc is not None:
                out[(l, m)] = acc
    return out


def g_term(a: SectorOperator, req: LoopTermRequest, ms: ModeSpace, n: int | None = None,
           with_potential: bool = False) -> SectorOperator:
    """Unintegrated G^{(k,l,m)}_{t, t_1..t_k}(a) on the (p+k-l-m)-sector.

    Vanishing cases (l or m out of range, or more than n particles when n is
    given) return the zero operator.
    """
    if req.m and not with_potential:
        raise ValueError("m > 0 requires with_potential=True")
    s = a.p + req.k - req.l - req.m
    if req.l < 0 or req.l > req.k - req.m or (n is not None and s > n):
        return SectorOperator.zero(max(s, 0), a.M)
    verts = _Vertices(ms, with_potential)
    level = {(0, 0): verts.fe.conjugate(a.mat, a.p, a.p, req.t)}
    for j, tau in enumerate(req.times, start=1):
        Vt = verts.V(tau) if verts.with_potential else None
        level = _step(level, verts.W(tau), Vt, a.p, j, a.M, n)
    mat = level.get((req.l, req.m))
    if mat is None:
        return SectorOperator.zero(s, a.M)
    return SectorOperator(mat, s, a.M)


# ---------------------------------------------------------------------------
# time-ordered integration


def _simplex_nodes(k: int, t: float, quad_order: int):
    x, w = legendre.leggauss(quad_order)
    x01, w01 = (x + 1) / 2, w / 2
    # t_1 on [0, t], then t_j on [0, t_{j-1}]
    points = [((), 1.0, t)]
    for _ in range(k):
        nxt = []
        for tup, wt, top in points:
            for xi, wi in zip(x01, w01):
                tj = top * xi
                nxt.append((tup + (tj,), wt * wi * top, tj))
        points = nxt
    return [(tup, wt) for tup, wt, _ in points]


def simplex_integrate(k: int, integrand: Callable, t: float, quad_order: int = 16):
    """Integral of integrand(t_1..t_k) over the simplex t >= t_1 >= ... >= t_k >= 0.

    This is the ordering produced by iterating the Duhamel formula: the
    outermost commutator carries the earliest time.  Nested Gauss-Legendre
    with t_1 on [0, t] and t_j on [0, t_{j-1}].
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return integrand(())
    total = None
    for tup, wt in _simplex_nodes(k, t, quad_order):
        val = integrand(tup) * wt
        total = val if total is None else total + val
    return total


def collocation_rule(t: float, quad_order: int):
    """Gauss-Legendre nodes on [0, t], their weights and the tail-integral matrix.

    Q[i, j] integrates the j-th Lagrange basis polynomial from node i to t.
    """
    x, w = legendre.leggauss(quad_order)
    n = quad_order
    # Lagrange coefficients in the Legendre basis are exact via the quadrature
    P = legendre.legvander(x, n - 1)  # P[j, c] = P_c(x_j)
    coeffs = (P * w[:, None]).T * ((2 * np.arange(n) + 1) / 2)[:, None]  # coeffs[c, j]
    integ = legendre.legint(coeffs, lbnd=-1, axis=0)
    head = legendre.legval(x, integ).T  # head[i, j] = int_{-1}^{x_i} L_j
    Q = w[None, :] - head
    return t * (x + 1) / 2, t * w / 2, t * Q / 2


def time_ordered_levels(initial: dict, step: Callable, t: float, K: int,
                        quad_order: int = 16) -> list[dict]:
    """Values F_j(0) of F_j(u) = int_u^t step(tau, F_{j-1}(tau), j) dtau, j = 0..K.

    F_0 is constant.  Unrolled, F_j(0) is the integral over
    t >= t_1 >= ... >= t_j >= 0 with the j-th step applied at the earliest
    time t_j.  Intermediate levels are held at Gauss-Legendre nodes on
    [0, t]; the tail integrals are exact for polynomial integrands of degree
    < quad_order, and the cost is linear in K.
    """
    nodes, weights, Q = collocation_rule(t, quad_order)
    results = [initial]
    current = [initial] * len(nodes)
    for j in range(1, K + 1):
        values = [step(tau, cur, j) for tau, cur in zip(nodes, current)]
        keys = sorted({key for v in values for key in v})
        stacked = {}
        for key in keys:
            ref = next(v[key] for v in values if key in v)
            stacked[key] = np.stack([v.get(key, np.zeros_like(ref)) for v in values])
        results.append({key: np.tensordot(weights, arr, axes=1) for key, arr in stacked.items()})
        if j < K:
            current = [{key: np.tensordot(Q[i], arr, axes=1) for key, arr in stacked.items()}
                       for i in range(len(nodes))]
    return results


def integrated_terms(a: SectorOperator, ms: ModeSpace, t: float, K: int, n: int | None = None,
                     quad_order: int = 16, with_potential: bool = False) -> dict:
    """G^{(k,l,m)}_t(a) for all k <= K, as {(k, l, m): SectorOperator}."""
    verts = _Vertices(ms, with_potential)
    a_t = verts.fe.conjugate(a.mat, a.p, a.p, t)

    def step(tau, prev, j):
        Vt = verts.V(tau) if verts.with_potential else None
        return _step(prev, verts.W(tau), Vt, a.p, j, a.M, n)

    levels = time_ordered_levels({(0, 0): a_t}, step, t, K, quad_order)
    out = {}
    for k, level in enumerate(levels):
        for (l, m), mat in level.items():
            out[(k, l, m)] = SectorOperator(mat, a.p + k - l - m, a.M)
    return out


# ---------------------------------------------------------------------------
# exact evolution and the truncated expansion


def _budget(M: int, n: int):
    d = sector_dim(M, n)
    if d > DENSE_BUDGET:
        raise BudgetExceeded(f"sector dimension {d} exceeds the dense budget {DENSE_BUDGET}")


def heisenberg_exact(a: SectorOperator, q: QuantizationParams, ms: ModeSpace,
                     t: float) -> SectorOperator:
    """e^{itH_N} quantize(a) e^{-itH_N} on the n-sector."""
    _budget(a.M, q.n)
    H = build_hamiltonian(ms, q)
    lam, E = np.linalg.eigh(H.mat)
    U = (E * np.exp(-1j * t * lam)) @ E.conj().T
    A = quantize(a, q).mat
    return SectorOperator(U.conj().T @ A @ U, q.n, a.M)


def evolved_state(state: np.ndarray, q: QuantizationParams, ms: ModeSpace, t: float) -> np.ndarray:
    """e^{-itH_N} state on the n-sector."""
    _budget(ms.M, q.n)
    lam, E = np.linalg.eigh(build_hamiltonian(ms, q).mat)
    return E @ (np.exp(-1j * t * lam) * (E.conj().T @ state))


def loop_expansion(a: SectorOperator, q: QuantizationParams, ms: ModeSpace, t: float,
                   order: ExpansionOrder, kappa: float | None = None,
                   with_potential: bool = False) -> tuple[SectorOperator, RadiusReport]:
    """sum_{k<=K} sum_{l<=min(k, L-1)} N^{-l} quantize(G^{(k,l)}_t) on the n-sector."""
    _budget(a.M, q.n)
    terms = integrated_terms(a, ms, t, order.K, n=q.n, quad_order=order.quad_order,
                             with_potential=with_potential)
    approx = SectorOperator.zero(q.n, a.M)
    grouped = {}
    for (k, l, m), G in sorted(terms.items()):
        if l > order.L - 1:
            continue
        contrib = q.N ** (-l) * quantize(G, q)
        grouped[(k, l)] = grouped[(k, l)] + contrib if (k, l) in grouped else contrib
        approx = approx + contrib
    norms = {key: op.norm() for key, op in grouped.items()}

    w_norm = ms.w_norm + (2 * np.linalg.norm(ms.V, 2) if with_potential and ms.V is not None else 0)
    if w_norm > 0:
        base = radius(q.nu, w_norm=w_norm, kappa=kappa, t=t)
        x = base.smallness
        if x < 1:
            tail = x ** (order.K + 1) / (1 - x) * (2 * q.nu) ** a.p * a.norm()
        else:
            tail = math.inf
    else:
        base = RadiusReport(math.inf, None if kappa is None else radius(q.nu, kappa=kappa).coulomb_radius, 0.0)
        tail = 0.0
    report = RadiusReport(base.bounded_threshold, base.coulomb_radius, base.smallness,
                          above_threshold=base.above_threshold, tail_estimate=tail, term_norms=norms)
    if report.above_threshold:
        warnings.warn(f"t={t} is beyond the bounded convergence threshold "
                      f"{report.bounded_threshold:.4g}; the tail estimate does not apply",
                      RuntimeWarning, stacklevel=2)
    return approx, report


def expansion_report(a: SectorOperator, q: QuantizationParams, ms: ModeSpace, t: float,
                     order: ExpansionOrder, kappa: float | None = None) -> dict:
    """JSON-ready summary of a truncated expansion against exact evolution."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        approx, rep = loop_expansion(a, q, ms, t, order, kappa)
    exact = heisenberg_exact(a, q, ms, t)
    return {
        "K": order.K, "L": order.L, "N": q.N, "n": q.n, "t": t,
        "thresholds": rep.to_json(),
        "per_(k,l)_norms": {f"{k},{l}": v for (k, l), v in sorted(rep.term_norms.items())},
        "error_vs_exact": (approx - exact).norm(),
    }


# ---------------------------------------------------------------------------
# unrolled elementary terms (full tensor space)


def _slot_pair(op_full: np.ndarray, M: int, n: int, i: int, j: int) -> np.ndarray:
    T = op_full.reshape(M, M, M, M)
    eye = np.eye(M)
    idx_out = list(range(n))
    idx_in = list(range(n, 2 * n))
    args = [T, [idx_out[i], idx_out[j], idx_in[i], idx_in[j]]]
    for s in range(n):
        if s not in (i, j):
            args += [eye, [idx_out[s], idx_in[s]]]
    out = np.einsum(*args, idx_out + idx_in)
    return out.reshape(M ** n, M ** n)


def _slot_one(op: np.ndarray, M: int, n: int, i: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(M ** i), op), np.eye(M ** (n - i - 1)))


def elementary_terms(a: SectorOperator, req: LoopTermRequest, ms: ModeSpace,
                     with_potential: bool = False) -> list[tuple[int, np.ndarray]]:
    """Unroll the recursion into signed tensor-space products.

    Each entry (sign, X) is a product of single-slot-pair interactions and a
    on (C^M)^{(x)s}; g_term equals i^k times P+ (sum sign X) P+.
    Intended for small sizes only.
    """
    M, p = a.M, a.p
    verts = _Vertices(ms, with_potential)
    start = symmetric_to_full(verts.fe.conjugate(a.mat, p, p, req.t), M, p)
    level = {(0, 0): [(1, start)]}
    for j, tau in enumerate(req.times, start=1):
        Wf = symmetric_to_full(verts.W(tau), M, 2)
        Vf = verts.V(tau) if verts.with_potential else None
        nxt = {}
        for m in range(j + 1 if Vf is not None else 1):
            for l in range(j - m + 1):
                s = p + j - l - m
                terms = []
                for sign, X in level.get((l, m), []):
                    Xe = np.kron(X, np.eye(M))
                    for i in range(s - 1):
                        Wi = _slot_pair(Wf, M, s, i, s - 1)
                        terms += [(sign, Wi @ Xe), (-sign, Xe @ Wi)]
                for sign, X in level.get((l - 1, m), []):
                    for i, k in itertools.combinations(range(s), 2):
                        Wi = _slot_pair(Wf, M, s, i, k)
                        terms += [(sign, Wi @ X), (-sign, X @ Wi)]
                if Vf is not None:
                    for sign, X in level.get((l, m - 1), []):
                        for i in range(s):
                            Vi = _slot_one(Vf, M, s, i)
                            terms += [(sign, Vi @ X), (-sign, X @ Vi)]
                if terms:
                    nxt[(l, m)] = terms
        level = nxt
    return level.get((req.l, req.m), [])


def sum_elementary_terms(terms, a: SectorOperator, req: LoopTermRequest) -> SectorOperator:
    s = a.p + req.k - req.l - req.m
    if not terms:
        return SectorOperator.zero(s, a.M)
    total = sum(sign * X for sign, X in terms)
    S = tensor_isometry(a.M, s)
    return SectorOperator((1j) ** req.k * (S.T @ total @ S), s, a.M)
