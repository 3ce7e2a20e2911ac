"""Classical mean-field side: Hartree flow, observables A(a) and their tree series."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .fock_core import (ModeSpace, SectorOperator, contract_matrices, product_state, sector_dim,
                        split_isometry)
from .schwinger_dyson import FreeEvolution, time_ordered_levels


class HartreeIntegrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HartreeState:
    psi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        psi = np.array(self.psi, dtype=complex)
        if psi.ndim != 1 or not np.all(np.isfinite(psi)):
            raise ValueError("psi must be a finite complex vector")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.psi))


@dataclass(frozen=True, eq=False)
class ClassicalObservable:
    """Matrix from the symmetric p-sector to the symmetric q-sector."""

    op: np.ndarray
    q: int
    p: int
    M: int

    def __post_init__(self):
        op = np.array(self.op, dtype=complex)
        shape = (sector_dim(self.M, self.q), sector_dim(self.M, self.p))
        if op.shape != shape:
            raise ValueError(f"({self.q},{self.p}) observable over {self.M} modes needs shape "
                             f"{shape}, got {op.shape}")
        op.setflags(write=False)
        object.__setattr__(self, "op", op)

    @classmethod
    def from_operator(cls, a: SectorOperator) -> "ClassicalObservable":
        return cls(a.mat, a.p, a.p, a.M)

    @property
    def gauge_invariant(self) -> bool:
        return self.p == self.q

    def norm(self) -> float:
        return float(np.linalg.norm(self.op, 2))

    def __add__(self, other):
        return ClassicalObservable(self.op + other.op, self.q, self.p, self.M)

    def __sub__(self, other):
        return ClassicalObservable(self.op - other.op, self.q, self.p, self.M)

    def __mul__(self, c):
        return ClassicalObservable(c * self.op, self.q, self.p, self.M)

    __rmul__ = __mul__


def observable(a: ClassicalObservable, s: HartreeState | np.ndarray) -> complex:
    """A(a)(psi) = <psi^{(x)q}, a psi^{(x)p}>."""
    psi = s.psi if isinstance(s, HartreeState) else np.asarray(s, dtype=complex)
    if psi.size != a.M:
        raise ValueError(f"state has {psi.size} modes, observable expects {a.M}")
    return complex(np.vdot(product_state(psi, a.q), a.op @ product_state(psi, a.p)))


def energy(s: HartreeState, ms: ModeSpace) -> float:
    """<psi, h psi> + 1/2 <psi (x) psi, W psi (x) psi>."""
    psi = s.psi
    v2 = product_state(psi, 2)
    val = np.vdot(psi, ms.one_body() @ psi) + 0.5 * np.vdot(v2, ms.W @ v2)
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise ValueError(f"energy has imaginary part {val.imag:.3e}; mode space is not Hermitian")
    return float(val.real)


def mean_field(psi: np.ndarray, W4: np.ndarray) -> np.ndarray:
    """Contraction of W against |psi><psi| in one slot, applied to psi."""
    return np.einsum("abcd,b,c,d->a", W4, psi.conj(), psi, psi)


def evolve(s: HartreeState, t: float, ms: ModeSpace, tol: float = 1e-10) -> HartreeState:
    """Solve i d/dt psi = h psi + (W against |psi|^2) psi over a time span t.

    The linear part is removed exactly: phi(t) = e^{ith} psi(t) obeys
    d/dt phi = -i e^{ith} F(e^{-ith} phi), which is integrated with an
    adaptive eighth-order Runge-Kutta method.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if t == 0:
        return HartreeState(s.psi, s.time)
    lam, E = np.linalg.eigh(ms.one_body())
    M = ms.M
    W4 = ms.W_full.reshape(M, M, M, M)
    if not np.any(W4):
        psi = (E * np.exp(-1j * t * lam)) @ (E.conj().T @ s.psi)
        return HartreeState(psi, s.time + t)

    # work in the eigenbasis of h so the propagator is diagonal
    W4e = np.einsum("ia,jb,abcd,ck,dl->ijkl", E.conj().T, E.conj().T, W4, E, E)
    chi0 = E.conj().T @ s.psi

    def rhs(tau, phi):
        ph = np.exp(1j * tau * lam)
        chi = phi / ph
        return -1j * ph * mean_field(chi, W4e)

    scale = max(np.abs(chi0).max(), 1e-300)
    sol = solve_ivp(rhs, (0.0, t), chi0, method="DOP853", rtol=tol, atol=tol * scale * 1e-2)
    if not sol.success:
        raise HartreeIntegrationError(sol.message)
    chi = sol.y[:, -1] * np.exp(-1j * t * lam)
    return HartreeState(E @ chi, s.time + t)


def trajectory(s: HartreeState, times, ms: ModeSpace, tol: float = 1e-10) -> list[HartreeState]:
    """States at the given increasing times, each integrated from the initial state."""
    return [evolve(s, float(t), ms, tol) for t in times]


# ---------------------------------------------------------------------------
# Poisson structure and tree expansion


def poisson_bracket(a: ClassicalObservable, b: ClassicalObservable) -> ClassicalObservable:
    """Operator of {A(a), A(b)} for the brackets {psi(x), conj psi(y)} = i delta.

    i (p_a q_b  a •_1 b  -  p_b q_a  b •_1 a); for gauge-invariant a, b this is
    i p q [a, b]_1.
    """
    if a.M != b.M:
        raise ValueError("observables live on different mode spaces")
    M = a.M
    q_out, p_in = a.q + b.q - 1, a.p + b.p - 1
    if q_out < 0 or p_in < 0:
        raise ValueError("bracket of two scalars")
    out = np.zeros((sector_dim(M, q_out), sector_dim(M, p_in)), dtype=complex)
    if a.p >= 1 and b.q >= 1:
        out += a.p * b.q * contract_matrices(a.op, a.q, a.p, b.op, b.q, b.p, 1, M)
    if b.p >= 1 and a.q >= 1:
        out -= b.p * a.q * contract_matrices(b.op, b.q, b.p, a.op, a.q, a.p, 1, M)
    return ClassicalObservable(1j * out, q_out, p_in, M)


def product_observable(a: ClassicalObservable, b: ClassicalObservable) -> ClassicalObservable:
    """Observable whose value is A(a) A(b)."""
    op = contract_matrices(a.op, a.q, a.p, b.op, b.q, b.p, 0, a.M)
    return ClassicalObservable(op, a.q + b.q, a.p + b.p, a.M)


def hamiltonian_flow(s: HartreeState, b: ClassicalObservable, eps: float) -> HartreeState:
    """Flow of the real Hamilton function A(b): d/de psi = -i dA(b)/d(conj psi).

    Along it any observable F obeys dF/de = {A(b), F}.
    """
    def rhs(_, psi):
        return -1j * _grad_conj(b, psi)

    sol = solve_ivp(rhs, (0.0, eps), s.psi.astype(complex), method="DOP853", rtol=1e-13, atol=1e-15)
    return HartreeState(sol.y[:, -1], s.time)


def _grad_conj(b: ClassicalObservable, psi: np.ndarray) -> np.ndarray:
    # d/d(conj psi_x) <psi^{q}, b psi^{p}> = q <e_x (x) psi^{q-1}, b psi^{p}>
    if b.q == 0:
        return np.zeros(b.M, dtype=complex)
    v = b.op @ product_state(psi, b.p)
    X = (split_isometry(b.M, 1, b.q - 1) @ v).reshape(b.M, -1)
    return b.q * (X @ product_state(psi, b.q - 1).conj())


class _TreeVertices:
    def __init__(self, ms: ModeSpace):
        self.ms = ms
        self.fe = FreeEvolution(ms.one_body(), ms.M)

    def W(self, tau) -> ClassicalObservable:
        return ClassicalObservable(self.fe.conjugate(self.ms.W, 2, 2, tau), 2, 2, self.ms.M)

    def evolve(self, a: ClassicalObservable, t) -> ClassicalObservable:
        return ClassicalObservable(self.fe.conjugate(a.op, a.q, a.p, t), a.q, a.p, a.M)


def _tree_step(a: ClassicalObservable, W: ClassicalObservable) -> ClassicalObservable:
    # T^{(k)} = 1/2 {A(W_{t_k}), A(T^{(k-1)})}
    return 0.5 * poisson_bracket(W, a)


def tree_term(a: ClassicalObservable, times, t: float, ms: ModeSpace) -> ClassicalObservable:
    """T^{(k)}_{t, t_1..t_k}(a), a (q+k, p+k) observable; T^{(0)} = a_t."""
    verts = _TreeVertices(ms)
    T = verts.evolve(a, t)
    for tau in times:
        T = _tree_step(T, verts.W(tau))
    return T


def tree_terms_integrated(a: ClassicalObservable, t: float, K: int, ms: ModeSpace,
                          quad_order: int = 24) -> list[ClassicalObservable]:
    """Time-ordered integrals of T^{(k)} over the k-simplex, k = 0..K."""
    verts = _TreeVertices(ms)
    a_t = verts.evolve(a, t)

    def step(tau, prev, j):
        T = ClassicalObservable(prev["T"], a.q + j - 1, a.p + j - 1, a.M)
        return {"T": _tree_step(T, verts.W(tau)).op}

    levels = time_ordered_levels({"T": a_t.op}, step, t, K, quad_order)
    return [ClassicalObservable(lv["T"], a.q + k, a.p + k, a.M) for k, lv in enumerate(levels)]


def tree_series_terms(a: ClassicalObservable, s: HartreeState, t: float, K: int, ms: ModeSpace,
                      quad_order: int = 24) -> np.ndarray:
    """Individual orders A(T^{(k)}_t a)(psi) for k = 0..K."""
    nu = s.norm ** 2
    x = 8 * nu * ms.w_norm * abs(t)
    if x >= 1:
        warnings.warn(f"8 nu ||w|| t = {x:.3g} >= 1: the tree series need not converge",
                      RuntimeWarning, stacklevel=2)
    terms = tree_terms_integrated(a, t, K, ms, quad_order)
    return np.array([observable(T, s) for T in terms])


def tree_series(a: ClassicalObservable, s: HartreeState, t: float, K: int, ms: ModeSpace,
                quad_order: int = 24) -> complex:
    """Partial sum through order K of the tree expansion of A(a)(psi(t))."""
    return complex(tree_series_terms(a, s, t, K, ms, quad_order).sum())

