"""Bosonic many-body algebra on symmetric sectors of a finite mode space.

Every operator is stored as a dense matrix in the occupation-number basis of a
symmetric sector.  The workhorse is the split isometry

    V_{p,r} : Sym^{p+r} -> Sym^p (x) Sym^r,
    V|m> = sum_{a+b=m} sqrt(C(a) C(b) / C(m)) |a>|b>,

where C(m) = |m|! / prod(m_i!) counts the tensor-basis words with occupation m.
V is the restriction of the identity of the full tensor space, so every
first-quantized expression of the form P+ (X (x) 1) P+ becomes V^T (X (x) 1) V
without ever forming the M^n dimensional tensor space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

HERMITIAN_ATOL = 1e-12


# ---------------------------------------------------------------------------
# sectors


def _compositions(n: int, M: int):
    if M == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, M - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _occupations(M: int, n: int) -> tuple[tuple[int, ...], ...]:
    # reverse lexicographic: (n,0,..,0) first, (0,..,0,n) last
    return tuple(_compositions(n, M))


def sector_dim(M: int, n: int) -> int:
    return math.comb(n + M - 1, n)


@dataclass(frozen=True)
class SectorBasis:
    """Occupation basis of the symmetric n-particle sector over M modes."""

    M: int
    n: int
    occupations: tuple[tuple[int, ...], ...]
    index: dict = field(compare=False, repr=False)

    @property
    def dim(self) -> int:
        return len(self.occupations)


@lru_cache(maxsize=None)
def sector_basis(M: int, n: int) -> SectorBasis:
    if M < 1:
        raise ValueError(f"number of modes must be positive, got M={M}")
    if n < 0:
        raise ValueError(f"particle number must be nonnegative, got n={n}")
    occ = _occupations(M, n)
    return SectorBasis(M, n, occ, {m: i for i, m in enumerate(occ)})


def word_count(m) -> int:
    """Number of tensor-basis words x_1..x_n with occupation vector m."""
    out = math.factorial(sum(m))
    for mi in m:
        out //= math.factorial(mi)
    return out


def infer_particle_number(M: int, dim: int) -> int:
    n = 0
    while sector_dim(M, n) < dim:
        n += 1
    if sector_dim(M, n) != dim:
        raise ValueError(f"no symmetric sector over {M} modes has dimension {dim}")
    return n


@lru_cache(maxsize=None)
def split_isometry(M: int, p: int, r: int) -> np.ndarray:
    """Matrix of V_{p,r}: Sym^{p+r} -> Sym^p (x) Sym^r (row index a*dim_r + b)."""
    bp, br, bn = sector_basis(M, p), sector_basis(M, r), sector_basis(M, p + r)
    out = np.zeros((bp.dim * br.dim, bn.dim))
    cn = {m: word_count(m) for m in bn.occupations}
    for i, a in enumerate(bp.occupations):
        ca = word_count(a)
        for j, b in enumerate(br.occupations):
            m = tuple(x + y for x, y in zip(a, b))
            out[i * br.dim + j, bn.index[m]] = math.sqrt(ca * word_count(b) / cn[m])
    out.setflags(write=False)
    return out


def embed_matrix(mat: np.ndarray, M: int, q: int, p: int, k: int) -> np.ndarray:
    """P+ (mat (x) 1^{(k)}) P+ from Sym^{p+k} to Sym^{q+k}.

    ``mat`` maps the symmetric p-sector to the symmetric q-sector.
    """
    if k == 0:
        return np.asarray(mat)
    left = split_isometry(M, q, k)
    right = split_isometry(M, p, k)
    dk = sector_dim(M, k)
    mid = np.kron(mat, np.eye(dk))
    return left.T @ mid @ right


def contract_matrices(A: np.ndarray, qa: int, pa: int, B: np.ndarray, qb: int, pb: int,
                      r: int, M: int) -> np.ndarray:
    """P+ (A (x) 1^{(qb-r)}) (1^{(pa-r)} (x) B) P+ on symmetric sectors.

    The last r input slots of A are glued to the first r output slots of B.
    Maps Sym^{pa-r+pb} to Sym^{qa+qb-r}.
    """
    if not 0 <= r <= min(pa, qb):
        raise ValueError(f"contraction order r={r} outside [0, {min(pa, qb)}]")
    s = pa - r
    u = qb - r
    d = lambda n: sector_dim(M, n)  # noqa: E731
    x = np.kron(np.eye(d(s)), B) @ split_isometry(M, s, pb)
    x = np.kron(np.eye(d(s)), split_isometry(M, r, u)) @ x
    x = np.kron(split_isometry(M, s, r).T, np.eye(d(u))) @ x
    x = np.kron(A, np.eye(d(u))) @ x
    return split_isometry(M, qa, u).T @ x


# ---------------------------------------------------------------------------
# operators


def _as_complex(mat) -> np.ndarray:
    arr = np.array(mat, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SectorOperator:
    """Dense operator on the symmetric p-particle sector over M modes."""

    mat: np.ndarray
    p: int
    M: int

    def __post_init__(self):
        object.__setattr__(self, "mat", _as_complex(self.mat))
        dim = sector_dim(self.M, self.p)
        if self.mat.shape != (dim, dim):
            raise ValueError(
                f"operator on the {self.p}-particle sector over {self.M} modes must be "
                f"{dim}x{dim}, got {self.mat.shape}")

    @classmethod
    def identity(cls, p: int, M: int) -> "SectorOperator":
        return cls(np.eye(sector_dim(M, p)), p, M)

    @classmethod
    def zero(cls, p: int, M: int) -> "SectorOperator":
        d = sector_dim(M, p)
        return cls(np.zeros((d, d)), p, M)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def dag(self) -> "SectorOperator":
        return SectorOperator(self.mat.conj().T, self.p, self.M)

    def norm(self) -> float:
        return float(np.linalg.norm(self.mat, 2)) if self.mat.size else 0.0

    def is_hermitian(self, atol: float = HERMITIAN_ATOL) -> bool:
        return bool(np.max(np.abs(self.mat - self.mat.conj().T), initial=0.0) <= atol)

    def _check(self, other: "SectorOperator"):
        if (self.p, self.M) != (other.p, other.M):
            raise ValueError(f"sector mismatch: (p={self.p}, M={self.M}) vs (p={other.p}, M={other.M})")

    def __add__(self, other):
        self._check(other)
        return SectorOperator(self.mat + other.mat, self.p, self.M)

    def __sub__(self, other):
        self._check(other)
        return SectorOperator(self.mat - other.mat, self.p, self.M)

    def __neg__(self):
        return SectorOperator(-self.mat, self.p, self.M)

    def __mul__(self, c):
        return SectorOperator(c * self.mat, self.p, self.M)

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check(other)
        return SectorOperator(self.mat @ other.mat, self.p, self.M)

    def __repr__(self):
        return f"SectorOperator(p={self.p}, M={self.M}, dim={self.dim})"


def embed(a: SectorOperator, n: int) -> SectorOperator:
    """P+ (a (x) 1^{(n-p)}) P+ on the n-sector."""
    if n < a.p:
        raise ValueError(f"cannot embed a {a.p}-particle operator into the {n}-sector")
    return SectorOperator(embed_matrix(a.mat, a.M, a.p, a.p, n - a.p), n, a.M)


def commutator(a: SectorOperator, b: SectorOperator) -> SectorOperator:
    return a @ b - b @ a


# ---------------------------------------------------------------------------
# second quantization


@dataclass(frozen=True)
class QuantizationParams:
    """Deformation parameter N, particle number n and their ratio nu = n/N."""

    N: float
    n: int
    nu: float = field(init=False)

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError(f"N must be positive, got {self.N}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "nu", self.n / self.N)

    @classmethod
    def from_nu(cls, N: float, nu: float) -> "QuantizationParams":
        n = N * nu
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"n = N*nu = {n} is not an integer")
        return cls(N, int(round(n)))


def falling_factorial(n: int, p: int) -> int:
    return math.perm(n, p)


def quantize(a: SectorOperator, q: QuantizationParams) -> SectorOperator:
    """Second-quantized operator restricted to the n-sector.

    (p!/N^p) binom(n,p) P+ (a (x) 1) P+, and zero when n < p.
    """
    if q.n < a.p:
        return SectorOperator.zero(q.n, a.M)
    scale = falling_factorial(q.n, a.p) / q.N ** a.p
    return scale * embed(a, q.n)


def contract(a: SectorOperator, b: SectorOperator, r: int) -> SectorOperator:
    """a •_r b = P+ (a (x) 1^{(q-r)}) (1^{(p-r)} (x) b) P+ on the (p+q-r)-sector."""
    if a.M != b.M:
        raise ValueError("operators live on different mode spaces")
    if not 0 <= r <= min(a.p, b.p):
        raise ValueError(f"contraction order r={r} outside [0, {min(a.p, b.p)}]")
    mat = contract_matrices(a.mat, a.p, a.p, b.mat, b.p, b.p, r, a.M)
    return SectorOperator(mat, a.p + b.p - r, a.M)


def bracket(a: SectorOperator, b: SectorOperator, r: int) -> SectorOperator:
    """[a, b]_r = a •_r b - b •_r a."""
    return contract(a, b, r) - contract(b, a, r)


def product_expansion(a: SectorOperator, b: SectorOperator, q: QuantizationParams,
                      commutator_only: bool = False) -> SectorOperator:
    """Right-hand side of the product rule for quantized operators.

    sum_r binom(p,r) binom(q,r) r!/N^r  quantize(a •_r b); with
    ``commutator_only`` the r=0 term is dropped and brackets replace products.
    """
    total = SectorOperator.zero(q.n, a.M)
    for r in range(1 if commutator_only else 0, min(a.p, b.p) + 1):
        coeff = math.comb(a.p, r) * math.comb(b.p, r) * math.factorial(r) / q.N ** r
        term = bracket(a, b, r) if commutator_only else contract(a, b, r)
        total = total + coeff * quantize(term, q)
    return total


def _rel_err(x: np.ndarray, y: np.ndarray) -> float:
    scale = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0), 1e-300)
    return float(np.abs(x - y).max(initial=0.0) / scale)


def quantized_product_check(a: SectorOperator, b: SectorOperator, q: QuantizationParams) -> float:
    """Max relative deviation between quantize(a) quantize(b) and the contraction sum."""
    lhs = (quantize(a, q) @ quantize(b, q)).mat
    return _rel_err(lhs, product_expansion(a, b, q).mat)


def quantized_commutator_check(a: SectorOperator, b: SectorOperator, q: QuantizationParams) -> float:
    lhs = commutator(quantize(a, q), quantize(b, q)).mat
    return _rel_err(lhs, product_expansion(a, b, q, commutator_only=True).mat)


# ---------------------------------------------------------------------------
# mode space and Hamiltonian


def _check_hermitian(mat: np.ndarray, name: str):
    dev = np.max(np.abs(mat - mat.conj().T), initial=0.0)
    if dev > HERMITIAN_ATOL:
        raise ValueError(f"{name} is not Hermitian (max deviation {dev:.3e})")


def pair_table_operator(w) -> np.ndarray:
    """Symmetric-sector matrix of the diagonal pair interaction w[i][j]."""
    w = np.asarray(w, dtype=float)
    M = w.shape[0]
    if w.shape != (M, M) or not np.allclose(w, w.T, rtol=0, atol=HERMITIAN_ATOL):
        raise ValueError("pair table must be a real symmetric MxM array")
    basis = sector_basis(M, 2)
    diag = []
    for occ in basis.occupations:
        modes = [i for i, mi in enumerate(occ) for _ in range(mi)]
        diag.append(w[modes[0], modes[1]])
    return np.diag(diag).astype(complex)


def symmetric_to_full(mat: np.ndarray, M: int, p: int) -> np.ndarray:
    """Lift a Sym^p matrix to the full (C^M)^{(x)p} tensor space (zero off the sector)."""
    S = tensor_isometry(M, p)
    return S @ mat @ S.conj().T


@lru_cache(maxsize=None)
def tensor_isometry(M: int, p: int) -> np.ndarray:
    """Columns are the normalized symmetric tensors |m> in (C^M)^{(x)p}."""
    basis = sector_basis(M, p)
    out = np.zeros((M ** p, basis.dim))
    for idx in np.ndindex(*(M,) * p):
        occ = [0] * M
        for x in idx:
            occ[x] += 1
        occ = tuple(occ)
        flat = int(np.ravel_multi_index(idx, (M,) * p)) if p else 0
        out[flat, basis.index[occ]] = 1.0 / math.sqrt(word_count(occ))
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ModeSpace:
    """One-body Hamiltonian h, pair interaction W on Sym^2, optional potential V."""

    M: int
    h: np.ndarray
    W: np.ndarray
    V: np.ndarray | None = None
    w_pair: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        M = self.M
        if M < 1:
            raise ValueError("M must be positive")
        h = _as_complex(self.h)
        if h.shape != (M, M):
            raise ValueError(f"h must be {M}x{M}, got {h.shape}")
        _check_hermitian(h, "h")
        W = np.asarray(self.W, dtype=complex)
        d2 = sector_dim(M, 2)
        if W.shape == (M * M, M * M) and M > 1:
            swap = np.eye(M * M)[[j * M + i for i in range(M) for j in range(M)]]
            if np.abs(swap @ W - W @ swap).max() > HERMITIAN_ATOL:
                raise ValueError("W does not commute with the particle exchange")
            S = tensor_isometry(M, 2)
            W = S.T @ W @ S
        if W.shape != (d2, d2):
            raise ValueError(f"W must act on the symmetric 2-sector ({d2}x{d2}), got {W.shape}")
        _check_hermitian(W, "W")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "W", _as_complex(W))
        if self.V is not None:
            V = _as_complex(self.V)
            if V.shape != (M, M):
                raise ValueError(f"V must be {M}x{M}, got {V.shape}")
            _check_hermitian(V, "V")
            object.__setattr__(self, "V", V)
        if self.w_pair is not None:
            object.__setattr__(self, "w_pair", np.array(self.w_pair, dtype=float))

    @classmethod
    def from_pair_table(cls, h, w, V=None) -> "ModeSpace":
        w = np.asarray(w, dtype=float)
        return cls(w.shape[0], h, pair_table_operator(w), V, w_pair=w)

    def one_body(self, include_potential: bool = True) -> np.ndarray:
        if include_potential and self.V is not None:
            return self.h + self.V
        return self.h

    def with_interaction(self, W) -> "ModeSpace":
        return ModeSpace(self.M, self.h, W, self.V)

    @property
    def W_full(self) -> np.ndarray:
        return symmetric_to_full(self.W, self.M, 2)

    @property
    def w_norm(self) -> float:
        return float(np.linalg.norm(self.W, 2))

    def h_op(self, include_potential: bool = True) -> SectorOperator:
        return SectorOperator(self.one_body(include_potential), 1, self.M)

    def W_op(self) -> SectorOperator:
        return SectorOperator(self.W, 2, self.M)

    def V_op(self) -> SectorOperator:
        V = self.V if self.V is not None else np.zeros((self.M, self.M))
        return SectorOperator(V, 1, self.M)

    # JSON document: complex numbers as [re, im], matrices row-major flat
    def to_dict(self) -> dict:
        doc = {"M": self.M, "h": _pairs(self.h)}
        if self.w_pair is not None:
            doc["w_pair"] = self.w_pair.tolist()
        else:
            doc["W"] = _pairs(self.W)
        if self.V is not None:
            doc["v"] = _pairs(self.V)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModeSpace":
        M = int(doc["M"])
        h = unpack_matrix(doc["h"], M, "h")
        V = unpack_matrix(doc["v"], M, "v") if doc.get("v") is not None else None
        if "w_pair" in doc:
            return cls.from_pair_table(h, doc["w_pair"], V)
        d2 = sector_dim(M, 2)
        W = unpack_matrix(doc["W"], d2, "W")
        return cls(M, h, W, V)


def _pairs(mat: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(mat).ravel()]


def unpack_matrix(data, dim: int, name: str) -> np.ndarray:
    """Read a dim x dim complex matrix given as flat or nested [re, im] pairs."""
    arr = np.asarray(data, dtype=float)
    if arr.shape == (dim * dim, 2):
        arr = arr.reshape(dim, dim, 2)
    if arr.shape != (dim, dim, 2):
        raise ValueError(f"{name}: expected {dim}x{dim} complex pairs, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def build_hamiltonian(ms: ModeSpace, q: QuantizationParams) -> SectorOperator:
    """H_N on the n-sector: sum_i h_i + (1/N) sum_{i<j} W_ij (V folded into h)."""
    h = ms.h_op(include_potential=True)
    H = q.n * embed(h, q.n)
    if q.n >= 2:
        H = H + (math.comb(q.n, 2) / q.N) * embed(ms.W_op(), q.n)
    return H


# ---------------------------------------------------------------------------
# states and marginals


def product_state(psi, n: int) -> np.ndarray:
    """Coordinates of psi^{(x)n} in the occupation basis (norm ||psi||^n)."""
    psi = np.asarray(psi, dtype=complex)
    basis = sector_basis(len(psi), n)
    out = np.empty(basis.dim, dtype=complex)
    for i, occ in enumerate(basis.occupations):
        out[i] = math.sqrt(word_count(occ)) * np.prod(psi ** np.array(occ))
    return out


def expectation(op: SectorOperator, state: np.ndarray) -> complex:
    return complex(np.vdot(state, op.mat @ state))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    p: int
    mat: np.ndarray
    trace: float


def marginal(state, p: int, M: int) -> DensityMatrix:
    """Reduced p-particle density matrix of a pure state on the n-sector."""
    state = np.asarray(state, dtype=complex)
    n = infer_particle_number(M, state.size)
    if not 1 <= p <= n:
        raise ValueError(f"marginal order p={p} must lie in [1, {n}]")
    X = (split_isometry(M, p, n - p) @ state).reshape(sector_dim(M, p), sector_dim(M, n - p))
    rho = X @ X.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(p, rho, float(np.trace(rho).real))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Trace norm of a - b (sum of absolute eigenvalues)."""
    diff = np.asarray(a) - np.asarray(b)
    return float(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2)).sum())


def classical_value(a: SectorOperator, psi) -> complex:
    """<psi^{(x)p}, a psi^{(x)p}>."""
    v = product_state(psi, a.p)
    return complex(np.vdot(v, a.mat @ v))


def quantization_error(a: SectorOperator, psi, q: QuantizationParams) -> tuple[float, float]:
    """Gap between the quantum expectation in psi^{(x)N} and the classical value.

    Returns (measured, bound) with bound = p^2/N ||a||.
    """
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1) > 1e-12:
        raise ValueError("psi must be a unit vector")
    if q.n != q.N:
        raise ValueError("the coherent product state requires n = N")
    state = product_state(psi, q.n)
    measured = abs(expectation(quantize(a, q), state) - classical_value(a, psi))
    return measured, a.p ** 2 / q.N * a.norm()
