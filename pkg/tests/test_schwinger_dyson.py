import math
import warnings

import numpy as np
import pytest

from meanfield.fock_core import (ModeSpace, QuantizationParams, SectorOperator, build_hamiltonian,
                                 quantize, sector_dim)
from meanfield.graph_combinatorics import elementary_count
from meanfield.schwinger_dyson import (ExpansionOrder, FreeEvolution, LoopTermRequest,
                                       elementary_terms, expansion_report, free_evolve, g_term,
                                       heisenberg_exact, integrated_terms, loop_expansion, radius,
                                       simplex_integrate, sum_elementary_terms,
                                       time_ordered_levels)
from oracles import random_hermitian


def make_mode_space(rng, M, potential=False, scale=1.0):
    h = random_hermitian(rng, M)
    w = rng.normal(size=(M, M))
    w = (w + w.T) / 2
    w *= scale / np.abs(w).max()
    V = random_hermitian(rng, M) if potential else None
    return ModeSpace.from_pair_table(h, w, V)


def make_observable(rng, p, M):
    a = SectorOperator(random_hermitian(rng, sector_dim(M, p)), p, M)
    return a * (1 / a.norm())


# --- free evolution -------------------------------------------------------------------

def test_free_evolution_matches_one_body_hamiltonian(rng):
    ms = make_mode_space(rng, 3)
    a = make_observable(rng, 2, 3)
    t = 0.37
    q = QuantizationParams(1.0, 2)
    H1 = build_hamiltonian(ms.with_interaction(np.zeros_like(ms.W)), q).mat
    lam, E = np.linalg.eigh(H1)
    U = (E * np.exp(-1j * t * lam)) @ E.conj().T
    expected = U.conj().T @ a.mat @ U
    assert np.allclose(free_evolve(a, t, ms).mat, expected, atol=1e-12)


def test_free_evolution_group_property(rng):
    ms = make_mode_space(rng, 2)
    fe = FreeEvolution(ms.one_body(), 2)
    a = make_observable(rng, 3, 2).mat
    twice = fe.conjugate(fe.conjugate(a, 3, 3, 0.2), 3, 3, 0.5)
    assert np.allclose(twice, fe.conjugate(a, 3, 3, 0.7), atol=1e-12)


# --- single terms -------------------------------------------------------------------------

def test_zeroth_term_is_free_evolution(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    G = g_term(a, LoopTermRequest(0, 0, (), 0.4), ms)
    assert np.allclose(G.mat, free_evolve(a, 0.4, ms).mat)


@pytest.mark.parametrize("k,l", [(1, 2), (2, 3), (0, 1)])
def test_out_of_range_loop_number_is_zero(rng, k, l):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    G = g_term(a, LoopTermRequest(k, l, (0.1,) * k, 0.2), ms)
    assert G.norm() == 0


def test_sector_truncation_gives_zero(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 2, 2)
    G = g_term(a, LoopTermRequest(2, 0, (0.2, 0.1), 0.3), ms, n=3)
    assert G.p == 4 and G.norm() == 0


def test_potential_index_requires_potential_mode(rng):
    ms = make_mode_space(rng, 2, potential=True)
    a = make_observable(rng, 1, 2)
    with pytest.raises(ValueError):
        g_term(a, LoopTermRequest(1, 0, (0.1,), 0.2, m=1), ms)


def test_request_validation():
    with pytest.raises(ValueError):
        LoopTermRequest(2, 0, (0.1,), 0.3)
    with pytest.raises(ValueError):
        ExpansionOrder(2, L=4)
    assert ExpansionOrder(3).L == 4


def _nested_commutator(a, ms, q, times, t, potential):
    M, p = a.M, a.p
    fe = FreeEvolution(ms.one_body(not potential), M)

    def Q(mat, pp):
        return quantize(SectorOperator(mat, pp, M), q).mat

    X = Q(fe.conjugate(a.mat, p, p, t), p)
    for tau in times:
        Y = 0.5 * Q(fe.conjugate(ms.W, 2, 2, tau), 2)
        if potential:
            Y = Y + Q(fe.conjugate(ms.V, 1, 1, tau), 1)
        X = 1j * q.N * (Y @ X - X @ Y)
    return X


@pytest.mark.parametrize("potential", [False, True])
@pytest.mark.parametrize("M,p,k,n,N", [(2, 1, 1, 3, 2.0), (2, 1, 2, 3, 3.0), (2, 2, 3, 5, 4.0),
                                       (3, 2, 2, 4, 2.5), (2, 1, 3, 5, 1.7)])
def test_splitting_identity(rng, potential, M, p, k, n, N):
    """The nested commutator with N H_N splits into N^{-l} quantize(G^{(k,l,m)})."""
    ms = make_mode_space(rng, M, potential)
    a = make_observable(rng, p, M)
    t = 0.7
    times = tuple(np.sort(rng.uniform(0, t, size=k))[::-1])
    q = QuantizationParams(N, n)
    X = _nested_commutator(a, ms, q, times, t, potential)
    total = np.zeros_like(X)
    for m in range(k + 1 if potential else 1):
        for l in range(k - m + 1):
            G = g_term(a, LoopTermRequest(k, l, times, t, m), ms, n=n, with_potential=potential)
            if 1 <= G.p <= n:
                total += N ** (-l) * quantize(G, q).mat
    assert np.abs(total - X).max() <= 1e-11 * np.abs(X).max()


ELEMENTARY_CASES = [(pot, k, l, 0) for pot in (False, True)
                    for k, l in [(1, 0), (2, 0), (2, 1), (3, 1), (3, 2)]]
ELEMENTARY_CASES += [(True, 2, 0, 1), (True, 3, 1, 1)]


@pytest.mark.parametrize("potential,k,l,m", ELEMENTARY_CASES)
def test_elementary_terms_unroll_the_recursion(rng, potential, k, l, m):
    ms = make_mode_space(rng, 2, potential=True)
    a = make_observable(rng, 2, 2)
    req = LoopTermRequest(k, l, tuple(np.sort(rng.uniform(0, 1, k))[::-1]), 1.0, m)
    terms = elementary_terms(a, req, ms, potential)
    G1 = sum_elementary_terms(terms, a, req)
    G2 = g_term(a, req, ms, with_potential=potential)
    assert np.allclose(G1.mat, G2.mat, atol=1e-12)
    if m == 0:
        assert len(terms) == elementary_count(2, k, l)


@pytest.mark.parametrize("p,k,l", [(1, 1, 0), (1, 2, 0), (1, 2, 1), (1, 3, 1), (2, 2, 1),
                                   (1, 3, 2)])
def test_term_norm_bounded_by_elementary_count(rng, p, k, l):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, p, 2)
    req = LoopTermRequest(k, l, tuple(np.sort(rng.uniform(0, 1, k))[::-1]), 1.0)
    G = g_term(a, req, ms)
    assert G.norm() <= elementary_count(p, k, l) * a.norm() * ms.w_norm ** k * (1 + 1e-12)


def test_terms_do_not_depend_on_truncation_sector(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    req = LoopTermRequest(3, 1, (0.3, 0.2, 0.05), 0.4)
    assert np.allclose(g_term(a, req, ms, n=3).mat, g_term(a, req, ms).mat)
    assert np.allclose(g_term(a, req, ms, n=30).mat, g_term(a, req, ms).mat)


# --- time-ordered integration -------------------------------------------------------------

@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
def test_simplex_volume(k):
    t = 1.3
    assert simplex_integrate(k, lambda tt: 1.0, t, 6) == pytest.approx(t ** k / math.factorial(k))


def test_simplex_ordering():
    t = 2.0
    # int_{t >= t1 >= t2 >= 0} t2 = t^3/6 ;  int t1 = t^3/3
    assert simplex_integrate(2, lambda tt: tt[1], t, 8) == pytest.approx(t ** 3 / 6)
    assert simplex_integrate(2, lambda tt: tt[0], t, 8) == pytest.approx(t ** 3 / 3)


def test_symmetric_integrand_gives_half_square():
    t = 1.1
    val = simplex_integrate(2, lambda tt: math.cos(tt[0]) * math.cos(tt[1]), t, 20)
    assert val == pytest.approx(math.sin(t) ** 2 / 2, rel=1e-13)


@pytest.mark.parametrize("K", [1, 2, 3, 5])
def test_collocation_levels_scalar(K):
    t = 0.9
    levels = time_ordered_levels({"x": np.array(1.0)},
                                 lambda tau, prev, j: {"x": math.cos(3 * tau) * prev["x"]}, t, K, 24)
    for j, lv in enumerate(levels):
        assert float(lv["x"]) == pytest.approx((math.sin(3 * t) / 3) ** j / math.factorial(j),
                                               rel=1e-12)


def test_collocation_levels_respect_time_order(rng):
    t = 0.8
    A0, A1 = random_hermitian(rng, 3), random_hermitian(rng, 3)
    X = random_hermitian(rng, 3)

    def A(tau):
        return A0 + math.sin(2 * tau) * A1

    levels = time_ordered_levels({"x": X}, lambda tau, prev, j: {"x": A(tau) @ prev["x"]}, t, 3, 20)
    # the last step sits at the earliest time
    ref2 = simplex_integrate(2, lambda tt: A(tt[1]) @ A(tt[0]) @ X, t, 20)
    ref3 = simplex_integrate(3, lambda tt: A(tt[2]) @ A(tt[1]) @ A(tt[0]) @ X, t, 12)
    assert np.abs(levels[2]["x"] - ref2).max() < 1e-11
    assert np.abs(levels[3]["x"] - ref3).max() < 1e-10


@pytest.mark.parametrize("k,l", [(1, 0), (2, 0), (2, 1), (3, 1)])
def test_integrated_terms_match_nested_quadrature(rng, k, l):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    t = 0.8
    terms = integrated_terms(a, ms, t, 3, quad_order=16)
    ref = simplex_integrate(k, lambda tt: g_term(a, LoopTermRequest(k, l, tt, t), ms), t, 12)
    assert np.abs(ref.mat - terms[(k, l, 0)].mat).max() < 1e-10


# --- exact evolution and the truncated expansion ------------------------------------------

def test_heisenberg_identity_observable(rng):
    ms = make_mode_space(rng, 2)
    q = QuantizationParams(4.0, 3)
    ident = SectorOperator.identity(1, 2)
    A = heisenberg_exact(ident, q, ms, 0.6)
    assert np.allclose(A.mat, (3 / 4) * np.eye(A.dim))


def test_heisenberg_at_time_zero(rng):
    ms = make_mode_space(rng, 3)
    a = make_observable(rng, 2, 3)
    q = QuantizationParams(5.0, 4)
    assert np.allclose(heisenberg_exact(a, q, ms, 0.0).mat, quantize(a, q).mat)


def test_zeroth_order_expansion_is_free_evolution(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    q = QuantizationParams(4.0, 4)
    approx, _ = loop_expansion(a, q, ms, 0.1, ExpansionOrder(0))
    assert np.allclose(approx.mat, quantize(free_evolve(a, 0.1, ms), q).mat)


def test_expansion_is_exact_without_interaction(rng):
    ms = make_mode_space(rng, 2)
    ms = ms.with_interaction(np.zeros_like(ms.W))
    a = make_observable(rng, 2, 2)
    q = QuantizationParams(3.0, 3)
    approx, rep = loop_expansion(a, q, ms, 0.9, ExpansionOrder(2))
    assert np.allclose(approx.mat, heisenberg_exact(a, q, ms, 0.9).mat, atol=1e-12)
    assert rep.tail_estimate == 0.0


def test_expansion_error_decreases_with_order(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    q = QuantizationParams(4.0, 4)
    exact = heisenberg_exact(a, q, ms, 0.05)
    errs = []
    for K in range(6):
        approx, rep = loop_expansion(a, q, ms, 0.05, ExpansionOrder(K))
        errs.append((approx - exact).norm())
        assert errs[-1] <= rep.tail_estimate
    for e0, e1 in zip(errs, errs[1:]):
        assert e1 <= e0 / 2


def test_expansion_warns_beyond_threshold(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    q = QuantizationParams(2.0, 2)
    with pytest.warns(RuntimeWarning):
        _, rep = loop_expansion(a, q, ms, 1.0, ExpansionOrder(1))
    assert rep.above_threshold and rep.tail_estimate == math.inf


def test_expansion_report_keys(rng):
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    rep = expansion_report(a, QuantizationParams(3.0, 3), ms, 0.05, ExpansionOrder(2, L=2))
    assert set(rep) == {"K", "L", "N", "n", "t", "thresholds", "per_(k,l)_norms", "error_vs_exact"}
    assert set(rep["per_(k,l)_norms"]) == {"0,0", "1,0", "2,0", "2,1"}


# --- thresholds ---------------------------------------------------------------------------

def test_radius_values():
    r = radius(1.0, w_norm=1.0, kappa=1.0, t=0.0625)
    assert r.bounded_threshold == pytest.approx(1 / 8)
    assert r.coulomb_radius == pytest.approx(1 / (128 * math.pi))
    assert r.smallness == pytest.approx(0.5)
    assert not r.above_threshold


def test_radius_coulomb_only_smallness():
    r = radius(2.0, kappa=0.5, t=1e-3)
    rho = 1 / (128 * math.pi * 0.25 * 4)
    assert r.smallness == pytest.approx(math.sqrt(1e-3 / rho))


@pytest.mark.parametrize("kw", [dict(nu=0, w_norm=1), dict(nu=1), dict(nu=1, w_norm=-1),
                                dict(nu=1, kappa=0)])
def test_radius_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        radius(**kw)


def test_loop_terms_scale_exactly_with_inverse_N(rng):
    """At fixed n only the explicit powers of 1/N change; G itself is N-independent."""
    ms = make_mode_space(rng, 2)
    a = make_observable(rng, 1, 2)
    scaled = []
    for N in (2.0, 4.0, 8.0, 16.0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, rep = loop_expansion(a, QuantizationParams(N, 4), ms, 0.05, ExpansionOrder(3))
        scaled.append({(k, l): v * N ** (l + a.p + k - l) for (k, l), v in rep.term_norms.items()})
    assert {(1, 0), (2, 1), (3, 1), (3, 2)} <= set(scaled[0])
    for other in scaled[1:]:
        for key, v in scaled[0].items():
            assert other[key] == pytest.approx(v, rel=1e-9)
