import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpline.bands import certify_gap
from pumpline.errors import IllConditionedError, NumericalError
from pumpline.gapstates import gap_solutions, gap_states
from pumpline.potential import FermiPoint, PotentialSpec, constant_barrier, sliding_cosine
from pumpline.scattering import (ScatteringMatrix, convergence_study, limit_s_matrix, s_matrix_closed_form,
                                 s_matrix_direct)


def _textbook_barrier(V0, E, a):
    """Rectangular barrier on [0, a], incident e^{ikx}, transmitted t e^{ikx}."""
    k, kap = math.sqrt(E), math.sqrt(V0 - E)
    den = math.cosh(kap * a) + 1j * (kap ** 2 - k ** 2) / (2 * k * kap) * math.sinh(kap * a)
    t = cmath.exp(-1j * k * a) / den
    r = -1j * (k ** 2 + kap ** 2) / (2 * k * kap) * math.sinh(kap * a) / den
    return r, t


@pytest.mark.parametrize("V0, E, N", [(2.0, 1.0, 1), (2.0, 1.0, 3), (5.0, 0.7, 2)])
def test_square_barrier(V0, E, N):
    spec, fermi = constant_barrier(V0), FermiPoint(E)
    g = gap_solutions(spec, fermi, certify_gap(spec, E), 0.0)
    r, t = _textbook_barrier(V0, E, N)
    S = s_matrix_closed_form(g, fermi, N, 1.0)
    assert abs(S.r - r) < 1e-8 and abs(S.t - t) < 1e-8
    D = s_matrix_direct(spec, fermi, 0.0, N)
    assert abs(D.r - r) < 1e-8 and abs(D.t - t) < 1e-8
    # mirror-symmetric barrier: r' is r referred to the right end
    assert abs(D.r_prime - r * cmath.exp(-2j * math.sqrt(E) * N)) < 1e-8


def test_free_window_is_transparent():
    S = s_matrix_direct(PotentialSpec(), FermiPoint(3.0), 0.0, 2)
    assert abs(S.r) < 1e-12 and abs(S.t - 1) < 1e-12 and abs(S.r_prime) < 1e-12


@pytest.mark.parametrize("N", range(1, 7))
def test_closed_form_matches_direct(sliding, N):
    s = np.random.default_rng(N).random()
    g = gap_solutions(sliding.spec, sliding.fermi, sliding.cert, s)
    A = s_matrix_closed_form(g, sliding.fermi, N, 1.0)
    B = s_matrix_direct(sliding.spec, sliding.fermi, s, N)
    assert np.abs(A.matrix() - B.matrix()).max() < 1e-7
    assert B.unitarity_residual() < 1e-10 and B.symmetry_residual() < 1e-10


def test_two_harmonic_direct_up_to_cap(two_harmonic):
    c = two_harmonic
    g = gap_solutions(c.spec, c.fermi, c.cert, 0.41)
    N = int(34 / g.kappa)
    A = s_matrix_closed_form(g, c.fermi, N, 1.0)
    B = s_matrix_direct(c.spec, c.fermi, 0.41, N)
    assert np.abs(A.matrix() - B.matrix()).max() < 1e-7


def test_direct_refuses_past_growth_cap(two_harmonic):
    c = two_harmonic
    with pytest.raises(IllConditionedError):
        s_matrix_direct(c.spec, c.fermi, 0.41, 80)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(1, 200))
def test_closed_form_unitary_and_symmetric(s, N):
    spec = sliding_cosine()
    fermi = FermiPoint(9.856938576832464)
    cert = certify_gap(spec, fermi.E_F, 16)
    S = s_matrix_closed_form(gap_solutions(spec, fermi, cert, s), fermi, N, 1.0)
    assert S.unitarity_residual() < 1e-12
    assert S.t == S.t_prime


def test_limit_matrix(sliding):
    g = gap_solutions(sliding.spec, sliding.fermi, sliding.cert, 0.2)
    S = limit_s_matrix(g)
    assert S.N == 0 and S.t == 0 and abs(abs(S.r) - 1) < 1e-14
    assert S.unitarity_residual() < 1e-14
    for N in (1, 4, 16):
        a2 = math.exp(-2 * g.kappa * N)
        dev = abs(s_matrix_closed_form(g, sliding.fermi, N, 1.0).r + g.u_minus)
        assert dev <= 2 * a2 / (1 - a2)


def test_limit_of_right_reflection(two_harmonic):
    c = two_harmonic
    g = gap_solutions(c.spec, c.fermi, c.cert, 0.3)
    S = s_matrix_closed_form(g, c.fermi, 60, 1.0)
    phase = cmath.exp(-2j * c.fermi.p * 60)
    assert abs(S.r_prime - limit_s_matrix(g).r_prime * phase) < 1e-12


def test_singular_denominator_guard():
    class Fake:
        kappa, n, s = 0.0, 0, 0.0
        u_minus = u_plus = 1.0 + 0j

    with pytest.raises(NumericalError):
        s_matrix_closed_form(Fake(), FermiPoint(1.0), 1, 1.0)


def test_reflection_deviation_ratio_n4_to_n8(two_harmonic):
    c = two_harmonic
    s = np.linspace(0, 1, 64, endpoint=False)
    study = convergence_study(c.spec, c.fermi, c.cert, [4, 8], s)
    ratio = study.rows[1]["max_dev_r"] / study.rows[0]["max_dev_r"]
    assert ratio == pytest.approx(math.exp(-2 * study.kappa_L_min * 4), rel=0.2)


def test_deeper_gap_converges_faster():
    rates = []
    for V0 in (1.0, 6.0):
        spec = sliding_cosine(V0)
        from pumpline.bands import gap_interval
        lo, hi = gap_interval(spec, 1, 0.0)
        fermi = FermiPoint(0.5 * (lo + hi))
        study = convergence_study(spec, fermi, certify_gap(spec, fermi.E_F), range(1, 9),
                                  np.linspace(0, 1, 32, endpoint=False))
        rates.append(study.rows[-1]["max_dev_r"])
    assert rates[1] < rates[0]


def test_floor_behaviour(two_harmonic):
    c = two_harmonic
    study = convergence_study(c.spec, c.fermi, c.cert, [2, 6, 10, 80], np.linspace(0, 1, 16, endpoint=False))
    assert study.rows[-1]["max_dev_r"] <= 1e-12 and study.rows[-1]["max_abs_t"] <= 1e-12
    assert study.rate_r == pytest.approx(2 * study.kappa_L_mean, rel=0.2)


def test_convergence_needs_ascending(sliding):
    with pytest.raises(ValueError):
        convergence_study(sliding.spec, sliding.fermi, sliding.cert, [3, 2], [0.0, 0.5])


def test_matrix_layout():
    S = ScatteringMatrix(r=0.6, t=0.8j, r_prime=0.6, t_prime=0.8j, E=1.0, s=0.0, N=1)
    assert np.allclose(S.matrix(), [[0.6, 0.8j], [0.8j, 0.6]])
    assert S.unitarity_residual() < 1e-15
