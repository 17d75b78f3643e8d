import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from pumpline.potential import PotentialSpec, constant_barrier, eval_potential, sliding_cosine, two_harmonic_pump
from pumpline.transfer import discriminant, monodromy, propagate, transfer_batch, wronskian


def test_free_particle_exact():
    M = monodromy(PotentialSpec(), 4.0, 0.0).entries
    p = 2.0
    assert np.allclose(M, [[math.cos(p), math.sin(p) / p], [-p * math.sin(p), math.cos(p)]], atol=1e-13)


def test_constant_barrier_exact():
    kappa = 1.0
    M = monodromy(constant_barrier(2.0), 1.0, 0.0).entries
    expect = [[math.cosh(kappa), math.sinh(kappa) / kappa], [kappa * math.sinh(kappa), math.cosh(kappa)]]
    assert np.allclose(M, expect, atol=1e-13)


@pytest.mark.parametrize("spec, E, s", [(sliding_cosine(), 9.86, 0.2), (two_harmonic_pump(), 39.4, 0.7)])
def test_matches_independent_integrator(spec, E, s):
    def rhs(x, y):
        q = eval_potential(spec, x, s) - E
        return [y[1], q * y[0], y[3], q * y[2]]

    sol = solve_ivp(rhs, (0, spec.L), [1, 0, 0, 1], method="DOP853", rtol=1e-13, atol=1e-14)
    ref = sol.y[:, -1].reshape(2, 2).T
    M = monodromy(spec, E, s)
    assert np.abs(M.entries - ref).max() < 1e-9
    assert np.abs(M.entries - ref).max() < 100 * M.est_error + 1e-10


def test_fourth_order_convergence():
    spec, E, s = two_harmonic_pump(), 20.0, 0.3
    ref = transfer_batch(spec, E, s, 0.0, 1.0, 8192)
    errs = [np.abs(transfer_batch(spec, E, s, 0.0, 1.0, n) - ref).max() for n in (64, 128)]
    assert 12 < errs[0] / errs[1] < 20


@settings(max_examples=25, deadline=None)
@given(st.floats(-20, 200), st.floats(0, 1))
def test_unit_determinant(E, s):
    M = monodromy(two_harmonic_pump(), E, s, 512)
    assert abs(M.det - 1.0) <= 10 * M.est_error


def test_propagate_composes():
    spec = sliding_cosine()
    y = propagate(spec, 5.0, 0.4, 0.0, 0.35, [1.0, 0.2])
    y = propagate(spec, 5.0, 0.4, 0.35, 1.0, y)
    direct = monodromy(spec, 5.0, 0.4).entries @ [1.0, 0.2]
    assert np.allclose(y, direct, atol=1e-12)


def test_propagate_rejects_bad_input():
    with pytest.raises(ValueError):
        propagate(sliding_cosine(), 1.0, 0.0, 1.0, 0.0, [1, 0])
    with pytest.raises(ValueError):
        propagate(sliding_cosine(), 1.0, 0.0, 0.0, 1.0, [np.nan, 0])


def test_monodromy_rejects_odd_steps():
    with pytest.raises(ValueError):
        monodromy(sliding_cosine(), 1.0, 0.0, 511)


def test_wronskian_conserved():
    spec = two_harmonic_pump()
    f0, g0 = np.array([1.0, 0.3]), np.array([-0.2, 1.1])
    w0 = wronskian(*f0, *g0)
    f1 = propagate(spec, 12.0, 0.1, 0.0, 3.0, f0)
    g1 = propagate(spec, 12.0, 0.1, 0.0, 3.0, g0)
    assert wronskian(*f1, *g1) == pytest.approx(w0, abs=1e-10)


def test_discriminant_vectorized_and_s_independent_for_translation():
    D = discriminant(sliding_cosine(), 9.0, np.linspace(0, 1, 7))
    assert D.shape == (7,)
    assert np.ptp(D) < 1e-10
