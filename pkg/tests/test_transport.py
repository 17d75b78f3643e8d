import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpline.errors import GapClosedError, NumericalError, RefinementError
from pumpline.gapstates import gap_states, phase_loop
from pumpline.potential import FermiPoint, sliding_cosine
from pumpline.scattering import ScatteringMatrix
from pumpline.transport import (Grids, charge_variance, compare, pumped_charge, s_loop, variance_image_sum,
                                winding_charge)


def synthetic_loop(theta, w, n=128, T=1.0):
    """Rows (cos(theta) e^{2 pi i w s / T}, sin(theta)) on a closed uniform grid."""
    s = np.linspace(0, T, n + 1)
    out = []
    for si in s:
        r = math.cos(theta) * np.exp(2j * math.pi * w * si / T)
        t = complex(math.sin(theta))
        out.append(ScatteringMatrix(r=r, t=t, r_prime=-np.conj(r) * t / np.conj(t) if t else 0j,
                                    t_prime=t, E=1.0, s=float(si), N=1))
    return out


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.5), st.integers(-3, 3))
def test_charge_of_synthetic_loop(theta, w):
    q = pumped_charge(synthetic_loop(theta, w, n=512))
    assert q.value == pytest.approx(-w * math.cos(theta) ** 2, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 1.5), st.integers(-3, 3), st.sampled_from([1.0, 2.5]))
def test_variance_of_synthetic_loop(theta, w, T):
    # sin^2(pi w x) / sin^2(pi x) integrates to |w| over a period
    var = charge_variance(synthetic_loop(theta, w, n=128, T=T), T)
    assert var == pytest.approx(abs(w) * (math.cos(theta) * math.sin(theta)) ** 2, abs=1e-10)


def test_constant_loop_has_no_charge_or_noise():
    loop = synthetic_loop(0.7, 0)
    assert pumped_charge(loop).value == 0.0
    assert charge_variance(loop, 1.0) == 0.0


def test_reversed_loop_flips_charge():
    loop = synthetic_loop(0.3, 2)
    assert pumped_charge(loop[::-1]).value == pytest.approx(-pumped_charge(loop).value, abs=1e-12)


def test_loop_must_close():
    loop = synthetic_loop(0.3, 1)[:-3]
    with pytest.raises(NumericalError):
        pumped_charge(loop)
    with pytest.raises(NumericalError):
        charge_variance(loop, 1.0)


def test_coarse_loop_needs_refinement():
    with pytest.raises(RefinementError):
        pumped_charge(synthetic_loop(0.1, 3, n=16))


def test_variance_needs_even_grid():
    with pytest.raises(ValueError):
        charge_variance(synthetic_loop(0.3, 1, n=15), 1.0)


def test_limit_loop_is_quantized_and_noiseless(sliding):
    c = sliding
    gaps = gap_states(c.spec, c.fermi, c.cert, np.linspace(0, 1, 257))
    loop = s_loop(gaps, c.fermi, None, 1.0)
    track = phase_loop(c.spec, c.fermi, c.cert)
    assert winding_charge(track) == -1
    assert pumped_charge(loop).value == pytest.approx(winding_charge(track), abs=1e-6)
    assert charge_variance(loop, 1.0) <= 1e-10


def test_image_sum_oracle(two_harmonic):
    c = two_harmonic
    gaps = gap_states(c.spec, c.fermi, c.cert, np.linspace(0, 1, 65))
    check = variance_image_sum(s_loop(gaps, c.fermi, 3, 1.0), 1.0)
    assert check.rel_residual <= 1e-6
    # the bare truncated sum misses a tail of relative size ~ 1 / n_images
    assert check.rel_residual_truncated > check.rel_residual


def test_winding_charge_sign():
    class Track:
        winding = 1

    assert winding_charge(Track()) == -1


def test_compare_static_is_all_zero(static):
    rep = compare(static.spec, static.fermi, 1, [1, 2, 4])
    assert rep.chern_total == rep.node_count == rep.winding_u_minus == 0
    assert all(abs(q) <= 1e-6 for _, q in rep.Q1_of_N)
    assert rep.identity_verdict


def test_compare_two_harmonic(two_harmonic):
    rep = compare(two_harmonic.spec, two_harmonic.fermi, 2, grids=Grids(n_s=128))
    assert rep.chern_total == rep.node_count == rep.winding_u_minus == -1
    assert rep.identity_verdict and not rep.failures
    devs = [abs(q + rep.winding_u_minus) for _, q in rep.Q1_of_N]
    assert all(b < a for a, b in zip(devs[2:], devs[3:]) if a > 1e-5)
    assert all(v >= -1e-10 for _, v in rep.varQ1_of_N)
    assert rep.direct_vs_closed_max < 1e-7


def test_compare_reversed_orientation(two_harmonic):
    spec = two_harmonic.spec.reversed_loop()
    rep = compare(spec, two_harmonic.fermi, 2, [4, 32], grids=Grids(n_s=128))
    assert rep.chern_total == rep.node_count == rep.winding_u_minus == 1
    assert rep.Q1_of_N[-1][1] == pytest.approx(-1.0, abs=1e-4)


def test_compare_rejects_closed_gap():
    with pytest.raises(GapClosedError):
        compare(sliding_cosine(0.0), FermiPoint(9.8), 1, [1])


def test_compare_rejects_wrong_filling(sliding):
    with pytest.raises(GapClosedError):
        compare(sliding.spec, sliding.fermi, 2, [1])
