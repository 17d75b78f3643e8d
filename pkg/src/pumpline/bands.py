"""Bands and gaps from the discriminant D(E, s) = tr M(E, s).

Hill-equation facts used here: D' vanishes only where |D| >= 2, exactly
once per gap (a closed gap is a touching extremum with |D| = 2).  So the
local extrema of D split the energy axis into monotone pieces and each
piece carries exactly one band.  Locating the extrema first makes the edge
search robust against closed or nearly closed gaps, which a plain
|D| <= 2 scan would merge.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import BandShortfallError, GapClosedError, NumericalError
from .potential import PotentialSpec
from .transfer import DEFAULT_N_STEPS, discriminant

EDGE_XTOL = 1e-10
TOUCH_TOL = 1e-9
H_FRAC = 0.2  # derivative step as a fraction of the scan spacing


@dataclass(frozen=True)
class GapCertificate:
    n: int
    E_F: float
    margin: float
    disc_sign: int
    s_grid_size: int
    s_worst: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _scan_grid(spec: PotentialSpec, E_lo: float, E_hi: float, per_band: int = 48) -> np.ndarray:
    # D(E) oscillates once per band; bands are spaced ~ (pi / L)^2 (2j - 1) apart
    n_bands = math.sqrt(max(E_hi - E_lo, 0.0)) * spec.L / math.pi + 2.0
    n = int(per_band * n_bands * max(1.0, math.sqrt(n_bands))) + 16
    return np.linspace(E_lo, E_hi, n)


def _extrema(spec, s, E_lo, E_hi, n_steps):
    """Locations and values of the local extrema of D(., s) on (E_lo, E_hi)."""
    E = _scan_grid(spec, E_lo, E_hi)
    D = discriminant(spec, E, s, n_steps)
    dD = np.diff(D)
    idx = np.flatnonzero(dD[:-1] * dD[1:] < 0) + 1
    h = H_FRAC * (E[1] - E[0])

    def slope(e):
        d = discriminant(spec, e + h * np.array([-2.0, -1.0, 1.0, 2.0]), s, n_steps)
        return (d[0] - 8.0 * d[1] + 8.0 * d[2] - d[3]) / (12.0 * h)

    out = []
    for i in idx:
        a, b = E[i - 1], E[i + 1]
        # a root of D' locates a flat extremum far better than minimizing D itself
        if slope(a) * slope(b) < 0:
            x = brentq(slope, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps)
        else:
            sign = 1.0 if dD[i - 1] > 0 else -1.0  # +1: maximum
            x = minimize_scalar(lambda e: -sign * discriminant(spec, e, s, n_steps), bounds=(a, b),
                                method="bounded", options={"xatol": 1e-12}).x
        out.append((float(x), float(discriminant(spec, x, s, n_steps))))
    return out


def _edges_from_extrema(spec, s, E_lo, extrema, n_bands, n_steps):
    f = lambda e, level: discriminant(spec, e, s, n_steps) - level
    # (location, D) pairs; D(E_lo) > 2 since E_lo is below the spectrum
    bounds = [(E_lo, discriminant(spec, E_lo, s, n_steps))] + extrema
    bands = []
    for j in range(1, n_bands + 1):
        (a, Da), (b, Db) = bounds[j - 1], bounds[j]
        sa, sb = math.copysign(1.0, Da), math.copysign(1.0, Db)
        lo = a if abs(Da) - 2.0 <= TOUCH_TOL else brentq(f, a, b, args=(2.0 * sa,), xtol=EDGE_XTOL)
        hi = b if abs(Db) - 2.0 <= TOUCH_TOL else brentq(f, a, b, args=(2.0 * sb,), xtol=EDGE_XTOL)
        bands.append((lo, hi))
    return bands


def band_edges(spec: PotentialSpec, s: float, E_max: float, n_bands: int,
               n_steps: int = DEFAULT_N_STEPS) -> list[tuple[float, float]]:
    """The lowest ``n_bands`` band intervals (E_minus, E_plus) at parameter ``s``."""
    E_lo = spec.lower_bound() - 1.0
    extrema = _extrema(spec, s, E_lo, E_max, n_steps)
    if len(extrema) < n_bands:
        raise BandShortfallError(f"only {len(extrema)} complete bands below E_max={E_max}; "
                                 f"{n_bands} requested")
    return _edges_from_extrema(spec, s, E_lo, extrema, n_bands, n_steps)


def count_bands_below(spec: PotentialSpec, E: float, s: float = 0.0,
                      n_steps: int = DEFAULT_N_STEPS) -> int:
    """Number of complete bands below an in-gap energy ``E``."""
    E_lo = spec.lower_bound() - 1.0
    if E <= E_lo:
        return 0
    extrema = _extrema(spec, s, E_lo, E, n_steps)
    k = len(extrema)
    sigma_k = 1.0 if k == 0 else math.copysign(1.0, extrema[-1][1])
    return k + int(math.copysign(1.0, discriminant(spec, E, s, n_steps)) != sigma_k)


def gap_interval(spec: PotentialSpec, n: int, s: float, n_steps: int = DEFAULT_N_STEPS):
    """(top of band n, bottom of band n + 1) at fixed s; n = 0 gives (-inf, bottom of band 1)."""
    E_lo = spec.lower_bound() - 1.0
    E_hi = E_lo + (math.pi * (n + 2) / spec.L) ** 2 + 2.0 * abs(E_lo)
    while True:
        extrema = _extrema(spec, s, E_lo, E_hi, n_steps)
        if len(extrema) >= n + 1:
            break
        E_hi = 2.0 * E_hi + 10.0
    bands = _edges_from_extrema(spec, s, E_lo, extrema, n + 1, n_steps)
    top = -math.inf if n == 0 else bands[n - 1][1]
    return top, bands[n][0]


def common_gap(spec: PotentialSpec, n: int, n_s: int = 32, n_steps: int = DEFAULT_N_STEPS):
    """Energy interval lying in gap n for every s on a uniform grid.

    Edges are followed from s to s by bracketed root finding, seeded at s = 0.
    """
    s_grid = np.arange(n_s) * spec.T / n_s
    top, bottom = gap_interval(spec, n, 0.0, n_steps)
    tops, bottoms = [top], [bottom]
    f = lambda e, s, level: discriminant(spec, e, s, n_steps) - level
    sig = (-1.0) ** n
    for s in s_grid[1:]:
        width = bottoms[-1] - (tops[-1] if n else bottoms[-1] - 1.0)
        pad = max(0.25 * width, 1e-3)
        new = []
        for prev, kind in ((tops[-1], "top"), (bottoms[-1], "bottom")):
            if kind == "top" and n == 0:
                new.append(-math.inf)
                continue
            # band side of the edge has |D| < 2, gap side has sign(D) = sig
            level = 2.0 * sig
            lo, hi = prev - pad, prev + pad
            for _ in range(40):
                if f(lo, s, level) * f(hi, s, level) < 0:
                    break
                lo, hi = lo - pad, hi + pad
                pad *= 1.5
            else:
                raise NumericalError(f"lost track of gap-{n} edge at s={s}")
            new.append(brentq(f, lo, hi, args=(s, level), xtol=EDGE_XTOL))
        tops.append(new[0])
        bottoms.append(new[1])
    top, bottom = max(tops), min(bottoms)
    if not top < bottom:
        raise GapClosedError(f"gap {n} closes along the cycle (band top {top:.6g} >= "
                             f"next band bottom {bottom:.6g})")
    return top, bottom


def certify_gap(spec: PotentialSpec, E_F: float, n_s: int = 64, eps_margin: float = 1e-6,
                n_steps: int = DEFAULT_N_STEPS) -> GapCertificate:
    """Check that E_F is in a spectral gap for all s on a uniform grid of n_s points."""
    if n_s < 16:
        raise ValueError("certify_gap needs n_s >= 16")
    s_grid = np.arange(n_s) * spec.T / n_s
    D = np.asarray(discriminant(spec, E_F, s_grid, n_steps))
    excess = np.abs(D) - 2.0
    j = int(np.argmin(excess))
    if excess[j] <= eps_margin:
        raise GapClosedError(f"no spectral gap at E_F={E_F:.10g}: |D| - 2 = {excess[j]:.3g} "
                             f"at s={s_grid[j]:.10g}", s=float(s_grid[j]))
    # polish the sampled minimum so the margin does not depend on the grid
    ds = spec.T / n_s
    res = minimize_scalar(lambda x: abs(discriminant(spec, E_F, x, n_steps)) - 2.0,
                          bounds=(s_grid[j] - ds, s_grid[j] + ds), method="bounded",
                          options={"xatol": 1e-10})
    s_worst, margin = float(s_grid[j]), float(excess[j])
    if res.fun < margin:
        s_worst, margin = float(res.x % spec.T), float(res.fun)
    if margin <= eps_margin:
        raise GapClosedError(f"no spectral gap at E_F={E_F:.10g}: |D| - 2 = {margin:.3g} "
                             f"at s={s_worst:.10g}", s=s_worst)
    signs = np.sign(D)
    if not np.all(signs == signs[0]):
        raise GapClosedError(f"no spectral gap at E_F={E_F:.10g}: discriminant changes sign along the cycle")
    n = count_bands_below(spec, E_F, 0.0, n_steps)
    disc_sign = int(signs[0])
    if disc_sign != (-1) ** n:
        raise NumericalError(f"gap index {n} inconsistent with discriminant sign {disc_sign}")
    return GapCertificate(n=n, E_F=float(E_F), margin=margin, disc_sign=disc_sign,
                          s_grid_size=n_s, s_worst=s_worst)


def band_table(spec: PotentialSpec, n_bands: int, n_s: int = 16, E_max: float | None = None,
               n_steps: int = DEFAULT_N_STEPS) -> list[dict]:
    """Rows (n, s, E_minus, E_plus) for CSV output."""
    if E_max is None:
        E_max = spec.lower_bound() + 2.0 * abs(spec.lower_bound()) + (math.pi * (n_bands + 1.5) / spec.L) ** 2
    rows = []
    for s in np.arange(n_s) * spec.T / n_s:
        for j, (lo, hi) in enumerate(band_edges(spec, float(s), E_max, n_bands, n_steps), start=1):
            rows.append({"n": j, "s": float(s), "E_minus": lo, "E_plus": hi})
    return rows
