"""Pumped charge, its variance, and the comparison of the topological integers.

Charges are in units of one particle charge and refer to the left lead:
Q1 is the charge delivered into the left lead per cycle, so a pump that
carries one particle rightwards across x = 0 has Q1 = -1.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bands import GapCertificate, certify_gap
from .chern import DEFAULT_GRID, DEFAULT_M_PW, chern_numbers
from .errors import GapClosedError, NumericalError, PumplineError, RefinementError
from .gapstates import PhaseTrack, gap_states, node_count, phase_loop
from .potential import FermiPoint, PotentialSpec
from .scattering import (MAX_GROWTH, ScatteringMatrix, convergence_study, limit_s_matrix,
                         s_matrix_closed_form, s_matrix_direct)
from .transfer import DEFAULT_N_STEPS

CLOSURE_TOL = 1e-8
MAX_ADJACENT_CHANGE = 0.1
IMAG_TOL = 1e-8
MAX_NUMERATOR_JUMP = 0.5
DEFAULT_TOL_Q = 1e-4
DEFAULT_N_LIST = tuple(range(1, 11)) + (12, 16, 24, 32, 48, 64)
VARIANCE_KERNEL = "(1/(2T))^2 * iint_[0,T]^2 [1 - |(S(s) S*(s'))_11|^2] / sin^2(pi (s - s') / T)"


def _rows(S_loop: Sequence[ScatteringMatrix]) -> np.ndarray:
    """(n, 2) array of the lead-1 rows (r, t')."""
    return np.array([[m.r, m.t_prime] for m in S_loop], dtype=complex)


@dataclass(frozen=True)
class PumpedCharge:
    value: float           # Richardson-extrapolated
    trapezoid: float       # plain accumulation on the full grid
    error_estimate: float  # |value - trapezoid|
    imag_residue: float

    def __float__(self) -> float:
        return self.value


def _accumulate(v: np.ndarray) -> complex:
    # (i / 2 pi) sum_j 1/2 (conj v_j + conj v_{j+1}) . (v_{j+1} - v_j)
    terms = 0.5 * (v[:-1].conj() + v[1:].conj()) * (v[1:] - v[:-1])
    return 1j * terms.sum() / (2.0 * math.pi)


def pumped_charge(S_loop: Sequence[ScatteringMatrix]) -> PumpedCharge:
    """<Q1> = (i / 2 pi) loop-integral of (conj r dr + conj t' dt') over a closed sampled loop.

    ``S_loop`` lists the samples in traversal order with the last one
    repeating the first (s = 0 and s = T).  An even number of intervals
    enables one Richardson step-halving correction.
    """
    v = _rows(S_loop)
    if v.shape[0] < 3:
        raise ValueError("a loop needs at least three samples")
    gap = np.abs(v[-1] - v[0]).max()
    if gap > CLOSURE_TOL:
        raise NumericalError(f"S loop is not closed: first and last samples differ by {gap:.3g}")
    step = np.abs(np.diff(v, axis=0)).max()
    if step >= MAX_ADJACENT_CHANGE:
        raise RefinementError(f"adjacent S samples differ by {step:.3g} >= {MAX_ADJACENT_CHANGE}; "
                              "use a denser s-grid")
    fine = _accumulate(v)
    if abs(fine.imag) > IMAG_TOL:
        raise NumericalError(f"pumped charge has imaginary part {fine.imag:.3g} > {IMAG_TOL}")
    value = fine.real
    if (v.shape[0] - 1) % 2 == 0:
        coarse = _accumulate(v[::2]).real
        value = fine.real + (fine.real - coarse) / 3.0
    return PumpedCharge(value=float(value), trapezoid=float(fine.real),
                        error_estimate=float(abs(value - fine.real)), imag_residue=float(abs(fine.imag)))


def winding_charge(track: PhaseTrack) -> int:
    """Charge delivered to the lead in the quantized limit: minus the winding of u."""
    return -int(track.winding)


def _open_loop(S_loop: Sequence[ScatteringMatrix]) -> np.ndarray:
    v = _rows(S_loop)
    if np.abs(v[-1] - v[0]).max() > CLOSURE_TOL:
        raise NumericalError("S loop is not closed")
    v = v[:-1]
    if v.shape[0] < 4 or v.shape[0] % 2:
        raise ValueError("charge_variance needs an even number (>= 4) of distinct samples")
    return v


def _numerator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 - |<a(s), b(s')>|^2 for unit rows, written as |a_1 b_2 - a_2 b_1|^2 (no cancellation)."""
    return np.abs(a[:, None, 0] * b[None, :, 1] - a[:, None, 1] * b[None, :, 0]) ** 2


def charge_variance(S_loop: Sequence[ScatteringMatrix], T: float) -> float:
    """<<Q1^2>> from the periodized double integral on interleaved offset grids.

    Even samples serve as s and odd samples as s', so s = s' is never hit
    and the product trapezoid rule stays spectrally accurate.
    """
    v = _open_loop(S_loop)
    n = v.shape[0]
    h = T / n
    a, b = v[0::2], v[1::2]
    num = _numerator(a, b)
    jump = max(np.abs(np.diff(num, axis=0)).max(), np.abs(np.diff(num, axis=1)).max())
    if jump > MAX_NUMERATOR_JUMP:
        raise RefinementError(f"variance integrand changes by {jump:.3g} per cell; use a denser s-grid")
    s = h * np.arange(0, n, 2)
    sp = h * np.arange(1, n, 2)
    kernel = 1.0 / np.sin(math.pi * (s[:, None] - sp[None, :]) / T) ** 2
    val = (2.0 * h) ** 2 * float((num * kernel).sum()) / (2.0 * T) ** 2
    if val < -1e-10:
        raise NumericalError(f"negative variance {val:.3g}")
    return val


@dataclass(frozen=True)
class ImageSumCheck:
    periodized: float
    image_sum: float            # truncated real-line sum plus its tail remainder
    image_sum_truncated: float  # bare truncated sum
    n_images: int
    rel_residual: float
    rel_residual_truncated: float

    def to_dict(self) -> dict:
        return {"kernel": VARIANCE_KERNEL, **self.__dict__}


def variance_image_sum(S_loop: Sequence[ScatteringMatrix], T: float, n_images: int = 10_000,
                       chunk: int = 512) -> ImageSumCheck:
    """Oracle for :func:`charge_variance` from the unperiodized real-line kernel.

    (1/(2 pi))^2 int_R ds int_0^T ds' f(s, s') / (s - s')^2 with f periodic in s
    folds onto [0, T]^2 with kernel sum_n (x + nT)^{-2}, x = s - s'.  The
    sum is taken directly over |n| <= n_images; the remainder beyond it is
    added from the midpoint estimate sum_{n > K} (x + nT)^{-2} ~ 1 / (T (x + (K + 1/2) T)).
    """
    v = _open_loop(S_loop)
    n = v.shape[0]
    h = T / n
    a, b = v[0::2], v[1::2]
    num = _numerator(a, b).ravel()
    x = (h * np.arange(0, n, 2)[:, None] - h * np.arange(1, n, 2)[None, :]).ravel()
    K = int(n_images)
    kern = np.zeros_like(x)
    for lo in range(-K, K + 1, chunk):
        m = np.arange(lo, min(lo + chunk, K + 1), dtype=float)
        kern += (1.0 / (x[:, None] + m[None, :] * T) ** 2).sum(axis=1)
    tail = 1.0 / (T * ((K + 0.5) * T + x)) + 1.0 / (T * ((K + 0.5) * T - x))
    w = (2.0 * h) ** 2 / (2.0 * math.pi) ** 2
    bare = w * float((num * kern).sum())
    full = w * float((num * (kern + tail)).sum())
    per = charge_variance(S_loop, T)
    scale = max(abs(per), 1e-300)
    return ImageSumCheck(periodized=per, image_sum=full, image_sum_truncated=bare, n_images=K,
                         rel_residual=abs(full - per) / scale, rel_residual_truncated=abs(bare - per) / scale)


# ---------------------------------------------------------------------------
# comparison chain

@dataclass
class Grids:
    n_s: int = 256          # s-samples per loop for the charge integrals (even)
    N_k: int = DEFAULT_GRID
    N_s: int = DEFAULT_GRID
    M_pw: int = DEFAULT_M_PW
    n_steps: int = DEFAULT_N_STEPS
    n_s_cert: int = 64

    def __post_init__(self):
        if self.n_s < 16 or self.n_s % 4:
            raise ValueError("n_s must be a multiple of 4 and >= 16")
        if min(self.N_k, self.N_s) < 4:
            raise ValueError("N_k and N_s must be >= 4")
        if self.n_steps < 16 or self.n_steps % 2:
            raise ValueError("n_steps must be even and >= 16")
        if self.n_s_cert < 16:
            raise ValueError("n_s_cert must be >= 16")


@dataclass
class PumpReport:
    E_F: float
    gap_index: int
    n_filled: int
    chern_total: int | None
    chern_per_band: list
    node_count: int | None
    winding_u_minus: int | None
    Q1_of_N: list                 # (N, <Q1>)
    varQ1_of_N: list              # (N, <<Q1^2>>)
    Q1_error_estimates: list      # (N, Richardson estimate)
    Q1_limit: float | None
    varQ1_limit: float | None
    convergence_rate: float | None
    convergence: dict
    variance_rate: float | None
    kappa_L_min: float | None
    kappa_L_mean: float | None
    direct_vs_closed_max: float | None
    direct_checks: int
    unitarity_max: float | None
    variance_check: dict
    identity_verdict: bool
    residuals: dict
    failures: list
    tol_Q: float
    certificate: dict
    runtime_s: float = field(default=0.0, compare=False)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = dict(self.__dict__)
        if not include_runtime:
            d.pop("runtime_s")
        return d


def s_loop(gaps, fermi: FermiPoint, N: int | None, L: float) -> list[ScatteringMatrix]:
    """Closed-form S samples along the loop; ``N=None`` gives the limit matrices."""
    if N is None:
        return [limit_s_matrix(g) for g in gaps]
    return [s_matrix_closed_form(g, fermi, N, L) for g in gaps]


def _fit_rate(Ns, vals) -> float | None:
    pts = [(N, math.log(v)) for N, v in zip(Ns, vals) if v > 1e-13]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return -float(np.polyfit(x, y, 1)[0])


def compare(spec: PotentialSpec, fermi: FermiPoint, n_filled: int | None = None,
            N_list: Sequence[int] = DEFAULT_N_LIST, grids: Grids | None = None,
            tol_Q: float = DEFAULT_TOL_Q, n_direct_s: int = 3, seed: int | None = None) -> PumpReport:
    """Run every route to the pumped charge and check that they agree.

    Gap closure is a precondition failure and propagates.  Numerical
    failures of individual links are recorded and make the verdict false.
    ``seed`` picks the s-samples of the direct-solver spot check (evenly
    spaced when None).
    """
    t0 = time.perf_counter()
    grids = grids or Grids()
    N_list = [int(N) for N in N_list]
    if not N_list or any(N < 1 for N in N_list) or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be a nonempty ascending list of positive integers")
    cert: GapCertificate = certify_gap(spec, fermi.E_F, grids.n_s_cert, n_steps=grids.n_steps)
    if n_filled is None:
        n_filled = cert.n
    if n_filled != cert.n:
        raise GapClosedError(f"E_F={fermi.E_F} lies in gap {cert.n}, but n_filled={n_filled}")
    failures: list[str] = []

    def attempt(name, fn):
        try:
            return fn()
        except GapClosedError:
            raise
        except PumplineError as exc:
            failures.append(f"{name}: {exc}")
            return None

    chern = None
    if n_filled == 0:
        chern_total, per_band = 0, []
    else:
        chern = attempt("chern", lambda: chern_numbers(spec, n_filled, grids.N_k, grids.N_s, grids.M_pw,
                                                        cert=cert))
        chern_total = chern.total if chern else None
        per_band = list(chern.per_band) if chern else []
    nodes = attempt("node_count", lambda: node_count(spec, fermi, cert, n_steps=grids.n_steps))
    track = attempt("winding", lambda: phase_loop(spec, fermi, cert, n_steps=grids.n_steps))
    winding = track.winding if track else None

    s = np.linspace(0.0, spec.T, grids.n_s + 1)
    gaps = gap_states(spec, fermi, cert, s, grids.n_steps)
    Q, var, qerr = [], [], []
    unit = 0.0
    for N in N_list:
        loop = s_loop(gaps, fermi, N, spec.L)
        unit = max(unit, max(m.unitarity_residual() for m in loop))
        q = attempt(f"pumped_charge(N={N})", lambda: pumped_charge(loop))
        v = attempt(f"charge_variance(N={N})", lambda: charge_variance(loop, spec.T))
        Q.append((N, None if q is None else q.value))
        qerr.append((N, None if q is None else q.error_estimate))
        var.append((N, v))
    limit = s_loop(gaps, fermi, None, spec.L)
    q_lim = attempt("pumped_charge(limit)", lambda: pumped_charge(limit))
    v_lim = attempt("charge_variance(limit)", lambda: charge_variance(limit, spec.T))

    study = attempt("convergence_study", lambda: convergence_study(
        spec, fermi, cert, [N for N in N_list if N <= 8] or N_list[:2], s[:-1], grids.n_steps))
    var_ok = [(N, v) for N, v in var if v is not None and N >= 2]
    var_rate = _fit_rate([N for N, _ in var_ok if N <= 8], [v for N, v in var_ok if N <= 8])

    # mutual oracle: direct ODE solve against the closed form
    direct_max, n_direct = 0.0, 0
    kmax = max(g.kappa for g in gaps) * spec.L
    if seed is None:
        picks = np.linspace(0, grids.n_s, n_direct_s, endpoint=False).astype(int)
    else:
        picks = np.sort(np.random.default_rng(seed).choice(grids.n_s, size=n_direct_s, replace=False))
    for j in picks:
        g = gaps[j]
        for N in N_list:
            if N * kmax > MAX_GROWTH or N > 16:
                continue
            A = s_matrix_closed_form(g, fermi, N, spec.L)
            B = attempt(f"s_matrix_direct(N={N}, s={g.s:.6g})",
                        lambda: s_matrix_direct(spec, fermi, g.s, N, grids.n_steps))
            if B is None:
                continue
            direct_max = max(direct_max, float(np.abs(A.matrix() - B.matrix()).max()))
            n_direct += 1

    # variance kernel oracle on a coarse sub-loop at the smallest N
    sub = s_loop(gaps[:: max(1, grids.n_s // 64)], fermi, N_list[0], spec.L)
    vcheck = attempt("variance_image_sum", lambda: variance_image_sum(sub, spec.T))

    residuals = {}
    if chern_total is not None and nodes is not None:
        residuals["chern_vs_nodes"] = abs(chern_total - nodes)
    if nodes is not None and winding is not None:
        residuals["nodes_vs_winding"] = abs(nodes - winding)
    Q_max = Q[-1][1]
    if winding is not None and Q_max is not None:
        residuals["charge_vs_winding"] = abs(Q_max + winding)
    if winding is not None and q_lim is not None:
        residuals["limit_charge_vs_winding"] = abs(q_lim.value + winding)
    integers = [chern_total, nodes, winding]
    if None not in integers and len(set(integers)) != 1:
        failures.append(f"integers disagree: chern={chern_total}, nodes={nodes}, winding={winding}")
    if "charge_vs_winding" in residuals and residuals["charge_vs_winding"] > tol_Q:
        failures.append(f"|<Q1>(N={N_list[-1]}) + winding| = {residuals['charge_vs_winding']:.3g} > {tol_Q}")
    verdict = not failures and None not in integers and "charge_vs_winding" in residuals

    return PumpReport(
        E_F=fermi.E_F, gap_index=cert.n, n_filled=n_filled, chern_total=chern_total, chern_per_band=per_band,
        node_count=nodes, winding_u_minus=winding, Q1_of_N=Q, varQ1_of_N=var, Q1_error_estimates=qerr,
        Q1_limit=None if q_lim is None else q_lim.value, varQ1_limit=v_lim,
        convergence_rate=None if study is None else study.rate_r,
        convergence={} if study is None else study.to_dict(),
        variance_rate=var_rate,
        kappa_L_min=None if study is None else study.kappa_L_min,
        kappa_L_mean=None if study is None else study.kappa_L_mean,
        direct_vs_closed_max=direct_max if n_direct else None, direct_checks=n_direct,
        unitarity_max=unit, variance_check={} if vcheck is None else vcheck.to_dict(),
        identity_verdict=bool(verdict), residuals=residuals, failures=failures, tol_Q=tol_Q,
        certificate=cert.to_dict(), runtime_s=time.perf_counter() - t0,
    )
