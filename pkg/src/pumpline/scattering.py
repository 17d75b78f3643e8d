"""Scattering matrix of the pump truncated to N periods, chi_[0, NL](x) V(x, s).

Conventions (absolute plane-wave phases, unit incoming amplitude):

    left incidence:   e^{ipx} + r e^{-ipx}  (x <= 0),    t e^{ipx}   (x >= NL)
    right incidence:  t' e^{-ipx}           (x <= 0),    e^{-ipx} + r' e^{ipx}  (x >= NL)

With these phases time reversal gives t' = t.

Two independent routes are provided.  The closed form expresses r_N, t_N
through the Floquet data (kappa, u_pm) of one period; the direct solver
integrates the ODE across the whole window and matches plane waves at
both ends.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .bands import GapCertificate
from .errors import IllConditionedError, NumericalError
from .gapstates import GapState, gap_states
from .potential import FermiPoint, PotentialSpec
from .transfer import DEFAULT_N_STEPS, transfer_batch

MAX_GROWTH = 35.0  # N kappa L cap for the direct solver
MAX_COND = 1e12


@dataclass(frozen=True)
class ScatteringMatrix:
    r: complex
    t: complex
    r_prime: complex
    t_prime: complex
    E: float
    s: float
    N: int  # 0 marks the N -> infinity limit

    def matrix(self) -> np.ndarray:
        """S = [[r, t'], [t, r']]; entry (i, j) scatters from lead j into lead i."""
        return np.array([[self.r, self.t_prime], [self.t, self.r_prime]])

    def unitarity_residual(self) -> float:
        S = self.matrix()
        return float(np.abs(S.conj().T @ S - np.eye(2)).max())

    def symmetry_residual(self) -> float:
        return abs(self.t - self.t_prime)

    def row(self, j: int = 1) -> tuple[complex, complex]:
        return (self.r, self.t_prime) if j == 1 else (self.t, self.r_prime)


def s_matrix_closed_form(gap: GapState, fermi: FermiPoint, N: int, L: float) -> ScatteringMatrix:
    """r_N, t_N from the Floquet data of a single period.

        r_N = -u_- (1 - a^2) / (1 - a^2 w)
        t_N = (-1)^{nN} a e^{-ipNL} (1 - w) / (1 - a^2 w)

    with a = exp(-kappa N L) and w = u_- / u_+.  The right-incidence
    reflection r'_N = -conj(u_+) e^{-2ipNL} (1 - a^2) / (1 - a^2 w) is the
    unitary completion -conj(r) t / conj(t), written so that it stays
    finite when t vanishes.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    p = fermi.p
    a = math.exp(-gap.kappa * N * L)
    w = gap.u_minus * gap.u_plus.conjugate()
    denom = 1.0 - a * a * w
    if abs(denom) < 1e-12:
        raise NumericalError("closed-form scattering amplitudes are singular (|1 - a^2 w| < 1e-12)")
    sign = -1.0 if (gap.n * N) % 2 else 1.0
    r = -gap.u_minus * (1.0 - a * a) / denom
    t = sign * a * cmath.exp(-1j * p * N * L) * (1.0 - w) / denom
    r_prime = -gap.u_plus.conjugate() * cmath.exp(-2j * p * N * L) * (1.0 - a * a) / denom
    return ScatteringMatrix(r=r, t=t, r_prime=r_prime, t_prime=t, E=fermi.E_F, s=gap.s, N=N)


def limit_s_matrix(gap: GapState) -> ScatteringMatrix:
    """N -> infinity: r = -u_-, t = t' = 0, r' = -conj(u_+) (phase referred to the right end)."""
    return ScatteringMatrix(r=-gap.u_minus, t=0j, r_prime=-gap.u_plus.conjugate(), t_prime=0j,
                            E=gap.E_F, s=gap.s, N=0)


def _solve_matched(A: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    scale = np.linalg.norm(A, axis=0)
    cond = np.linalg.cond(A / scale)
    if not cond < MAX_COND:
        raise IllConditionedError(f"{what} matching system has condition number {cond:.3g}; "
                                  "use the closed form")
    return np.linalg.solve(A, rhs)


def s_matrix_direct(spec: PotentialSpec, fermi: FermiPoint, s: float, N: int,
                    n_steps: int = DEFAULT_N_STEPS) -> ScatteringMatrix:
    """All four amplitudes from the ODE propagator across [0, NL]; no unitarity is imposed.

    The known outgoing wave is carried through the barrier (backwards for
    left incidence, forwards for right incidence), so only O(1) quantities
    are matched and the exponentially large solutions never cancel.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    p = fermi.p
    NL = N * spec.L
    P = transfer_batch(spec, fermi.E_F, s, 0.0, NL, N * n_steps)
    D = P[0, 0] + P[1, 1]
    if abs(D) > 2.0:
        growth = math.log((abs(D) + math.sqrt(D * D - 4.0)) / 2.0)
        if growth > MAX_GROWTH:
            raise IllConditionedError(f"N kappa L = {growth:.3g} exceeds {MAX_GROWTH}; use the closed form")
    P_inv = np.array([[P[1, 1], -P[0, 1]], [-P[1, 0], P[0, 0]]])  # det P = 1
    plus = np.array([1.0, 1j * p])
    minus = np.array([1.0, -1j * p])
    phase = cmath.exp(1j * p * NL)

    # left incidence: (1, ip) + r (1, -ip) = t * P^{-1} e^{ipNL} (1, ip)
    y = P_inv @ (phase * plus)
    r, t = _solve_matched(np.column_stack([minus, -y]), -plus, "left-incidence")
    # right incidence: t' P (1, -ip) = e^{-ipNL} (1, -ip) + r' e^{ipNL} (1, ip)
    z = P @ minus
    t_prime, r_prime = _solve_matched(np.column_stack([z, -phase * plus]), minus / phase,
                                      "right-incidence")
    return ScatteringMatrix(r=complex(r), t=complex(t), r_prime=complex(r_prime), t_prime=complex(t_prime),
                            E=fermi.E_F, s=float(s), N=N)


def closed_form_loop(gaps: list[GapState], fermi: FermiPoint, N: int, L: float) -> list[ScatteringMatrix]:
    return [s_matrix_closed_form(g, fermi, N, L) for g in gaps]


@dataclass
class ConvergenceStudy:
    rows: list             # dicts: N, max_dev_r, max_abs_t, mean_log_dev_r, mean_log_abs_t
    rate_r: float          # fitted decay rate of |r_N + u_-| per period
    rate_t: float          # fitted decay rate of |t_N| per period
    kappa_L_min: float
    kappa_L_max: float
    kappa_L_mean: float

    @property
    def rate_r_ratio(self) -> float:
        """Fitted rate of |r_N + u_-| over its asymptotic value 2 kappa L."""
        return self.rate_r / (2.0 * self.kappa_L_mean)

    @property
    def rate_t_ratio(self) -> float:
        return self.rate_t / self.kappa_L_mean

    def to_dict(self) -> dict:
        return {"rows": self.rows, "rate_r": self.rate_r, "rate_t": self.rate_t,
                "kappa_L_min": self.kappa_L_min, "kappa_L_max": self.kappa_L_max,
                "kappa_L_mean": self.kappa_L_mean, "rate_r_ratio": self.rate_r_ratio,
                "rate_t_ratio": self.rate_t_ratio}


FLOOR = 1e-13


def _fit_rate(Ns, logs) -> float:
    Ns, logs = np.asarray(Ns, float), np.asarray(logs, float)
    if Ns.size < 2:
        return math.nan
    return -float(np.polyfit(Ns, logs, 1)[0])


def convergence_study(spec: PotentialSpec, fermi: FermiPoint, cert: GapCertificate, N_list, s_grid,
                      n_steps: int = DEFAULT_N_STEPS) -> ConvergenceStudy:
    """Approach of the truncated pump to the quantized regime as N grows.

    The deviations |r_N + u_-| and |t_N| are tabulated (maximum over the
    s-grid) and their decay rates fitted from the loop average of the log.
    Since r_N + u_- = u_- a^2 (1 - w) / (1 - a^2 w), the slope approaches
    -2 kappa L only once a^2 is small; at small kappa L the denominator
    biases the fitted rate over short N ranges.  Points at the
    floating-point floor are excluded from fits.
    """
    N_list = [int(N) for N in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be strictly ascending")
    gaps = gap_states(spec, fermi, cert, np.asarray(s_grid, dtype=float), n_steps)
    kappa = np.array([g.kappa for g in gaps])
    um = np.array([g.u_minus for g in gaps])
    rows = []
    for N in N_list:
        S = closed_form_loop(gaps, fermi, N, spec.L)
        dev = np.abs(np.array([m.r for m in S]) + um)
        tt = np.abs(np.array([m.t for m in S]))
        rows.append({
            "N": N,
            "max_dev_r": float(dev.max()),
            "max_abs_t": float(tt.max()),
            "mean_log_dev_r": float(np.mean(np.log(np.maximum(dev, 1e-300)))),
            "mean_log_abs_t": float(np.mean(np.log(np.maximum(tt, 1e-300)))),
        })
    devs = [r["max_dev_r"] for r in rows]
    for a, b, r in zip(devs, devs[1:], rows[1:]):
        if a > FLOOR and b > a * (1.0 + 1e-9):
            raise NumericalError(f"|r_N + u_-| does not decay monotonically (N={r['N']}: {b:.3g} > {a:.3g})")
    fit_r = [(r["N"], r["mean_log_dev_r"]) for r in rows if r["max_dev_r"] > 1e3 * FLOOR]
    fit_t = [(r["N"], r["mean_log_abs_t"]) for r in rows if r["max_abs_t"] > 1e3 * FLOOR]
    rate_r = _fit_rate(*zip(*fit_r)) if len(fit_r) >= 2 else math.nan
    rate_t = _fit_rate(*zip(*fit_t)) if len(fit_t) >= 2 else math.nan
    kL = kappa * spec.L
    return ConvergenceStudy(rows=rows, rate_r=rate_r, rate_t=rate_t,
                            kappa_L_min=float(kL.min()), kappa_L_max=float(kL.max()),
                            kappa_L_mean=float(kL.mean()))
