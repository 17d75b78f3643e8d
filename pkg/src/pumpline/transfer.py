"""Transfer matrices of -psi'' + V(x, s) psi = E psi at fixed s.

The ODE is written as y' = A(x) y with y = (psi, psi') and
A = [[0, 1], [V - E, 0]].  It is integrated with the two-point
Gauss-Legendre Magnus method (order 4).  Every step is the exact
exponential of a traceless real 2x2 matrix, so each step has unit
determinant and Wronskian conservation is only spoiled by rounding.

All batched routines broadcast ``E`` and ``s`` against each other and work
on the flattened result, which lets band scans and s-loops run as a few
large numpy operations instead of Python loops.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError
from .potential import PotentialSpec

DEFAULT_N_STEPS = 2048

_GL_NODES = np.array([0.5 - math.sqrt(3.0) / 6.0, 0.5 + math.sqrt(3.0) / 6.0])
_MAX_CHUNK = 1 << 21  # steps * batch elements per chunk


def max_threads() -> int:
    """Parallelism cap from PUMPLINE_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("PUMPLINE_THREADS", "1")))
    except ValueError:
        return 1


def _flat_batch(E, s):
    E, s = np.broadcast_arrays(np.asarray(E, dtype=float), np.asarray(s, dtype=float))
    return E.shape, E.ravel(), s.ravel()


def _step_matrices(spec: PotentialSpec, E, s, x0: float, x1: float, n: int) -> np.ndarray:
    """Magnus propagators of the n uniform steps over [x0, x1]; shape (n, B, 2, 2)."""
    h = (x1 - x0) / n
    xs = x0 + h * (np.arange(n)[:, None] + _GL_NODES[None, :])
    q = spec.grid(xs.ravel(), s).reshape(n, 2, -1) - E[None, None, :]
    q1, q2 = q[:, 0], q[:, 1]
    # Omega = h/2 (A1 + A2) + sqrt(3)/12 h^2 [A2, A1] = [[alpha, h], [beta, -alpha]]
    alpha = (math.sqrt(3.0) / 12.0) * h * h * (q1 - q2)
    beta = 0.5 * h * (q1 + q2)
    z = alpha * alpha + h * beta  # Omega^2 = z * I
    r = np.sqrt(np.abs(z))
    pos = z >= 0
    with np.errstate(over="ignore", invalid="ignore"):
        c = np.where(pos, np.cosh(r), np.cos(r))
        shr = np.where(r > 1e-8, np.sinh(r) / np.where(r > 1e-8, r, 1.0), 1.0 + r * r / 6.0)
    sc = np.where(pos, shr, np.sinc(r / math.pi))
    out = np.empty(alpha.shape + (2, 2))
    out[..., 0, 0] = c + sc * alpha
    out[..., 0, 1] = sc * h
    out[..., 1, 0] = sc * beta
    out[..., 1, 1] = c - sc * alpha
    return out


def _ordered_product(G: np.ndarray) -> np.ndarray:
    """G[n-1] @ ... @ G[1] @ G[0] by pairwise reduction."""
    while G.shape[0] > 1:
        if G.shape[0] % 2:
            tail = G[-1:]
            G = np.concatenate([G[1:-1:2] @ G[0:-1:2], tail])
        else:
            G = G[1::2] @ G[0::2]
    return G[0]


def transfer_batch(spec: PotentialSpec, E, s, x0: float, x1: float, n_steps: int) -> np.ndarray:
    """Propagator from x0 to x1 for every (E, s) pair; shape ``broadcast(E, s).shape + (2, 2)``."""
    shape, Ef, sf = _flat_batch(E, s)
    out = np.empty((Ef.size, 2, 2))
    if x1 == x0:
        out[:] = np.eye(2)
        return out.reshape(shape + (2, 2))
    chunk = max(1, _MAX_CHUNK // n_steps)
    for lo in range(0, Ef.size, chunk):
        sl = slice(lo, lo + chunk)
        out[sl] = _ordered_product(_step_matrices(spec, Ef[sl], sf[sl], x0, x1, n_steps))
    return out.reshape(shape + (2, 2))


def _n_for(spec: PotentialSpec, x0: float, x1: float, n_steps: int) -> int:
    return max(1, int(math.ceil(n_steps * (x1 - x0) / spec.L - 1e-9)))


def propagate(spec: PotentialSpec, E: float, s: float, x0: float, x1: float, init,
              n_steps: int = DEFAULT_N_STEPS):
    """Carry (psi, psi') from x0 to x1.

    ``n_steps`` is the number of steps per period L; intervals of other length
    use proportionally many steps.  The global error is O((L / n_steps)^4).
    Complex initial data is allowed: the propagator is real, so real and
    imaginary parts evolve independently.
    """
    if x1 < x0:
        raise ValueError("propagate needs x1 >= x0")
    init = np.asarray(init)
    if init.shape != (2,) or not np.all(np.isfinite(init)):
        raise ValueError("init must be a finite (value, derivative) pair")
    P = transfer_batch(spec, E, s, x0, x1, _n_for(spec, x0, x1, n_steps))
    out = P @ init
    return out[0], out[1]


def propagate_path(spec: PotentialSpec, E, s, x0: float, x1: float, init: np.ndarray,
                   n_samples: int, n_steps: int = DEFAULT_N_STEPS) -> np.ndarray:
    """Solution sampled at ``n_samples`` equispaced points of [x0, x1] (endpoints included).

    ``s`` may be an array; ``init`` then has shape (B, 2).  Returns
    (n_samples, B, 2).  The step is the largest divisor of the sample
    spacing not exceeding L / n_steps.
    """
    _, Ef, sf = _flat_batch(E, s)
    init = np.asarray(init, dtype=float).reshape(Ef.size, 2)
    gaps = n_samples - 1
    per = max(1, int(math.ceil(n_steps * (x1 - x0) / (spec.L * gaps) - 1e-9)))
    G = _step_matrices(spec, Ef, sf, x0, x1, gaps * per)
    out = np.empty((n_samples, Ef.size, 2))
    y = init.copy()
    out[0] = y
    for i in range(gaps):
        for j in range(per):
            y = np.einsum("bij,bj->bi", G[i * per + j], y)
        out[i + 1] = y
    return out


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    E: float
    s: float
    est_error: float

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.entries))

    @property
    def trace(self) -> float:
        return float(self.entries[0, 0] + self.entries[1, 1])


def _error_estimate(fine: np.ndarray, coarse: np.ndarray, n_steps: int) -> np.ndarray:
    """Step-halving estimate for an order-4 method plus a rounding floor."""
    diff = np.abs(fine - coarse).max(axis=(-2, -1)) / 15.0
    scale = np.abs(fine).max(axis=(-2, -1))
    return diff + n_steps * np.finfo(float).eps * np.maximum(scale, 1.0) ** 2


def monodromy_batch(spec: PotentialSpec, E, s, n_steps: int = DEFAULT_N_STEPS) -> np.ndarray:
    """One-period transfer matrices (no error estimate)."""
    return transfer_batch(spec, E, s, 0.0, spec.L, n_steps)


def monodromy(spec: PotentialSpec, E: float, s: float, n_steps: int = DEFAULT_N_STEPS) -> TransferMatrix:
    """Map (psi(0), psi'(0)) -> (psi(L), psi'(L)); eigenvalues are (-1)^n e^{+-kappa L} in a gap."""
    if n_steps < 2 or n_steps % 2:
        raise ValueError("n_steps must be an even integer >= 2")
    fine = transfer_batch(spec, E, s, 0.0, spec.L, n_steps)
    coarse = transfer_batch(spec, E, s, 0.0, spec.L, n_steps // 2)
    err = float(_error_estimate(fine, coarse, n_steps))
    det = float(np.linalg.det(fine))
    if not abs(det - 1.0) <= 10.0 * err:
        raise IntegrationError(f"monodromy determinant {det!r} deviates from 1 by more than 10x "
                               f"the error estimate {err:.3g} (E={E}, s={s})")
    return TransferMatrix(entries=fine, E=float(E), s=float(s), est_error=err)


def discriminant(spec: PotentialSpec, E, s, n_steps: int = DEFAULT_N_STEPS):
    """tr M(E, s); |D| <= 2 inside bands, |D| > 2 in gaps.  Vectorized over E and s."""
    M = monodromy_batch(spec, E, s, n_steps)
    D = M[..., 0, 0] + M[..., 1, 1]
    return D if D.ndim else float(D)


def wronskian(f, fp, g, gp):
    """W(f, g) = f g' - f' g from values and derivatives at one point."""
    return f * gp - fp * g
