"""Chern numbers of filled Bloch bands over the (k, s) torus.

The Bloch Hamiltonian is diagonalized in the plane-wave basis
exp(i (k + 2 pi m / L) x), |m| <= M_pw, so the eigenvectors are the Fourier
coefficients of the periodic part u_{nks}.  Curvature is measured with
gauge-invariant link variables (Fukui-Hatsugai-Suzuki): each plaquette
contributes the principal argument of a product of four unit overlaps, so
the band sum is an exact multiple of 2 pi.

Orientation: with k as the first lattice direction and s as the second,
(1 / 2 pi) * sum of plaquette phases equals the charge carried per cycle
in the +x direction.  Closing the k-direction uses u_{k + 2pi/L}(x) =
exp(-2 pi i x / L) u_k(x), i.e. a cyclic shift of the coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GapClosedError, RefinementError
from .potential import PotentialSpec, fourier_table

DEFAULT_M_PW = 12
DEFAULT_GRID = 32
MIN_LINK = 0.1
RESIDUAL_ERROR = 0.9 * math.pi


def _check_cutoff(spec: PotentialSpec, M_pw: int) -> None:
    if M_pw < spec.max_harmonic + 2:
        raise ValueError(f"plane-wave cutoff M_pw={M_pw} must be >= max harmonic + 2 "
                         f"= {spec.max_harmonic + 2}")


def bloch_hamiltonian(spec: PotentialSpec, k, s, M_pw: int = DEFAULT_M_PW) -> np.ndarray:
    """H_{mm'} = (k + 2 pi m / L)^2 delta_{mm'} + V_{m - m'}(s), m, m' in [-M_pw, M_pw].

    ``k`` and ``s`` broadcast; the result has shape ``broadcast.shape + (d, d)``
    with d = 2 M_pw + 1.
    """
    _check_cutoff(spec, M_pw)
    k, s = np.broadcast_arrays(np.asarray(k, dtype=float), np.asarray(s, dtype=float))
    shape = k.shape
    k, s = k.ravel(), s.ravel()
    m = np.arange(-M_pw, M_pw + 1)
    d = m.size
    table = fourier_table(spec, s, 2 * M_pw)  # (4 M_pw + 1, B)
    diff = m[:, None] - m[None, :] + 2 * M_pw
    H = np.moveaxis(table[diff], -1, 0).astype(complex)  # (B, d, d)
    kin = (k[:, None] + 2.0 * math.pi * m[None, :] / spec.L) ** 2
    H[:, np.arange(d), np.arange(d)] += kin
    return H.reshape(shape + (d, d))


@dataclass
class BlochGrid:
    N_k: int
    N_s: int
    M_pw: int
    energies: np.ndarray      # (N_k, N_s, d), ascending in the last axis
    eigenvectors: np.ndarray  # (N_k, N_s, d, d), column n is band n + 1


def bloch_grid(spec: PotentialSpec, N_k: int = DEFAULT_GRID, N_s: int = DEFAULT_GRID,
               M_pw: int = DEFAULT_M_PW) -> BlochGrid:
    k = 2.0 * math.pi * np.arange(N_k) / (spec.L * N_k)
    s = spec.T * np.arange(N_s) / N_s
    H = bloch_hamiltonian(spec, k[:, None], s[None, :], M_pw)
    E, U = np.linalg.eigh(H)
    return BlochGrid(N_k=N_k, N_s=N_s, M_pw=M_pw, energies=E, eigenvectors=U)


@dataclass(frozen=True)
class ChernResult:
    per_band: tuple[int, ...]
    total: int
    plaquette_residual: float
    integer_residual: float

    def to_dict(self) -> dict:
        return {
            "per_band": list(self.per_band),
            "total": self.total,
            "plaquette_residual": self.plaquette_residual,
            "integer_residual": self.integer_residual,
        }


def _links(vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit link variables for a set of bands; ``vecs`` has shape (N_k, N_s, d, nb).

    With nb > 1 the link is the determinant of the overlap matrix, which is
    the U(1) link of the multiplet and is insensitive to crossings inside it.
    """
    # wrap k: u at k + G is the coefficient vector shifted by one component
    k_next = np.concatenate([vecs[1:], np.roll(vecs[:1], -1, axis=2)], axis=0)
    s_next = np.roll(vecs, -1, axis=1)
    ov_k = np.einsum("ijan,ijam->ijnm", vecs.conj(), k_next)
    ov_s = np.einsum("ijan,ijam->ijnm", vecs.conj(), s_next)
    Uk = np.linalg.det(ov_k)
    Us = np.linalg.det(ov_s)
    smallest = min(np.abs(Uk).min(), np.abs(Us).min())
    if smallest < MIN_LINK:
        raise RefinementError(f"link variable of modulus {smallest:.3g} < {MIN_LINK}: "
                              "refine the (k, s) grid or check for band degeneracy")
    return Uk / np.abs(Uk), Us / np.abs(Us)


def _plaquette_phases(Uk: np.ndarray, Us: np.ndarray) -> np.ndarray:
    # U_k(i, j) U_s(i+1, j) / (U_k(i, j+1) U_s(i, j))
    Us_k_next = np.roll(Us, -1, axis=0)  # valid: the k-wrap shift is unitary
    Uk_s_next = np.roll(Uk, -1, axis=1)
    return np.angle(Uk * Us_k_next * np.conj(Uk_s_next) * np.conj(Us))


def _chern_of(vecs: np.ndarray) -> tuple[int, float, float]:
    F = _plaquette_phases(*_links(vecs))
    c = F.sum() / (2.0 * math.pi)
    return int(round(c)), float(np.abs(F).max()), float(abs(c - round(c)))


def chern_from_grid(grid: BlochGrid, n_filled: int, per_band: bool = True) -> ChernResult:
    """Lattice Chern numbers of the ``n_filled`` lowest bands of a precomputed grid."""
    d = grid.energies.shape[-1]
    if not 1 <= n_filled <= d:
        raise ValueError(f"n_filled must lie in [1, {d}]")
    total, res, ires = _chern_of(grid.eigenvectors[..., :n_filled])
    bands = []
    if per_band:
        for n in range(n_filled):
            c, r, ir = _chern_of(grid.eigenvectors[..., n:n + 1])
            bands.append(c)
            res, ires = max(res, r), max(ires, ir)
        if sum(bands) != total:
            raise RefinementError(f"per-band Chern numbers {bands} do not add up to the "
                                  f"multiplet value {total}; refine the grid")
    if res > RESIDUAL_ERROR:
        raise RefinementError(f"plaquette phase {res:.3f} too close to the branch cut; refine the grid")
    return ChernResult(per_band=tuple(bands), total=total, plaquette_residual=res, integer_residual=ires)


def chern_numbers(spec: PotentialSpec, n_filled: int, N_k: int = DEFAULT_GRID, N_s: int = DEFAULT_GRID,
                  M_pw: int = DEFAULT_M_PW, E_F: float | None = None, cert=None,
                  per_band: bool = True) -> ChernResult:
    """Chern numbers of the lowest ``n_filled`` bands on an N_k x N_s torus grid.

    With every plane-wave band filled only the total is returned.

    Refuses to run unless band ``n_filled`` is separated from band
    ``n_filled + 1`` on the whole grid; when ``E_F`` is given the gap is
    additionally certified from the transfer-matrix discriminant.
    """
    if cert is None and E_F is not None:
        from .bands import certify_gap

        cert = certify_gap(spec, E_F)
    if cert is not None and cert.n != n_filled:
        raise GapClosedError(f"E_F={cert.E_F} lies in gap {cert.n}, not above band {n_filled}")
    grid = bloch_grid(spec, N_k, N_s, M_pw)
    d = grid.energies.shape[-1]
    if n_filled == d:
        per_band = False  # bands near the cutoff mix; only the full-space link is meaningful
    if n_filled < d:
        top = grid.energies[..., n_filled - 1].max()
        bottom = grid.energies[..., n_filled].min()
        if not bottom - top > 1e-6:
            raise GapClosedError(f"no gap above band {n_filled}: band top {top:.6g}, "
                                 f"next band bottom {bottom:.6g}")
    return chern_from_grid(grid, n_filled, per_band=per_band)
