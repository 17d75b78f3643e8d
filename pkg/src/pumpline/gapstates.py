"""Real Floquet solutions at an in-gap energy and the phases they define.

At E_F inside gap n the monodromy M(E_F, s) has real eigenvalues
lambda_pm = (-1)^n exp(+-kappa L).  Their eigenvectors are the boundary
data (psi(0), psi'(0)) of the growing/decaying solutions psi_pm.  Matching
to a free wave exp(i p x) at x = 0 gives

    W_pm = psi_pm'(0) - i p psi_pm(0),     u_pm = W_pm / conj(W_pm),

which are unit complex numbers independent of the (real) normalization.
u_minus winds around the circle as s runs through a cycle; its winding
number is compared against the signed count of nodes of psi_minus that
cross x = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .bands import GapCertificate
from .errors import GapClosedError, NumericalError, RefinementError
from .potential import FermiPoint, PotentialSpec
from .transfer import DEFAULT_N_STEPS, monodromy, monodromy_batch, propagate, propagate_path, transfer_batch

MAX_SAMPLES = 1 << 20


@dataclass(frozen=True)
class GapState:
    s: float
    kappa: float
    n: int
    lambda_plus: float
    lambda_minus: float
    psi_plus_0: float
    psi_plus_prime_0: float
    psi_minus_0: float
    psi_minus_prime_0: float
    u_plus: complex
    u_minus: complex
    W_plus: complex
    W_minus: complex
    E_F: float


def _eigvec(M: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Unit eigenvectors of a batch of 2x2 matrices for the given eigenvalues."""
    a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
    v1 = np.stack([b, lam - a], axis=-1)
    v2 = np.stack([lam - d, c], axis=-1)
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    v = np.where((n1 >= n2)[..., None], v1, v2)
    return v / np.linalg.norm(v, axis=-1)[..., None]


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """psi(0) >= 0, falling back to psi'(0) > 0 when psi(0) = 0."""
    key = np.where(v[..., 0] != 0.0, v[..., 0], v[..., 1])
    return v * np.where(key < 0, -1.0, 1.0)[..., None]


def phase_from_boundary(psi0, dpsi0, p: float):
    """u = W / conj(W) with W = W(exp(ipx), psi)|_0 = psi'(0) - i p psi(0)."""
    W = np.asarray(dpsi0) - 1j * p * np.asarray(psi0)
    return W / np.conj(W), W


@dataclass
class _GapArrays:
    s: np.ndarray
    M: np.ndarray
    kappa: np.ndarray
    lam_plus: np.ndarray
    lam_minus: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray


def _gap_arrays(spec: PotentialSpec, E_F: float, s, n: int, n_steps: int) -> _GapArrays:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    M = monodromy_batch(spec, E_F, s, n_steps)
    D = M[:, 0, 0] + M[:, 1, 1]
    bad = np.abs(D) <= 2.0
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise GapClosedError(f"E_F={E_F} is not in a gap at s={s[j]} (|D| = {abs(D[j]):.6g})", s=float(s[j]))
    sigma = np.sign(D)
    if np.any(sigma != (-1) ** n):
        raise NumericalError(f"discriminant sign disagrees with gap index n={n}")
    root = np.sqrt(D * D - 4.0)
    big = np.abs(D) + root
    lam_p = sigma * big / 2.0
    lam_m = sigma * 2.0 / big
    vp = _fix_sign(_eigvec(M, lam_p))
    vm = _fix_sign(_eigvec(M, lam_m))
    for v, lam, name in ((vp, lam_p, "plus"), (vm, lam_m, "minus")):
        res = np.linalg.norm(np.einsum("bij,bj->bi", M, v) - lam[:, None] * v, axis=-1) / np.abs(lam)
        if res.max() > 1e-8:
            raise NumericalError(f"psi_{name} eigenvector residual {res.max():.3g} exceeds 1e-8")
    return _GapArrays(s=s, M=M, kappa=np.log(np.abs(lam_p)) / spec.L, lam_plus=lam_p, lam_minus=lam_m,
                      v_plus=vp, v_minus=vm)


def gap_solutions(spec: PotentialSpec, fermi: FermiPoint, cert: GapCertificate, s: float,
                  n_steps: int = DEFAULT_N_STEPS) -> GapState:
    """Floquet data of psi_pm at (E_F, s), including W_pm and u_pm."""
    monodromy(spec, fermi.E_F, s, n_steps)  # raises on integration failure
    g = _gap_arrays(spec, fermi.E_F, s, cert.n, n_steps)
    p = fermi.p
    up, Wp = phase_from_boundary(g.v_plus[0, 0], g.v_plus[0, 1], p)
    um, Wm = phase_from_boundary(g.v_minus[0, 0], g.v_minus[0, 1], p)
    return GapState(
        s=float(s), kappa=float(g.kappa[0]), n=cert.n,
        lambda_plus=float(g.lam_plus[0]), lambda_minus=float(g.lam_minus[0]),
        psi_plus_0=float(g.v_plus[0, 0]), psi_plus_prime_0=float(g.v_plus[0, 1]),
        psi_minus_0=float(g.v_minus[0, 0]), psi_minus_prime_0=float(g.v_minus[0, 1]),
        u_plus=complex(up), u_minus=complex(um), W_plus=complex(Wp), W_minus=complex(Wm),
        E_F=fermi.E_F,
    )


def gap_states(spec: PotentialSpec, fermi: FermiPoint, cert: GapCertificate, s,
               n_steps: int = DEFAULT_N_STEPS) -> list[GapState]:
    """Vectorized :func:`gap_solutions` over an array of s values (no per-point error estimate)."""
    g = _gap_arrays(spec, fermi.E_F, s, cert.n, n_steps)
    up, Wp = phase_from_boundary(g.v_plus[:, 0], g.v_plus[:, 1], fermi.p)
    um, Wm = phase_from_boundary(g.v_minus[:, 0], g.v_minus[:, 1], fermi.p)
    return [
        GapState(s=float(g.s[j]), kappa=float(g.kappa[j]), n=cert.n,
                 lambda_plus=float(g.lam_plus[j]), lambda_minus=float(g.lam_minus[j]),
                 psi_plus_0=float(g.v_plus[j, 0]), psi_plus_prime_0=float(g.v_plus[j, 1]),
                 psi_minus_0=float(g.v_minus[j, 0]), psi_minus_prime_0=float(g.v_minus[j, 1]),
                 u_plus=complex(up[j]), u_minus=complex(um[j]), W_plus=complex(Wp[j]),
                 W_minus=complex(Wm[j]), E_F=fermi.E_F)
        for j in range(g.s.size)
    ]


# ---------------------------------------------------------------------------
# winding of u

@dataclass
class PhaseTrack:
    s_samples: np.ndarray
    u_values: np.ndarray
    kappa: np.ndarray
    winding: int
    max_step_arg: float
    rounding_residual: float
    which: str = "minus"

    def rows(self):
        return [{"s": float(s), "Re_u": float(u.real), "Im_u": float(u.imag)}
                for s, u in zip(self.s_samples, self.u_values)]


def _u_samples(spec, fermi, cert, s, which, n_steps):
    g = _gap_arrays(spec, fermi.E_F, s, cert.n, n_steps)
    v = g.v_minus if which == "minus" else g.v_plus
    u, _ = phase_from_boundary(v[:, 0], v[:, 1], fermi.p)
    return u, g.kappa


def phase_loop(spec: PotentialSpec, fermi: FermiPoint, cert: GapCertificate, which: str = "minus",
               n_s_init: int = 64, reverse: bool = False, max_step: float = math.pi / 2,
               n_steps: int = DEFAULT_N_STEPS) -> PhaseTrack:
    """Sample u_which(s) on [0, T], bisecting until every phase step is below ``max_step``.

    The winding number is the sum of principal-branch increments over 2 pi.
    With ``reverse`` the loop is traversed from s = T down to s = 0.
    """
    if which not in ("plus", "minus"):
        raise ValueError("which must be 'plus' or 'minus'")
    s = np.linspace(0.0, spec.T, n_s_init + 1)
    u, kappa = _u_samples(spec, fermi, cert, s, which, n_steps)
    while True:
        steps = np.abs(np.angle(u[1:] * np.conj(u[:-1])))
        rel_jump = np.abs(np.diff(kappa)) / np.minimum(kappa[1:], kappa[:-1])
        need = (steps >= max_step) | (rel_jump > 0.1)
        if not need.any():
            break
        if s.size + need.sum() > MAX_SAMPLES:
            raise RefinementError("phase loop refinement exceeded 2^20 samples; the gap may close")
        mids = 0.5 * (s[:-1][need] + s[1:][need])
        um, km = _u_samples(spec, fermi, cert, mids, which, n_steps)
        order = np.argsort(np.concatenate([s, mids]), kind="stable")
        s = np.concatenate([s, mids])[order]
        u = np.concatenate([u, um])[order]
        kappa = np.concatenate([kappa, km])[order]
    if reverse:
        s, u, kappa = s[::-1], u[::-1], kappa[::-1]
    incr = np.angle(u[1:] * np.conj(u[:-1]))
    total = incr.sum() / (2.0 * math.pi)
    w = int(round(total))
    residual = abs(total - w)
    if residual > 1e-6:
        raise NumericalError(f"winding sum {total} is not an integer (loop not closed?)")
    return PhaseTrack(s_samples=s, u_values=u, kappa=kappa, winding=w,
                      max_step_arg=float(np.abs(incr).max()), rounding_residual=float(residual),
                      which=which)


# ---------------------------------------------------------------------------
# nodes of psi_minus near x = 0

@dataclass
class NodeTrack:
    count: int
    crossings: list = field(default_factory=list)     # (s, direction)
    trajectories: list = field(default_factory=list)  # (s, x0) for every node in the window
    n_s: int = 0


def _continued(v: np.ndarray) -> np.ndarray:
    """Flip signs along the ordered s-grid so consecutive vectors overlap positively."""
    v = v.copy()
    for j in range(1, len(v)):
        if v[j] @ v[j - 1] < 0:
            v[j] = -v[j]
    return v


def _profiles(spec, E, s, v, window, n_x, n_steps):
    """psi_minus and its derivative on n_x points of [-window, window]; (n_x, B, 2)."""
    P = transfer_batch(spec, E, s, -window, 0.0, max(1, int(math.ceil(n_steps * window / spec.L))))
    adj = np.empty_like(P)
    adj[:, 0, 0], adj[:, 1, 1] = P[:, 1, 1], P[:, 0, 0]
    adj[:, 0, 1], adj[:, 1, 0] = -P[:, 0, 1], -P[:, 1, 0]
    start = np.einsum("bij,bj->bi", adj / np.linalg.det(P)[:, None, None], v)
    return propagate_path(spec, E, s, -window, window, start, n_x, n_steps)


def _zeros(spec, E, s, xs, prof, n_steps):
    """Nodes in the window for one s: sign changes refined by root finding on the ODE solution."""
    psi = prof[:, 0]
    out = []
    for i in np.flatnonzero(psi[:-1] * psi[1:] < 0):
        if psi[i] == 0.0:
            out.append(float(xs[i]))
            continue
        x0, y0 = xs[i], prof[i]
        f = lambda x: propagate(spec, E, s, x0, x, y0, n_steps)[0] if x > x0 else y0[0]
        out.append(float(brentq(f, xs[i], xs[i + 1], xtol=1e-10)))
    return out


def node_tracks(spec: PotentialSpec, fermi: FermiPoint, cert: GapCertificate, window: float | None = None,
                n_s_init: int = 128, n_x: int = 257, reverse: bool = False,
                n_steps: int = DEFAULT_N_STEPS, max_refine: int = 12) -> NodeTrack:
    """Follow the nodes of psi_minus through [-window, window] over one cycle.

    A node passing x = 0 is seen as a sign change of psi_minus(0, s) along
    the sign-continued s-grid.  It counts -sign(d_s psi / d_x psi) at the
    crossing: +1 when the node moves to the right.
    """
    L = spec.L
    window = L / 4 if window is None else window
    if not 0 < window < L / 2:
        raise ValueError("window must lie in (0, L/2)")
    if n_x % 2 == 0:
        n_x += 1  # keep x = 0 on the grid
    xs = np.linspace(-window, window, n_x)
    i0 = n_x // 2
    E = fermi.E_F

    s = np.linspace(0.0, spec.T, n_s_init + 1)
    v = _gap_arrays(spec, E, s, cert.n, n_steps).v_minus
    for _ in range(max_refine + 1):
        vc = _continued(v)
        jump = np.linalg.norm(vc[1:] - vc[:-1], axis=-1)
        need = jump > 0.25
        if not need.any():
            break
        mids = 0.5 * (s[:-1][need] + s[1:][need])
        order = np.argsort(np.concatenate([s, mids]), kind="stable")
        s = np.concatenate([s, mids])[order]
        v = np.concatenate([v, _gap_arrays(spec, E, mids, cert.n, n_steps).v_minus])[order]
    else:
        raise RefinementError("psi_minus boundary data not resolved along the cycle")

    for _ in range(max_refine + 1):
        vc = _continued(v)
        prof = _profiles(spec, E, s, vc, window, n_x, n_steps)
        psi0, dpsi0 = prof[i0, :, 0], prof[i0, :, 1]
        zeros = [_zeros(spec, E, s[j], xs, prof[:, j], n_steps) for j in range(s.size)]
        crossings = []
        bad = np.zeros(s.size - 1, dtype=bool)
        for j in range(s.size - 1):
            if psi0[j] * psi0[j + 1] >= 0:
                continue
            dx = 0.5 * (dpsi0[j] + dpsi0[j + 1])
            if abs(dx) < 1e-8 * np.hypot(psi0[j], dpsi0[j]):
                raise RefinementError(f"degenerate node at x=0 near s={s[j]}: psi and psi' vanish together")
            ds = (psi0[j + 1] - psi0[j]) / (s[j + 1] - s[j])
            direction = -int(np.sign(ds / dx))
            # the same node must be visible on both sides of x = 0
            left = [z for z in zeros[j] if abs(z) < window / 2]
            right = [z for z in zeros[j + 1] if abs(z) < window / 2]
            if not left or not right:
                bad[j] = True
                continue
            xa = min(left, key=abs)
            xb = min(right, key=abs)
            if int(np.sign(xb - xa)) != direction:
                bad[j] = True
                continue
            crossings.append((float(0.5 * (s[j] + s[j + 1])), direction))
        if not bad.any():
            break
        mids = 0.5 * (s[:-1][bad] + s[1:][bad])
        order = np.argsort(np.concatenate([s, mids]), kind="stable")
        s = np.concatenate([s, mids])[order]
        v = np.concatenate([v, _gap_arrays(spec, E, mids, cert.n, n_steps).v_minus])[order]
    else:
        raise RefinementError("node crossings could not be resolved along the cycle")

    count = sum(d for _, d in crossings)
    if reverse:
        count = -count
        crossings = [(sc, -d) for sc, d in reversed(crossings)]
    traj = [(float(s[j]), z) for j in range(s.size) for z in zeros[j]]
    return NodeTrack(count=count, crossings=crossings, trajectories=traj, n_s=int(s.size))


def node_count(spec: PotentialSpec, fermi: FermiPoint, cert: GapCertificate, window: float | None = None,
               **kwargs) -> int:
    """Signed number of nodes of psi_minus crossing x = 0 rightwards in one cycle."""
    return node_tracks(spec, fermi, cert, window, **kwargs).count
