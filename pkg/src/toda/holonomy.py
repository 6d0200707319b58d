"""Flat connection and loop holonomy for Toda solutions.

A solution u = (u_1..u_N) of -Delta u_i = sum_j a_ij e^{u_j} determines
auxiliary potentials

    u_i = 2 wt_i - 2 wt_{i-1},   sum_i wt_i = 0,
    wt_0 = -(1/(2(N+1))) sum_i (N - i + 1) u_i,

and shifted w_i = wt_i - i log 2.  The su(N+1)-valued one-form
alpha = U dz + V dzbar with

    U = -diag((w_i)_z) + superdiag(f_i e^{w_i - w_{i-1}}),
    V = -U^dagger            (real w; f_i = h_i^{1/2}, 1 for constant h)

is flat exactly when u solves the system (zero curvature).  The shift is
log 2 and the diagonal carries the minus sign: these are the choices that
close the zero-curvature identity, verified on the explicit symmetric
solution (a smooth solution must transport to the identity).

Loop transport solves dg/dtheta + alpha_theta g = 0 around a circle with
alpha_theta = i r (U e^{i theta} - V e^{-i theta}); eigenphases beta_i are
read from eigenvalues e^{-2 pi i beta_i}.  A field behaving like
mu_i log|x| at the puncture transports to phases determined by

    beta_i - beta_{i-1} = -mu_i / 2,    sum_j beta_j = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.linalg import schur
from scipy.optimize import linear_sum_assignment

from .entire import RadialProfile
from .errors import HolonomyAccuracyError
from .geometry import Field, TorusGrid, gradient

__all__ = [
    "WFields",
    "ConnectionSample",
    "HolonomyResult",
    "u_to_w",
    "connection_sample",
    "holonomy_loop",
    "expected_phases",
    "match_phases",
    "curvature",
    "gauge_radial",
    "GaugeRadialResult",
]

LOG_SHIFT = np.log(2.0)


# ----------------------------------------------------------------------------
# w-fields
# ----------------------------------------------------------------------------

def _wtilde_weights(N: int):
    """Coefficient matrix W with wt_i = sum_j W[i, j] u_j (rows i = 0..N)."""
    W = np.zeros((N + 1, N))
    W[0] = -(N - np.arange(1, N + 1) + 1) / (2.0 * (N + 1))
    for i in range(1, N + 1):
        W[i] = W[i - 1]
        W[i, i - 1] += 0.5
    return W


class WFields:
    """Potentials wt_i and first derivatives, samplable along circles.

    ``sample(r, thetas)`` returns (values, d/dr, (1/r) d/dtheta), each of
    shape (N+1, len(thetas)).  Radial profiles have exact polar derivatives;
    torus fields use spectral derivatives interpolated bicubically around a
    chart center.
    """

    def __init__(self, N, kind, sampler):
        self.N = N
        self.kind = kind
        self._sampler = sampler

    def sample(self, r, thetas):
        if r <= 0:
            raise ValueError("r must be positive")
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        return self._sampler(float(r), thetas)

    @classmethod
    def from_radial_profile(cls, profile: RadialProfile) -> "WFields":
        N = profile.n_components
        W = _wtilde_weights(N)
        wt = W @ profile.u    # (N+1, n_s)
        wtp = W @ profile.up  # d/ds = r d/dr
        splines = [CubicSpline(profile.s, row) for row in wt]
        dsplines = [CubicSpline(profile.s, row) for row in wtp]
        s_lo, s_hi = profile.s[0], profile.s[-1]

        def sampler(r, thetas):
            s = np.log(r)
            if not (s_lo <= s <= s_hi):
                raise ValueError(f"radius r = {r} outside the profile range")
            T = len(thetas)
            vals = np.repeat(np.array([f(s) for f in splines])[:, None], T, axis=1)
            dr = np.repeat(np.array([f(s) for f in dsplines])[:, None] / r, T, axis=1)
            dth = np.zeros((N + 1, T))
            return vals, dr, dth

        return cls(N, "radial", sampler)

    @classmethod
    def from_torus_field(cls, field: Field, center) -> "WFields":
        grid = field.grid
        if not isinstance(grid, TorusGrid):
            raise TypeError("from_torus_field needs a torus field")
        N = field.n_components
        W = _wtilde_weights(N)
        wt = np.einsum("ij,j...->i...", W, field.components)
        wx = np.empty_like(wt)
        wy = np.empty_like(wt)
        for i in range(N + 1):
            wx[i], wy[i] = gradient(wt[i], grid)
        # periodic bicubic interpolation on a padded chart
        n, L = grid.n, grid.length
        pad = 4
        ax = np.arange(-pad, n + pad) * grid.h
        def wrap(a):
            return np.pad(a, ((pad, pad), (pad, pad)), mode="wrap")
        sp_w = [RectBivariateSpline(ax, ax, wrap(wt[i]), kx=3, ky=3) for i in range(N + 1)]
        sp_x = [RectBivariateSpline(ax, ax, wrap(wx[i]), kx=3, ky=3) for i in range(N + 1)]
        sp_y = [RectBivariateSpline(ax, ax, wrap(wy[i]), kx=3, ky=3) for i in range(N + 1)]
        cx, cy = center

        def sampler(r, thetas):
            ct, st = np.cos(thetas), np.sin(thetas)
            x = (cx + r * ct) % L
            y = (cy + r * st) % L
            vals = np.stack([f(x, y, grid=False) for f in sp_w])
            gx = np.stack([f(x, y, grid=False) for f in sp_x])
            gy = np.stack([f(x, y, grid=False) for f in sp_y])
            return vals, gx * ct + gy * st, -gx * st + gy * ct

        return cls(N, "torus", sampler)


def u_to_w(u) -> WFields:
    """Build WFields from a torus Field (chart at the domain center) or a
    RadialProfile."""
    if isinstance(u, RadialProfile):
        return WFields.from_radial_profile(u)
    if isinstance(u, Field):
        c = (u.grid.length / 2.0, u.grid.length / 2.0)
        return WFields.from_torus_field(u, c)
    raise TypeError(f"unsupported input {type(u)!r}")


def wtilde_values(u: Field) -> np.ndarray:
    """Pointwise wt_i arrays for a Field (used by invariants/tests)."""
    W = _wtilde_weights(u.n_components)
    return np.einsum("ij,j...->i...", W, u.components)


# ----------------------------------------------------------------------------
# connection assembly (batched over theta)
# ----------------------------------------------------------------------------

@dataclass
class ConnectionSample:
    point: tuple          # (r, theta)
    U: np.ndarray         # (N+1, N+1) complex
    V: np.ndarray
    alpha_theta: np.ndarray


def _h_batch(h_sampler, r, thetas, N):
    """Weights h_i on the circle as an (N, T) array (ones when absent)."""
    T = len(thetas)
    if h_sampler is None:
        return np.ones((N, T))
    h = np.asarray(h_sampler(r, thetas), dtype=float)
    return np.broadcast_to(h, (N, T)) if h.ndim <= 1 else h


def _U_batch(w: WFields, r, thetas, h_sampler=None):
    """U(theta) stacked as (T, N+1, N+1)."""
    vals, dr, dth = w.sample(r, thetas)
    N = w.N
    wv = vals - LOG_SHIFT * np.arange(N + 1)[:, None]
    wz = 0.5 * np.exp(-1j * thetas)[None, :] * (dr - 1j * dth)
    f = np.sqrt(_h_batch(h_sampler, r, thetas, N))
    T = len(thetas)
    U = np.zeros((T, N + 1, N + 1), dtype=complex)
    idx = np.arange(N + 1)
    U[:, idx, idx] = -wz.T
    for i in range(1, N + 1):
        U[:, i - 1, i] = f[i - 1] * np.exp(wv[i] - wv[i - 1])
    return U


def _alpha_theta_batch(w, r, thetas, h_sampler=None):
    U = _U_batch(w, r, thetas, h_sampler)
    V = -np.conj(np.swapaxes(U, 1, 2))
    e = np.exp(1j * thetas)[:, None, None]
    return 1j * r * (U * e - V / e)


def _alpha_r_batch(w, r, thetas, h_sampler=None):
    U = _U_batch(w, r, thetas, h_sampler)
    V = -np.conj(np.swapaxes(U, 1, 2))
    e = np.exp(1j * thetas)[:, None, None]
    return U * e + V / e


def connection_sample(w: WFields, point, h_sampler=None) -> ConnectionSample:
    """U, V and alpha_theta = i r (U e^{i theta} - V e^{-i theta}) at one
    point (r, theta); alpha_theta is traceless anti-Hermitian."""
    r, theta = point
    if r <= 0:
        raise ValueError("connection sample requires r > 0")
    th = np.array([float(theta)])
    U = _U_batch(w, r, th, h_sampler)[0]
    V = -U.conj().T
    at = 1j * r * (U * np.exp(1j * theta) - V * np.exp(-1j * theta))
    return ConnectionSample((r, theta), U, V, at)


# ----------------------------------------------------------------------------
# loop transport
# ----------------------------------------------------------------------------

@dataclass
class HolonomyResult:
    g: np.ndarray
    beta: np.ndarray            # eigenphases in (-1/2, 1/2], sorted ascending
    unitarity_defect: float
    det_defect: float
    r: float
    n_steps: int


def _rk4_time_loop(alphas, h):
    """RK4 for dg/dt = -A(t) g given samples at half-steps (2n+1 values)."""
    dim = alphas.shape[-1]
    g = np.eye(dim, dtype=complex)
    n = (len(alphas) - 1) // 2
    for k in range(n):
        A0, Am, A1 = alphas[2 * k], alphas[2 * k + 1], alphas[2 * k + 2]
        k1 = -A0 @ g
        k2 = -Am @ (g + 0.5 * h * k1)
        k3 = -Am @ (g + 0.5 * h * k2)
        k4 = -A1 @ (g + h * k3)
        g = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return g


def _phases_from_matrix(g):
    """Eigenphases via Schur: eigenvalues e^{-2 pi i beta}, beta in (-1/2, 1/2]."""
    T, _ = schur(np.asarray(g, dtype=complex), output="complex")
    ev = np.diag(T)
    beta = -np.angle(ev) / (2.0 * np.pi)
    beta = np.where(beta <= -0.5, beta + 1.0, beta)
    return np.sort(beta)


def _result_from_g(g, dim, r, n_steps, defect_tol):
    unit = float(np.abs(g.conj().T @ g - np.eye(dim)).max())
    det = float(abs(np.linalg.det(g) - 1.0))
    if max(unit, det) > defect_tol:
        raise HolonomyAccuracyError(
            f"transport defects {unit:.2e}/{det:.2e} exceed {defect_tol:.1e}; "
            "increase n_steps")
    return HolonomyResult(g, _phases_from_matrix(g), unit, det, float(r), n_steps)


def holonomy_loop(w: WFields, r: float, n_steps: int = 4096,
                  h_sampler=None, defect_tol: float = 1e-4) -> HolonomyResult:
    """Integrate dg/dtheta + alpha_theta g = 0 over [0, 2 pi], fixed-step RK4.

    The connection is su(N+1)-valued, so the unitarity/determinant defects of
    g measure pure integration error; they must stay below ``defect_tol`` or
    HolonomyAccuracyError suggests more steps.
    """
    if n_steps < 256:
        raise ValueError("n_steps must be at least 256")
    thetas = np.linspace(0.0, 2.0 * np.pi, 2 * n_steps + 1)
    alphas = _alpha_theta_batch(w, r, thetas, h_sampler)
    g = _rk4_time_loop(alphas, 2.0 * np.pi / n_steps)
    return _result_from_g(g, w.N + 1, r, n_steps, defect_tol)


# ----------------------------------------------------------------------------
# expected phases and matching
# ----------------------------------------------------------------------------

def expected_phases(mu):
    """Solve beta_i - beta_{i-1} = -mu_i/2 with sum beta = 0.

    Returns (raw, wrapped) with wrapped values in (-1/2, 1/2].
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if np.any(mu <= -2):
        raise ValueError("weights must satisfy mu_i > -2")
    N = mu.size
    beta0 = np.dot(N - np.arange(1, N + 1) + 1, mu) / (2.0 * (N + 1))
    beta = beta0 - 0.5 * np.concatenate([[0.0], np.cumsum(mu)])
    wrapped = np.mod(beta + 0.5, 1.0) - 0.5
    wrapped = np.where(wrapped <= -0.5, wrapped + 1.0, wrapped)
    return beta, wrapped


def _mod1_dist(a, b):
    d = np.abs(a - b) % 1.0
    return np.minimum(d, 1.0 - d)


def match_phases(beta, expected):
    """Optimal assignment of measured phases to expected ones (mod 1).

    Returns (matched, max_distance): ``matched[j]`` is the measured phase
    assigned to ``expected[j]``.  Eigenvalue order is arbitrary: holonomies
    are compared as conjugacy classes.
    """
    beta = np.asarray(beta, dtype=float)
    expected = np.asarray(expected, dtype=float)
    cost = _mod1_dist(beta[:, None], expected[None, :])
    rows, cols = linear_sum_assignment(cost)
    matched = np.empty_like(expected)
    matched[cols] = beta[rows]
    return matched, float(cost[rows, cols].max())


# ----------------------------------------------------------------------------
# curvature for non-constant weights
# ----------------------------------------------------------------------------

def curvature(w: WFields, h_sampler, point, dh_sampler=None, eps: float = 1e-5):
    """Curvature coefficient F_{r theta} of the connection with off-diagonal
    factors f_i = h_i^{1/2}.

    For w built from a solution of the weighted system the diagonal cancels
    identically, leaving

        F_{z zbar} = superdiag(-(f_i)_zbar E_i) + subdiag(-(f_i)_z E_i),
        F_{r theta} = -2 i r F_{z zbar},

    zero for constant h, anti-Hermitian with zero diagonal otherwise.
    ``dh_sampler(r, theta) -> (dh_dr, (1/r) dh_dtheta)`` supplies weight
    derivatives; symmetric differences with step ``eps`` are the fallback.
    """
    r, theta = point
    if r <= 0:
        raise ValueError("curvature sample requires r > 0")
    N = w.N
    th = np.array([float(theta)])
    vals, _, _ = w.sample(r, th)
    wv = vals[:, 0] - LOG_SHIFT * np.arange(N + 1)
    E = np.exp(wv[1:] - wv[:-1])

    if h_sampler is None:
        return np.zeros((N + 1, N + 1), dtype=complex)
    f0 = np.sqrt(np.asarray(h_sampler(r, th), dtype=float)).reshape(N)
    if dh_sampler is not None:
        dh_r, dh_t = dh_sampler(r, theta)
        df_r = np.asarray(dh_r, dtype=float) / (2.0 * f0)
        df_t = np.asarray(dh_t, dtype=float) / (2.0 * f0)
    else:
        def fval(rr, tt):
            return np.sqrt(np.asarray(h_sampler(rr, np.array([tt])), dtype=float)).reshape(N)
        r_lo = max(r - eps, 1e-12)
        df_r = (fval(r + eps, theta) - fval(r_lo, theta)) / (r + eps - r_lo)
        df_t = (fval(r, theta + eps) - fval(r, theta - eps)) / (2.0 * eps * r)
    fz = 0.5 * np.exp(-1j * theta) * (df_r - 1j * df_t)
    fzbar = np.conj(fz)

    F = np.zeros((N + 1, N + 1), dtype=complex)
    for i in range(1, N + 1):
        F[i - 1, i] = -fzbar[i - 1] * E[i - 1]
        F[i, i - 1] = -fz[i - 1] * E[i - 1]
    return -2j * r * F


# ----------------------------------------------------------------------------
# radial gauge (alpha_r = 0 gauge)
# ----------------------------------------------------------------------------

@dataclass
class GaugeRadialResult:
    holonomy: HolonomyResult
    alpha_r_defect: float
    r: float
    r0: float


def gauge_radial(w: WFields, r_loop: float, r0: float = 1e-3,
                 n_r: int = 2000, n_steps: int = 4096,
                 h_sampler=None, defect_tol: float = 1e-4) -> GaugeRadialResult:
    """Transport phi along rays by dphi/dr + alpha_r phi = 0, phi(r0) = I,
    build alpha~_theta = phi^-1 alpha_theta phi + phi^-1 d_theta phi at
    r_loop, and return its loop holonomy.

    alpha~_r vanishes by construction; the reported defect re-derives
    phi^-1 (d_r phi + alpha_r phi) at r_loop from stored phi slices with a
    one-sided 4th-order stencil.  Gauge transformations preserve the
    holonomy conjugacy class, so the eigenphases must match the direct loop.
    """
    if not 0 < r0 < r_loop:
        raise ValueError("need 0 < r0 < r_loop")
    thetas = np.linspace(0.0, 2.0 * np.pi, 2 * n_steps + 1)
    n_th = len(thetas)
    dim = w.N + 1
    phi = np.broadcast_to(np.eye(dim, dtype=complex), (n_th, dim, dim)).copy()
    rs = np.linspace(r0, r_loop, n_r + 1)
    dr = rs[1] - rs[0]

    def A(rr):
        return _alpha_r_batch(w, rr, thetas, h_sampler)

    keep = {}
    keep_idx = set(range(n_r - 4, n_r + 1))
    A0 = A(rs[0])
    for k in range(n_r):
        Am = A(rs[k] + 0.5 * dr)
        A1 = A(rs[k + 1])
        k1 = -np.einsum("tij,tjk->tik", A0, phi)
        k2 = -np.einsum("tij,tjk->tik", Am, phi + 0.5 * dr * k1)
        k3 = -np.einsum("tij,tjk->tik", Am, phi + 0.5 * dr * k2)
        k4 = -np.einsum("tij,tjk->tik", A1, phi + dr * k3)
        phi = phi + (dr / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        A0 = A1
        if k + 1 in keep_idx:
            keep[k + 1] = phi.copy()

    # alpha~_r defect at r_loop from the stored slices
    stack = np.stack([keep[k] for k in sorted(keep)])  # oldest..newest
    c = np.array([3.0, -16.0, 36.0, -48.0, 25.0]) / (12.0 * dr)
    dphi = np.einsum("c,ctij->tij", c, stack)
    phi_inv = np.linalg.inv(phi)
    defect_mat = np.einsum("tij,tjk->tik", phi_inv,
                           dphi + np.einsum("tij,tjk->tik", A(r_loop), phi))
    alpha_r_defect = float(np.abs(defect_mat).max())

    # gauge-transformed alpha~_theta on the loop circle
    at = _alpha_theta_batch(w, r_loop, thetas, h_sampler)
    ph = phi[:-1]
    m = ph.shape[0]
    kint = 1j * np.fft.fftfreq(m, d=1.0 / m)  # integer angular frequencies
    dph = np.fft.ifft(np.fft.fft(ph, axis=0) * kint[:, None, None], axis=0)
    dphi_theta = np.concatenate([dph, dph[:1]], axis=0)
    at_new = np.einsum("tij,tjk,tkl->til", phi_inv, at, phi) + \
        np.einsum("tij,tjk->tik", phi_inv, dphi_theta)

    g = _rk4_time_loop(at_new, 2.0 * np.pi / n_steps)
    hol = _result_from_g(g, dim, r_loop, n_steps, defect_tol)
    return GaugeRadialResult(hol, alpha_r_defect, float(r_loop), float(r0))
