"""Structured grids and elliptic building blocks.

Two domain types are supported:

* ``TorusGrid`` -- a flat square torus (periodic in both directions) with a
  spectral (FFT) Laplacian and zero-mean Poisson inverse.  With side length 1
  the total surface measure is 1, which is the bookkeeping the mean-field
  module assumes.
* ``PolarGrid`` -- a disk or annulus in polar coordinates with a second-order
  finite-volume Laplacian and a sparse Dirichlet solve.  When ``r_in == 0``
  the axis carries a single shared value and an averaged origin stencil.

Fields are immutable bundles of N scalar components on one grid.  All
operations are pure functions returning new arrays.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GaugeViolationError, NumericError, SolverFailureError

__all__ = [
    "TorusGrid",
    "PolarGrid",
    "Field",
    "make_torus_grid",
    "make_polar_grid",
    "integrate",
    "laplacian",
    "gradient",
    "inverse_laplacian_zero_mean",
    "dirichlet_solve",
    "dirichlet_energy",
    "save_snapshot",
    "load_snapshot",
]


# ----------------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusGrid:
    """Uniform n-by-n grid on the flat torus of side ``length``."""

    n: int
    length: float = 1.0

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def weight(self) -> float:
        """Quadrature weight per node, (L/n)^2."""
        return self.h * self.h

    @property
    def area(self) -> float:
        return self.length * self.length

    @property
    def shape(self):
        return (self.n, self.n)

    def nodes(self):
        """Node coordinates X[i,j] = i*h, Y[i,j] = j*h."""
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    def wavenumbers(self):
        """Angular wavenumbers (kx, ky) for rfft2 layout, shape (n, n//2+1)."""
        kx = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        ky = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)
        return np.meshgrid(kx, ky, indexing="ij")

    def torus_delta(self, x, center):
        """Signed displacement x - center wrapped to (-L/2, L/2]."""
        d = np.asarray(x) - np.asarray(center)
        L = self.length
        return (d + L / 2.0) % L - L / 2.0


@dataclass(frozen=True)
class PolarGrid:
    """Polar grid on the annulus r_in <= r <= r_out (disk when r_in = 0).

    Radial nodes r_k = r_in + k*dr for k = 0..n_r; angular nodes
    theta_m = 2*pi*m/n_t.  Fields are stored with shape (n_r+1, n_t); for a
    disk the axis row k = 0 holds a single shared value replicated over m.
    """

    r_in: float
    r_out: float
    n_r: int
    n_t: int
    inner_bc: str = "dirichlet"
    outer_bc: str = "dirichlet"

    def __post_init__(self):
        if self.r_in < 0 or self.r_out <= self.r_in:
            raise ValueError("need 0 <= r_in < r_out")
        if self.n_r < 4 or self.n_t < 8:
            raise ValueError("grid too coarse (need n_r >= 4, n_t >= 8)")
        if self.n_t % 2:
            raise ValueError("n_t must be even")

    @property
    def dr(self) -> float:
        return (self.r_out - self.r_in) / self.n_r

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / self.n_t

    @property
    def r(self):
        return self.r_in + np.arange(self.n_r + 1) * self.dr

    @property
    def theta(self):
        return np.arange(self.n_t) * self.dtheta

    @property
    def has_axis(self) -> bool:
        return self.r_in == 0.0

    @property
    def shape(self):
        return (self.n_r + 1, self.n_t)

    def nodes(self):
        """Cartesian coordinates (X, Y) of all nodes."""
        R, T = np.meshgrid(self.r, self.theta, indexing="ij")
        return R * np.cos(T), R * np.sin(T)

    def quad_weights(self):
        """Finite-volume cell areas; they partition the domain exactly."""
        r = self.r
        lo = np.maximum(r - self.dr / 2.0, self.r_in)
        hi = np.minimum(r + self.dr / 2.0, self.r_out)
        if self.has_axis:
            lo[0] = 0.0
        w_r = 0.5 * (hi**2 - lo**2) * self.dtheta
        w = np.repeat(w_r[:, None], self.n_t, axis=1)
        if self.has_axis:
            # single shared origin value: give the full axis cell to every
            # replicated entry / n_t so sums over the array stay exact
            w[0, :] = 0.5 * (hi[0] ** 2) * self.dtheta
        return w


@dataclass
class Field:
    """N scalar components on one grid, plus a gauge tag."""

    grid: object
    components: np.ndarray  # shape (N, *grid.shape)
    gauge: str = "none"     # "zero-mean" | "dirichlet" | "none"

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.ndim == 2:
            comps = comps[None]
        self.components = comps
        if self.components.shape[1:] != tuple(self.grid.shape):
            raise ValueError(
                f"component shape {self.components.shape[1:]} does not match "
                f"grid shape {self.grid.shape}"
            )

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def copy(self) -> "Field":
        return Field(self.grid, self.components.copy(), self.gauge)

    def zero_mean(self) -> "Field":
        """Project every component onto zero quadrature mean."""
        comps = np.empty_like(self.components)
        area = self.grid.area if isinstance(self.grid, TorusGrid) else integrate(
            np.ones(self.grid.shape), self.grid)
        for i, c in enumerate(self.components):
            comps[i] = c - integrate(c, self.grid) / area
        return Field(self.grid, comps, gauge="zero-mean")

    @classmethod
    def zeros(cls, grid, n_components, gauge="none") -> "Field":
        return cls(grid, np.zeros((n_components, *grid.shape)), gauge)


def make_torus_grid(n: int, length: float = 1.0) -> TorusGrid:
    """Torus grid constructor; n must be a power of two, n >= 8."""
    if n < 8 or (n & (n - 1)) != 0:
        raise ValueError(f"n must be a power of two >= 8, got {n}")
    if length <= 0:
        raise ValueError("length must be positive")
    return TorusGrid(n=int(n), length=float(length))


def make_polar_grid(r_in, r_out, n_r, n_t, inner_bc="dirichlet",
                    outer_bc="dirichlet") -> PolarGrid:
    return PolarGrid(float(r_in), float(r_out), int(n_r), int(n_t),
                     inner_bc, outer_bc)


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------

def integrate(f, grid) -> float:
    """Quadrature of a scalar component over the whole domain.

    Torus: uniform weights (exact for trigonometric polynomials below the
    Nyquist mode).  Polar: finite-volume cell areas (exact for constants).
    """
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite values in integrand")
    if isinstance(grid, TorusGrid):
        return float(f.sum() * grid.weight)
    if isinstance(grid, PolarGrid):
        w = grid.quad_weights()
        if grid.has_axis:
            # axis row is one shared value; count it once
            return float((f[1:] * w[1:]).sum() + f[0, 0] * w[0, 0] * grid.n_t)
        return float((f * w).sum())
    raise TypeError(f"unsupported grid type {type(grid)!r}")


# ----------------------------------------------------------------------------
# torus spectral operators
# ----------------------------------------------------------------------------

def _k2(grid: TorusGrid):
    kx, ky = grid.wavenumbers()
    return kx * kx + ky * ky


def laplacian(f, grid):
    """Laplacian of one component: spectral on the torus, FV 5-point on polar.

    On a polar grid the two bounding circles need data from outside the
    domain; those rows are returned as copies of the nearest interior row
    and should be excluded from error norms.
    """
    f = np.asarray(f, dtype=float)
    if isinstance(grid, TorusGrid):
        return np.fft.irfft2(-_k2(grid) * np.fft.rfft2(f), s=grid.shape)
    if isinstance(grid, PolarGrid):
        return _polar_laplacian(f, grid)
    raise TypeError(f"unsupported grid type {type(grid)!r}")


def gradient(f, grid: TorusGrid):
    """Spectral gradient (fx, fy) on the torus."""
    kx, ky = grid.wavenumbers()
    fh = np.fft.rfft2(np.asarray(f, dtype=float))
    fx = np.fft.irfft2(1j * kx * fh, s=grid.shape)
    fy = np.fft.irfft2(1j * ky * fh, s=grid.shape)
    return fx, fy


def inverse_laplacian_zero_mean(rhs, grid: TorusGrid, tol_mean=None):
    """Solve -Delta u = rhs - mean(rhs) with zero-mean u on the torus.

    The zero Fourier mode of ``rhs`` must vanish to ``tol_mean`` (default
    1e-10 * ||rhs||_inf); otherwise the gauge is violated.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise NumericError("non-finite right-hand side")
    scale = np.abs(rhs).max()
    tol = (1e-10 * scale if scale > 0 else 1e-10) if tol_mean is None else tol_mean
    mean = abs(integrate(rhs, grid))
    if mean > tol:
        raise GaugeViolationError(
            f"|mean rhs| = {mean:.3e} exceeds tolerance {tol:.3e}")
    k2 = _k2(grid)
    rh = np.fft.rfft2(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        uh = np.where(k2 > 0, rh / k2, 0.0)
    return np.fft.irfft2(uh, s=grid.shape)


# ----------------------------------------------------------------------------
# polar finite-volume Laplacian and Dirichlet solve
# ----------------------------------------------------------------------------

def _polar_index_maps(grid: PolarGrid):
    """Unknown numbering for the interior (origin shared as one dof)."""
    n_r, n_t = grid.n_r, grid.n_t
    idx = -np.ones((n_r + 1, n_t), dtype=int)
    count = 0
    if grid.has_axis:
        idx[0, :] = 0
        count = 1
        k_start = 1
    else:
        k_start = 1  # row 0 is the inner Dirichlet circle
    for k in range(k_start, n_r):
        idx[k, :] = np.arange(count, count + n_t)
        count += n_t
    return idx, count


@lru_cache(maxsize=16)
def _polar_operator(grid: PolarGrid):
    """Sparse finite-volume Laplacian on interior unknowns.

    Returns (A, B_in, B_out, idx, nunk): A acts on interior values; B_in and
    B_out carry the couplings to the inner/outer boundary circles (empty for
    the disk's inner side).
    """
    n_r, n_t = grid.n_r, grid.n_t
    dr, dt = grid.dr, grid.dtheta
    r = grid.r
    idx, nunk = _polar_index_maps(grid)

    rows, cols, vals = [], [], []
    b_in = sp.lil_matrix((nunk, n_t))
    b_out = sp.lil_matrix((nunk, n_t))

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    k_first = 1 if grid.has_axis else 1
    for k in range(k_first, n_r):
        rk = r[k]
        rp = rk + dr / 2.0
        rm = rk - dr / 2.0
        c_rad_p = rp / (rk * dr * dr)
        c_rad_m = rm / (rk * dr * dr)
        c_ang = 1.0 / (rk * rk * dt * dt)
        for m in range(n_t):
            i = idx[k, m]
            add(i, i, -(c_rad_p + c_rad_m + 2.0 * c_ang))
            mp, mm = (m + 1) % n_t, (m - 1) % n_t
            add(i, idx[k, mp], c_ang)
            add(i, idx[k, mm], c_ang)
            # outward neighbor
            if k + 1 == n_r:
                b_out[i, m] = c_rad_p
            else:
                add(i, idx[k + 1, m], c_rad_p)
            # inward neighbor
            if k - 1 == 0 and not grid.has_axis:
                b_in[i, m] = c_rad_m
            elif k - 1 == 0 and grid.has_axis:
                add(i, idx[0, 0], c_rad_m)
            else:
                add(i, idx[k - 1, m], c_rad_m)

    if grid.has_axis:
        # origin control cell of radius dr/2: Delta u(0) = 4(mean u_1 - u_0)/dr^2
        i0 = idx[0, 0]
        add(i0, i0, -4.0 / (dr * dr))
        for m in range(n_t):
            add(i0, idx[1, m], 4.0 / (dr * dr * n_t))

    A = sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(nunk, nunk)))
    return A, sp.csr_matrix(b_in), sp.csr_matrix(b_out), idx, nunk


def _polar_laplacian(f, grid: PolarGrid):
    """Apply the FV Laplacian; boundary rows are copied from the interior."""
    A, b_in, b_out, idx, nunk = _polar_operator(grid)
    vec = _gather_interior(f, grid, idx, nunk)
    out = A @ vec
    if not grid.has_axis:
        out = out + b_in @ f[0, :]
    out = out + b_out @ f[-1, :]
    res = _scatter_interior(out, grid, idx)
    res[-1, :] = res[-2, :]
    if not grid.has_axis:
        res[0, :] = res[1, :]
    return res


def _gather_interior(f, grid, idx, nunk):
    vec = np.zeros(nunk)
    mask = idx >= 0
    vec[idx[mask]] = f[mask]
    return vec


def _scatter_interior(vec, grid, idx):
    out = np.zeros(grid.shape)
    mask = idx >= 0
    out[mask] = vec[idx[mask]]
    return out


@lru_cache(maxsize=16)
def _polar_factor(grid: PolarGrid):
    """LU factorization of the (negated) interior Laplacian."""
    A, b_in, b_out, idx, nunk = _polar_operator(grid)
    try:
        solve = spla.factorized((-A).tocsc())
    except RuntimeError as exc:  # pragma: no cover - singular only if degenerate
        raise SolverFailureError(f"polar operator factorization failed: {exc}")
    return solve


def dirichlet_solve(rhs, grid: PolarGrid, boundary=(0.0, 0.0)):
    """Solve -Delta u = rhs with Dirichlet data on the bounding circles.

    ``boundary`` is (inner, outer); each entry is a scalar or an array of
    length n_t.  The inner value is ignored for a disk (r_in = 0).
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != tuple(grid.shape):
        raise ValueError("rhs shape does not match grid")
    if not np.all(np.isfinite(rhs)):
        raise NumericError("non-finite right-hand side")
    g_in = np.broadcast_to(np.asarray(boundary[0], dtype=float), (grid.n_t,)).copy()
    g_out = np.broadcast_to(np.asarray(boundary[1], dtype=float), (grid.n_t,)).copy()
    if not (np.all(np.isfinite(g_in)) and np.all(np.isfinite(g_out))):
        raise NumericError("non-finite boundary data")

    A, b_in, b_out, idx, nunk = _polar_operator(grid)
    solve = _polar_factor(grid)
    b = _gather_interior(rhs, grid, idx, nunk)
    b = b + b_out @ g_out
    if not grid.has_axis:
        b = b + b_in @ g_in
    vec = solve(b)
    if not np.all(np.isfinite(vec)):
        raise SolverFailureError("Dirichlet solve produced non-finite values")
    u = _scatter_interior(vec, grid, idx)
    u[-1, :] = g_out
    if not grid.has_axis:
        u[0, :] = g_in
    return u


def dirichlet_energy(u, v, grid: PolarGrid):
    """Discrete Dirichlet form int grad(u).grad(v) for fields vanishing on
    the boundary, consistent with the FV Laplacian: int (-Delta u) v."""
    A, b_in, b_out, idx, nunk = _polar_operator(grid)
    uu = _gather_interior(np.asarray(u, float), grid, idx, nunk)
    vv = _gather_interior(np.asarray(v, float), grid, idx, nunk)
    w = grid.quad_weights()
    wvec = _gather_interior(w, grid, idx, nunk)
    if grid.has_axis:
        wvec[idx[0, 0]] = w[0, 0] * grid.n_t
    return float(-(A @ uu) * wvec @ vv)


# ----------------------------------------------------------------------------
# snapshot I/O
# ----------------------------------------------------------------------------

def _grid_to_dict(grid):
    if isinstance(grid, TorusGrid):
        return {"type": "torus", "n": grid.n, "length": grid.length}
    if isinstance(grid, PolarGrid):
        return {"type": "polar", "r_in": grid.r_in, "r_out": grid.r_out,
                "n_r": grid.n_r, "n_t": grid.n_t,
                "inner_bc": grid.inner_bc, "outer_bc": grid.outer_bc}
    raise TypeError(f"unsupported grid type {type(grid)!r}")


def grid_from_dict(d):
    kind = d.get("type")
    if kind == "torus":
        return TorusGrid(n=int(d["n"]), length=float(d["length"]))
    if kind == "polar":
        return PolarGrid(float(d["r_in"]), float(d["r_out"]),
                         int(d["n_r"]), int(d["n_t"]),
                         d.get("inner_bc", "dirichlet"),
                         d.get("outer_bc", "dirichlet"))
    raise ValueError(f"unknown grid type {kind!r}")


def save_snapshot(field: Field, path: str) -> str:
    """Write a field as JSON header + flat little-endian f64 binary.

    ``path`` is the header path (``.json``); the binary goes next to it with
    the same stem and ``.bin`` suffix.  Returns the header path.
    """
    if not path.endswith(".json"):
        path = path + ".json"
    bin_name = os.path.basename(path)[:-5] + ".bin"
    bin_path = os.path.join(os.path.dirname(path), bin_name)
    header = {
        "grid": _grid_to_dict(field.grid),
        "components": field.n_components,
        "gauge": field.gauge,
        "dtype": "f64-le",
        "bin": bin_name,
    }
    data = np.ascontiguousarray(field.components, dtype="<f8")
    with open(bin_path, "wb") as fh:
        fh.write(data.tobytes())
    with open(path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_snapshot(path: str) -> Field:
    with open(path) as fh:
        header = json.load(fh)
    grid = grid_from_dict(header["grid"])
    n_comp = int(header["components"])
    if header.get("dtype", "f64-le") != "f64-le":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    bin_path = os.path.join(os.path.dirname(path), header["bin"])
    raw = np.fromfile(bin_path, dtype="<f8")
    comps = raw.reshape((n_comp, *grid.shape)).astype(float)
    return Field(grid, comps, gauge=header.get("gauge", "none"))
