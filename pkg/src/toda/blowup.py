"""Blow-up diagnostics: peaks, local masses, Pohozaev arithmetic, rescaling.

At a concentration point the local masses sigma_i = int_{B_r} h_i e^{u_i}
obey the blow-up relation

    sigma_1^2 + sigma_2^2 - sigma_1 sigma_2 = 4 pi (sigma_1 + sigma_2),

each nonvanishing component carries at least 4 pi, and the admissible pairs
are exactly (4pi, 0), (0, 4pi), (4pi, 8pi), (8pi, 4pi), (8pi, 8pi).  The
finite-scale surrogate of the double limit r -> 0 after k -> infinity is a
scale-separation plateau: sigma_i(r) on logarithmic radii between 10 eps and
L/4, read off where |d sigma / d log r| is smallest.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.interpolate import make_interp_spline

from .entire import RadialProfile
from .errors import NumericError
from .geometry import Field, PolarGrid, TorusGrid, integrate, laplacian
from .meanfield import WeightData, cartan

__all__ = [
    "Peak",
    "MassProfile",
    "BlowupClass",
    "BlowupReport",
    "detect_peaks",
    "local_mass_profile",
    "plateau_sigma",
    "pohozaev_residual",
    "classify_blowup",
    "mass_exponents",
    "rescale_bubble",
    "bubble_deviation",
    "kelvin_transform",
    "green_representation_check",
    "blowup_report",
    "plant_bubble",
    "CartesianWindow",
]

FOUR_PI = 4.0 * np.pi

#: Admissible blow-up pairs in lexicographic order (ties break to the first).
ADMISSIBLE_PAIRS = (
    (0.0, FOUR_PI),
    (FOUR_PI, 0.0),
    (FOUR_PI, 2 * FOUR_PI),
    (2 * FOUR_PI, FOUR_PI),
    (2 * FOUR_PI, 2 * FOUR_PI),
)


# ----------------------------------------------------------------------------
# peaks
# ----------------------------------------------------------------------------

@dataclass
class Peak:
    component: int        # 0-based component index
    location: tuple       # (x, y)
    index: tuple          # grid indices (i, j)
    height: float         # lambda = u_i at the peak

    @property
    def eps(self) -> float:
        """Concentration scale e^{-lambda/2}."""
        return float(np.exp(-0.5 * self.height))


def detect_peaks(u: Field, grid=None, floor: float = 5.0):
    """Local maxima above ``floor`` on the torus, deduplicated within three
    cells (periodic metric), sorted by height descending."""
    grid = grid or u.grid
    if not isinstance(grid, TorusGrid):
        raise TypeError("peak detection is implemented for torus fields")
    peaks = []
    n, h = grid.n, grid.h
    for ci, c in enumerate(u.components):
        is_max = np.ones(c.shape, dtype=bool)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                is_max &= c >= np.roll(np.roll(c, di, axis=0), dj, axis=1)
        is_max &= c > floor
        for i, j in zip(*np.nonzero(is_max)):
            peaks.append(Peak(ci, (i * h, j * h), (int(i), int(j)), float(c[i, j])))
    peaks.sort(key=lambda p: -p.height)
    kept = []
    for p in peaks:
        dup = False
        for q in kept:
            if q.component != p.component:
                continue
            di = min(abs(p.index[0] - q.index[0]), n - abs(p.index[0] - q.index[0]))
            dj = min(abs(p.index[1] - q.index[1]), n - abs(p.index[1] - q.index[1]))
            if max(di, dj) <= 3:
                dup = True
                break
        if not dup:
            kept.append(p)
    return kept


# ----------------------------------------------------------------------------
# local masses
# ----------------------------------------------------------------------------

@dataclass
class MassProfile:
    radii: np.ndarray
    sigma: np.ndarray           # (N, len(radii)), nondecreasing in r
    center: tuple
    quad_error: np.ndarray = dfield(default_factory=lambda: np.zeros(0))

    def plateau(self):
        """Per-component plateau value and radius: the log-derivative
        |d sigma / d log r| is smallest there."""
        lr = np.log(self.radii)
        vals = np.empty(self.sigma.shape[0])
        rads = np.empty(self.sigma.shape[0])
        for i, sig in enumerate(self.sigma):
            d = np.abs(np.gradient(sig, lr))
            j = int(np.argmin(d))
            vals[i] = sig[j]
            rads[i] = self.radii[j]
        return vals, rads


def _torus_dist2(grid: TorusGrid, center):
    X, Y = grid.nodes()
    dx = grid.torus_delta(X, center[0])
    dy = grid.torus_delta(Y, center[1])
    return dx * dx + dy * dy


def local_mass_profile(u: Field, h, grid=None, center=(0.0, 0.0),
                       radii=None) -> MassProfile:
    """sigma_i(r) = int_{B_r(center)} h_i e^{u_i} on the given radii.

    Torus charts are injective only up to L/2: larger radii are rejected.
    The quadrature error estimate compares against the half-resolution
    (every-other-node) Richardson sum.
    """
    grid = grid or u.grid
    if not isinstance(grid, TorusGrid):
        raise TypeError("local mass profiles are implemented on the torus")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii > grid.length / 2.0) or np.any(radii <= 0):
        raise ValueError("radii must lie in (0, L/2] (chart injectivity)")
    hw = h.h if isinstance(h, WeightData) else (
        np.ones_like(u.components) if h is None else np.asarray(h, dtype=float))
    d2 = _torus_dist2(grid, center)
    sig = np.empty((u.n_components, len(radii)))
    qerr = np.empty(u.n_components)
    order = np.argsort(radii)
    for i, (ui, hi) in enumerate(zip(u.components, hw)):
        dens = hi * np.exp(ui)
        flat_d2 = d2.ravel()
        flat_dens = dens.ravel() * grid.weight
        idx = np.argsort(flat_d2)
        cum = np.cumsum(flat_dens[idx])
        pos = np.searchsorted(flat_d2[idx], radii[order] ** 2, side="right")
        vals = np.where(pos > 0, cum[np.maximum(pos - 1, 0)], 0.0)
        sig[i, order] = vals
        # Richardson: same disk sum on the n/2 subgrid
        sub = dens[::2, ::2] * (4.0 * grid.weight)
        subd = d2[::2, ::2]
        rmax = radii.max()
        qerr[i] = abs(sub[subd <= rmax**2].sum() - sig[i, order[-1]])
    return MassProfile(radii, sig, tuple(center), qerr)


def plateau_sigma(u: Field, h, grid, center, eps, n_radii: int = 25,
                  r_max=None):
    """Plateau masses on log-spaced radii between 10*eps and L/4 (or r_max)."""
    grid = grid or u.grid
    hi = min(grid.length / 4.0, r_max) if r_max else grid.length / 4.0
    lo = min(10.0 * eps, hi / 4.0)
    radii = np.geomspace(lo, hi, n_radii)
    prof = local_mass_profile(u, h, grid, center, radii)
    vals, rads = prof.plateau()
    return vals, rads, prof


# ----------------------------------------------------------------------------
# Pohozaev arithmetic and classification
# ----------------------------------------------------------------------------

def pohozaev_residual(sigma1: float, sigma2: float) -> float:
    """sigma1^2 + sigma2^2 - sigma1 sigma2 - 4 pi (sigma1 + sigma2)."""
    s1, s2 = float(sigma1), float(sigma2)
    return s1 * s1 + s2 * s2 - s1 * s2 - FOUR_PI * (s1 + s2)


@dataclass
class BlowupClass:
    pair: tuple
    distance: float
    admissible: bool
    floor_violations: tuple   # 1-based components with 0 << sigma_i < 4 pi


def classify_blowup(sigma1: float, sigma2: float, tol: float = 0.05) -> BlowupClass:
    """Nearest admissible pair in Euclidean distance.

    Flags "admissible" iff the distance is below tol * 4 pi; exact ties break
    to the lexicographically smaller pair (always flagged by their distance).
    Components with sigma_i > tol * 4 pi are also checked against the mass
    floor sigma_i >= 4 pi.
    """
    s = np.array([float(sigma1), float(sigma2)])
    if np.any(s < 0):
        raise ValueError("masses must be nonnegative")
    pairs = np.asarray(ADMISSIBLE_PAIRS)
    d = np.linalg.norm(pairs - s[None, :], axis=1)
    j = int(np.argmin(d))  # stable: first of equals = lexicographically smaller
    floor_bad = tuple(int(i) + 1 for i in range(2)
                      if s[i] > tol * FOUR_PI and s[i] < FOUR_PI * (1.0 - tol))
    return BlowupClass(tuple(pairs[j]), float(d[j]), bool(d[j] < tol * FOUR_PI),
                       floor_bad)


def mass_exponents(sigma1: float, sigma2: float):
    """m_1 = (2 sigma1 - sigma2)/2pi, m_2 = (2 sigma2 - sigma1)/2pi."""
    s1, s2 = float(sigma1), float(sigma2)
    return ((2.0 * s1 - s2) / (2.0 * np.pi), (2.0 * s2 - s1) / (2.0 * np.pi))


# ----------------------------------------------------------------------------
# rescaling
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CartesianWindow:
    """Uniform Cartesian grid on [-W, W]^2 in rescaled units y = (x - x_k)/eps."""

    half_width: float
    n: int
    eps: float
    center: tuple

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def h(self):
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def area(self):
        return (2.0 * self.half_width) ** 2

    def nodes(self):
        y = np.linspace(-self.half_width, self.half_width, self.n)
        return np.meshgrid(y, y, indexing="ij")


def _bilinear_periodic(c, grid: TorusGrid, X, Y):
    n, h = grid.n, grid.h
    fx = (X / h) % n
    fy = (Y / h) % n
    i0 = np.floor(fx).astype(int) % n
    j0 = np.floor(fy).astype(int) % n
    tx = fx - np.floor(fx)
    ty = fy - np.floor(fy)
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    return (c[i0, j0] * (1 - tx) * (1 - ty) + c[i1, j0] * tx * (1 - ty)
            + c[i0, j1] * (1 - tx) * ty + c[i1, j1] * tx * ty)


def rescale_bubble(u: Field, grid, peak: Peak, window: float,
                   n_out: int = 201) -> Field:
    """Zoom y = (x - x_k)/eps with v_i(y) = u_i(x_k + eps y) - lambda_k.

    Bilinear resampling on a window |y| <= min(window, 1000, 0.25 L / eps);
    the window must fit inside the injectivity radius (eps * window <= L/2).
    v carries its CartesianWindow grid; v at the origin vanishes in the peak
    component by construction.
    """
    grid = grid or u.grid
    if not isinstance(grid, TorusGrid):
        raise TypeError("rescaling is implemented on torus fields")
    eps = peak.eps
    cap = min(1000.0, 0.25 * grid.length / eps)
    W = float(min(window, cap))
    if eps * window > grid.length / 2.0:
        raise ValueError(
            f"window {window} at eps {eps:.3e} exceeds the injectivity radius")
    win = CartesianWindow(W, n_out, eps, peak.location)
    Yx, Yy = win.nodes()
    X = peak.location[0] + eps * Yx
    Y = peak.location[1] + eps * Yy
    comps = np.stack([_bilinear_periodic(c, grid, X, Y) - peak.height
                      for c in u.components])
    return Field(win, comps, gauge="none")


def bubble_deviation(v: Field, v0):
    """sup |v_i - v0_i| over the window, per component and overall max.

    ``v0`` may be a RadialProfile evaluated at |y| (use the scale-matched
    reference, i.e. the lambda = 0 bubble, since rescaled fields satisfy
    v(0) = 0) or a Field on the same window.
    """
    win = v.grid
    if isinstance(v0, RadialProfile):
        Yx, Yy = win.nodes()
        rr = np.maximum(np.hypot(Yx, Yy), 1e-12)
        ref = v0.eval(np.log(rr).ravel()).reshape(v0.n_components, *rr.shape)
    elif isinstance(v0, Field):
        ref = v0.components
    else:
        raise TypeError("v0 must be a RadialProfile or a Field on the window")
    k = min(v.components.shape[0], ref.shape[0])
    dev = np.abs(v.components[:k] - ref[:k]).max(axis=(1, 2))
    return dev, float(dev.max())


# ----------------------------------------------------------------------------
# Kelvin transform
# ----------------------------------------------------------------------------

def kelvin_transform(u):
    """Conformal inversion v(x) = u(x/|x|^2) - 4 log |x|.

    RadialProfile on a symmetric s-grid: exact node permutation
    v(s) = u(-s) - 4 s (an involution to round-off).  Polar annulus fields:
    returns the field on the inverted annulus [1/r_out, 1/r_in] with quintic
    radial resampling.  The system is conformally invariant, so residuals are
    preserved up to grid truncation.
    """
    if isinstance(u, RadialProfile):
        s = u.s
        if abs(s[0] + s[-1]) > 1e-12:
            raise ValueError("Kelvin on profiles needs a symmetric s-grid")
        ur = u.u[:, ::-1] - 4.0 * s[None, :]
        upr = -u.up[:, ::-1] - 4.0
        return RadialProfile(s, ur, upr, mu=u.mu, label=u.label + "+kelvin")
    if isinstance(u, Field) and isinstance(u.grid, PolarGrid):
        g = u.grid
        if g.r_in <= 0:
            raise ValueError("Kelvin needs r_in > 0 (annulus to annulus)")
        new_grid = PolarGrid(1.0 / g.r_out, 1.0 / g.r_in, g.n_r, g.n_t,
                             g.inner_bc, g.outer_bc)
        r_new = new_grid.r
        src = 1.0 / r_new  # radii in the source annulus, decreasing
        comps = np.empty((u.n_components, *new_grid.shape))
        for i, c in enumerate(u.components):
            spl = make_interp_spline(g.r, c, k=5, axis=0)
            comps[i] = spl(src) - 4.0 * np.log(r_new)[:, None]
        return Field(new_grid, comps, gauge="none")
    raise TypeError("kelvin_transform expects a RadialProfile or polar Field")


# ----------------------------------------------------------------------------
# Green representation check
# ----------------------------------------------------------------------------

def green_representation_check(u: Field, h, grid=None, x=(0.0, 0.0)) -> float:
    """Evaluate u_1(x) - inf_boundary u_1
    - (1/2pi) int log(1/|x-y|) (2 h_1 e^{u_1} - h_2 e^{u_2}) dy on a disk.

    The log kernel is cell-averaged on the singular cell (equal-area disk
    rule).  The value is a bounded harmonic remainder, reported not asserted.
    """
    grid = grid or u.grid
    if not isinstance(grid, PolarGrid) or not grid.has_axis:
        raise TypeError("the Green check runs on a polar disk grid")
    hw = h.h if isinstance(h, WeightData) else (
        np.ones_like(u.components) if h is None else np.asarray(h, dtype=float))
    dens = 2.0 * hw[0] * np.exp(u.components[0]) - hw[1] * np.exp(u.components[1])
    X, Y = grid.nodes()
    w = grid.quad_weights()
    d = np.hypot(X - x[0], Y - x[1])
    kern = np.zeros_like(d)
    mask = d > 0
    kern[mask] = np.log(1.0 / d[mask])
    a_eq = np.sqrt(w / np.pi)
    kern[~mask] = 0.5 - np.log(np.maximum(a_eq[~mask], 1e-300))
    near = mask & (d < a_eq)
    kern[near] = 0.5 - np.log(a_eq[near])
    if grid.has_axis:
        integral = float((kern[1:] * dens[1:] * w[1:]).sum()
                         + kern[0, 0] * dens[0, 0] * w[0, 0] * grid.n_t)
    else:
        integral = float((kern * dens * w).sum())
    ux = _sample_polar(u.components[0], grid, x)
    return float(ux - u.components[0][-1, :].min() - integral / (2.0 * np.pi))


def _sample_polar(c, grid: PolarGrid, x):
    r = float(np.hypot(*x))
    t = float(np.arctan2(x[1], x[0]) % (2.0 * np.pi))
    k = min(int(round((r - grid.r_in) / grid.dr)), grid.n_r)
    m = int(round(t / grid.dtheta)) % grid.n_t
    return float(c[k, m])


# ----------------------------------------------------------------------------
# synthesis and the full report
# ----------------------------------------------------------------------------

def plant_bubble(grid: TorusGrid, center, lam: float, kind: str = "symmetric",
                 n_components: int = 2) -> Field:
    """Sample an explicit bubble on the torus (minimal-image distance).

    kind "symmetric": both components lam - 2 log(1 + e^lam r^2/8);
    kind "liouville": component 1 carries lam - 2 log(1 + e^lam r^2/4), the
    second component (when present) is flat at the tail level -lam.
    """
    d2 = _torus_dist2(grid, center)
    if kind == "symmetric":
        v = lam - 2.0 * np.log1p(np.exp(lam) * d2 / 8.0)
        comps = np.stack([v] * n_components)
    elif kind == "liouville":
        v = lam - 2.0 * np.log1p(np.exp(lam) * d2 / 4.0)
        comps = np.stack([v] + [np.full(grid.shape, -lam)] * (n_components - 1))
    else:
        raise ValueError(f"unknown bubble kind {kind!r}")
    return Field(grid, comps, gauge="none")


@dataclass
class BlowupReport:
    peaks: list
    sigma: tuple
    plateau_radii: tuple
    pohozaev: float
    classification: BlowupClass
    exponents: tuple
    quad_error: tuple

    def to_dict(self):
        return {
            "peaks": [{"component": p.component, "x": p.location[0],
                       "y": p.location[1], "height": p.height, "eps": p.eps}
                      for p in self.peaks],
            "sigma": list(self.sigma),
            "plateau_radii": list(self.plateau_radii),
            "pohozaev_residual": self.pohozaev,
            "nearest_pair": list(self.classification.pair),
            "distance": self.classification.distance,
            "admissible": self.classification.admissible,
            "floor_violations": list(self.classification.floor_violations),
            "mass_exponents": list(self.exponents),
            "quad_error": list(self.quad_error),
        }


def blowup_report(u: Field, h=None, grid=None, floor: float = 5.0,
                  tol: float = 0.05) -> BlowupReport:
    """Peak detection + plateau masses + Pohozaev/classification in one call."""
    grid = grid or u.grid
    peaks = detect_peaks(u, grid, floor)
    if not peaks:
        raise NumericError(f"no peaks above floor {floor}")
    top = peaks[0]
    r_max = None
    for q in peaks[1:]:
        dx = grid.torus_delta(q.location[0], top.location[0])
        dy = grid.torus_delta(q.location[1], top.location[1])
        dist = float(np.hypot(dx, dy))
        r_max = dist / 2.0 if r_max is None else min(r_max, dist / 2.0)
    vals, rads, prof = plateau_sigma(u, h, grid, top.location, top.eps,
                                     r_max=r_max)
    if len(vals) == 1:
        vals = np.array([vals[0], 0.0])
        rads = np.array([rads[0], rads[0]])
    cls = classify_blowup(vals[0], vals[1], tol)
    return BlowupReport(
        peaks=peaks,
        sigma=(float(vals[0]), float(vals[1])),
        plateau_radii=(float(rads[0]), float(rads[1])),
        pohozaev=pohozaev_residual(vals[0], vals[1]),
        classification=cls,
        exponents=mass_exponents(vals[0], vals[1]),
        quad_error=tuple(float(q) for q in prof.quad_error),
    )
