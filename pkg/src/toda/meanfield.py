"""Cartan algebra and the mean-field Toda functional.

The system on a closed surface of unit area reads

    -Delta u_i = sum_j rho_j a_ij (h_j e^{u_j} / int h_j e^{u_j} - 1),

the Euler-Lagrange system of

    J_rho(u) = 1/2 sum_ij a^ij int grad u_i . grad u_j
               + sum_j rho_j int u_j - sum_j rho_j log int h_j e^{u_j},

where (a_ij) is the SU(N+1) Cartan matrix and (a^ij) its inverse.  On a
torus of area != 1 the constant term generalizes to 1/area so the gauge
identity J(u + c) = J(u) survives; with length 1 the formulas above hold
verbatim.

All exponentials are evaluated as e^{u - max u} to survive blow-up-scale
fields (max u past 700).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericError
from .geometry import Field, TorusGrid, integrate, laplacian, load_snapshot

__all__ = [
    "CartanData",
    "WeightData",
    "MTClass",
    "cartan",
    "functional_value",
    "functional_gradient",
    "residual",
    "mt_classify",
    "condition_15",
    "condition_15a",
    "normalized_exp",
]

FOUR_PI = 4.0 * np.pi


# ----------------------------------------------------------------------------
# Cartan matrix
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CartanData:
    n: int
    a: np.ndarray       # (N, N) integer Cartan matrix
    a_inv: np.ndarray   # (N, N) inverse, all entries > 0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a))
        object.__setattr__(self, "a_inv", np.asarray(self.a_inv))


@lru_cache(maxsize=16)
def cartan(N: int) -> CartanData:
    """SU(N+1) Cartan matrix (2 on the diagonal, -1 adjacent) and inverse.

    The inverse has the closed form a^ij = min(i,j) (N+1-max(i,j)) / (N+1)
    (1-based indices); every entry is strictly positive.
    """
    if not 1 <= N <= 8:
        raise ValueError(f"rank must be in 1..8, got {N}")
    a = 2 * np.eye(N, dtype=int) - np.eye(N, k=1, dtype=int) - np.eye(N, k=-1, dtype=int)
    i = np.arange(1, N + 1)
    a_inv = np.minimum.outer(i, i) * (N + 1 - np.maximum.outer(i, i)) / (N + 1)
    assert np.abs(a @ a_inv - np.eye(N)).max() < 1e-14
    assert a_inv.min() > 0
    return CartanData(n=N, a=a, a_inv=a_inv)


# ----------------------------------------------------------------------------
# weights h_i
# ----------------------------------------------------------------------------

@dataclass
class WeightData:
    """Positive weights h_i on a grid, with cached Delta log h."""

    grid: object
    h: np.ndarray  # (N, *grid.shape), strictly positive

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if self.h.ndim == 2:
            self.h = self.h[None]
        if self.h.min() <= 0:
            raise ValueError("weights must be strictly positive")
        self._dlog = None

    @property
    def n_components(self):
        return self.h.shape[0]

    def dlog(self):
        """Delta log h_i per component (spectral on the torus, FV on polar)."""
        if self._dlog is None:
            self._dlog = np.stack([laplacian(np.log(c), self.grid) for c in self.h])
        return self._dlog

    @classmethod
    def const(cls, grid, n_components, value=1.0):
        return cls(grid, np.full((n_components, *grid.shape), float(value)))

    @classmethod
    def cos_bump(cls, grid: TorusGrid, n_components, amplitude=1.0, mode=1,
                 component=None):
        """h = exp(amplitude * cos(2 pi mode x / L)), on all components or one."""
        X, _ = grid.nodes()
        bump = np.exp(amplitude * np.cos(2.0 * np.pi * mode * X / grid.length))
        h = np.ones((n_components, *grid.shape))
        targets = range(n_components) if component is None else [component]
        for i in targets:
            h[i] = bump
        return cls(grid, h)

    @classmethod
    def from_preset(cls, grid, n_components, spec: dict):
        """Build from a JSON-style preset spec.

        {"preset": "const", "value": 1.0} or
        {"preset": "cos-bump", "amplitude": a, "mode": m, "component": i|null}
        or {"snapshot": "path"}.
        """
        if "snapshot" in spec:
            f = load_snapshot(spec["snapshot"])
            return cls(f.grid, f.components)
        name = spec.get("preset", "const")
        if name == "const":
            return cls.const(grid, n_components, spec.get("value", 1.0))
        if name == "cos-bump":
            return cls.cos_bump(grid, n_components,
                                amplitude=spec.get("amplitude", 1.0),
                                mode=spec.get("mode", 1),
                                component=spec.get("component"))
        raise ValueError(f"unknown weight preset {name!r}")


def _as_weights(h, grid, n_components):
    if h is None:
        return WeightData.const(grid, n_components)
    if isinstance(h, WeightData):
        return h
    return WeightData(grid, h)


# ----------------------------------------------------------------------------
# normalized exponentials and the functional
# ----------------------------------------------------------------------------

def normalized_exp(u: Field, h: WeightData):
    """Densities omega_i = h_i e^{u_i} / int h_i e^{u_i} and the log integrals.

    Computed via the shift e^{u - max u} so blow-up scale fields do not
    overflow.  Returns (omega, log_ints) with int omega_i = 1 exactly in
    quadrature.
    """
    grid = u.grid
    omega = np.empty_like(u.components)
    log_ints = np.empty(u.n_components)
    for i, (ui, hi) in enumerate(zip(u.components, h.h)):
        m = ui.max()
        if not np.isfinite(m):
            raise NumericError(f"component {i}: non-finite field, max(u) = {m}")
        e = hi * np.exp(ui - m)
        z = integrate(e, grid)
        if z <= 0 or not np.isfinite(z):
            raise NumericError(f"component {i}: int h e^u = {z}")
        omega[i] = e / z
        log_ints[i] = m + np.log(z)
    return omega, log_ints


def functional_value(u: Field, rho, h=None, grid=None) -> float:
    """J_rho(u); the Dirichlet part is assembled as sum a^ij int (-Delta u_i) u_j."""
    grid = grid or u.grid
    rho = np.asarray(rho, dtype=float)
    N = u.n_components
    h = _as_weights(h, grid, N)
    C = cartan(N)
    lap = [laplacian(c, grid) for c in u.components]
    dirich = 0.0
    for i in range(N):
        for j in range(N):
            dirich += C.a_inv[i, j] * integrate(-lap[i] * u.components[j], grid)
    _, log_ints = normalized_exp(u, h)
    means = np.array([integrate(c, grid) for c in u.components]) / grid.area
    return float(0.5 * dirich + np.dot(rho, means) - np.dot(rho, log_ints))


def functional_gradient(u: Field, rho, h=None, grid=None) -> Field:
    """L^2 gradient of J_rho: component k is
    sum_j a^kj (-Delta u_j) + rho_k / area - rho_k omega_k."""
    grid = grid or u.grid
    rho = np.asarray(rho, dtype=float)
    N = u.n_components
    h = _as_weights(h, grid, N)
    C = cartan(N)
    lap = np.stack([laplacian(c, grid) for c in u.components])
    omega, _ = normalized_exp(u, h)
    g = np.einsum("kj,j...->k...", C.a_inv, -lap)
    for k in range(N):
        g[k] += rho[k] / grid.area - rho[k] * omega[k]
    return Field(grid, g, gauge=u.gauge)


def residual(u: Field, rho, h=None, grid=None) -> Field:
    """Euler-Lagrange residual r_i = -Delta u_i - sum_j rho_j a_ij (omega_j - 1/area).

    Identically equal to sum_j a_ij grad_j, so it vanishes exactly where the
    gradient does.
    """
    grid = grid or u.grid
    rho = np.asarray(rho, dtype=float)
    N = u.n_components
    h = _as_weights(h, grid, N)
    C = cartan(N)
    lap = np.stack([laplacian(c, grid) for c in u.components])
    omega, _ = normalized_exp(u, h)
    r = -lap.copy()
    for i in range(N):
        for j in range(N):
            r[i] -= rho[j] * C.a[i, j] * (omega[j] - 1.0 / grid.area)
    return Field(grid, r, gauge="none")


# ----------------------------------------------------------------------------
# criticality classification and the existence conditions
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MTClass:
    """Moser-Trudinger classification of rho; indices are 1-based (u_1..u_N)."""

    kind: str               # "subcritical" | "critical" | "supercritical"
    indices: tuple = ()


def mt_classify(rho, tol: float = 1e-12) -> MTClass:
    """Position of rho relative to the coercivity threshold 4*pi per component."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho components must be positive")
    over = np.nonzero(rho > FOUR_PI + tol)[0]
    if over.size:
        return MTClass("supercritical", tuple(int(i) + 1 for i in over))
    crit = np.nonzero(np.abs(rho - FOUR_PI) <= tol)[0]
    if crit.size:
        return MTClass("critical", tuple(int(i) + 1 for i in crit))
    return MTClass("subcritical")


def condition_15(h1, rho2: float, K=None, grid=None):
    """Pointwise test of Delta log h_1 + (8 pi - rho_2) - 2 K > 0.

    ``h1`` is the first weight component (array or WeightData, in which case
    component 0 is used).  Returns (holds, min value).
    """
    if isinstance(h1, WeightData):
        grid = grid or h1.grid
        dlog = h1.dlog()[0]
    else:
        if grid is None:
            raise ValueError("grid required when h1 is a bare array")
        dlog = laplacian(np.log(np.asarray(h1, dtype=float)), grid)
    lhs = dlog + (8.0 * np.pi - float(rho2))
    if K is not None:
        lhs = lhs - 2.0 * np.asarray(K, dtype=float)
    lhs = _interior_values(lhs, grid)
    mn = float(lhs.min())
    return mn > 0.0, mn


def condition_15a(h: WeightData, K=None, grid=None):
    """Pointwise test of min_i Delta log h_i + 4 pi - 2 K > 0 for i = 1, 2."""
    grid = grid or h.grid
    dlog = h.dlog()
    lhs = np.minimum(dlog[0], dlog[1]) + FOUR_PI
    if K is not None:
        lhs = lhs - 2.0 * np.asarray(K, dtype=float)
    lhs = _interior_values(lhs, grid)
    mn = float(lhs.min())
    return mn > 0.0, mn


def _interior_values(arr, grid):
    """Drop boundary rows on polar grids (the FV Laplacian copies them)."""
    if isinstance(grid, TorusGrid):
        return arr
    lo = 0 if grid.has_axis else 1
    return arr[lo:-1]
