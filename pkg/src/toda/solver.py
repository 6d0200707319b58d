"""Solvers for the mean-field Toda system.

The workhorse is a semi-implicit gradient flow on J_rho: implicit in the
stiff coupled Laplacian (diagonalized per Fourier mode on the torus, per
cached sparse factorization on the annulus), explicit in the normalized
exponentials, with a backtracking line search enforcing descent.  Near a
root a damped inexact Newton iteration on the Euler-Lagrange residual takes
over; the linearization

    v_i -> -Delta v_i - sum_j rho_j a_ij (omega_j v_j - omega_j int omega_j v_j)

is applied matrix-free and solved by preconditioned GMRES ((-Delta + 1)^-1
diagonal in Fourier space / sparse LU).

Also here: warm-started continuation in rho for compactness probing, the
homogeneous-Dirichlet annulus system, e^v center of mass, and a bubble-path
minimax estimator returning an upper bound of the mountain-pass level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse.linalg as spla

from .blowup import plateau_sigma
from .errors import (InvalidFamilyError, LinearizationSingularError,
                     SolverFailureError, StagnationError)
from .geometry import (Field, PolarGrid, TorusGrid, dirichlet_energy,
                       dirichlet_solve, integrate, laplacian)
from .meanfield import (WeightData, cartan, functional_gradient,
                        functional_value, mt_classify, normalized_exp,
                        residual)

__all__ = [
    "SolveOptions",
    "SolveResult",
    "BranchPoint",
    "gradient_flow",
    "newton_refine",
    "solve_meanfield",
    "continuation",
    "dirichlet_solve_system",
    "dirichlet_functional",
    "dirichlet_residual",
    "center_of_mass",
    "minimax_estimate",
    "BubbleFamily",
    "MinimaxResult",
]


@dataclass
class SolveOptions:
    dt0: float = 1.0
    tol_res: float = 1e-9
    max_iters: int = 5000
    newton_switch_res: float = 1e-3
    shrink: float = 0.5
    grow: float = 1.25
    dt_max: float = 50.0
    dt_min: float = 1e-14
    newton_max_steps: int = 40
    krylov_maxiter: int = 20   # restart cycles of 100
    blowup_threshold: float = 12.0
    verbose: bool = False


@dataclass
class SolveResult:
    u: Field
    residual_norm: float
    J_value: float
    iterations: int
    converged: bool
    J_history: list = dfield(default_factory=list)
    message: str = ""


def _res_norm(u, rho, h):
    return float(np.abs(residual(u, rho, h).components).max())


def _forcing_term(res, tol_res):
    """Inexact-Newton linear tolerance: quadratic-phase eta ~ res, but never
    tighter than what pushing res below tol_res requires.  The floor keeps
    restarted GMRES away from its spectral round-off plateau (~1e-7 true
    reduction); Newton simply takes an extra cheap step instead.
    """
    eta = min(0.1, max(res, 0.5 * tol_res / max(res, 1e-300)))
    return float(np.clip(eta, 1e-6, 0.1))


def _linear_reduction(A, b, x):
    """|b - A x| / |b| for the stagnation check."""
    nb = np.linalg.norm(b)
    if nb == 0:
        return 0.0
    return float(np.linalg.norm(b - A.matvec(x)) / nb)


# ----------------------------------------------------------------------------
# torus flow
# ----------------------------------------------------------------------------

class _TorusStepper:
    """Applies (I + dt A^inv (-Delta))^-1 per Fourier mode."""

    def __init__(self, grid: TorusGrid, N: int):
        C = cartan(N)
        lam, Q = np.linalg.eigh(C.a_inv)
        self.lam, self.Q = lam, Q
        kx = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.h)
        ky = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.h)
        KX, KY = np.meshgrid(kx, ky, indexing="ij")
        self.k2 = KX * KX + KY * KY
        self.shape = grid.shape

    def implicit(self, comps, dt):
        hat = np.fft.rfft2(comps, axes=(1, 2))
        mixed = np.einsum("mk,k...->m...", self.Q.T, hat)
        mixed /= (1.0 + dt * self.lam[:, None, None] * self.k2[None])
        hat = np.einsum("km,m...->k...", self.Q, mixed)
        return np.fft.irfft2(hat, s=self.shape, axes=(1, 2))


def _project_zero_mean(comps, grid):
    return comps - comps.mean(axis=(1, 2), keepdims=True)


def gradient_flow(u0: Field, rho, h=None, grid=None,
                  opts: SolveOptions | None = None) -> SolveResult:
    """Semi-implicit descent flow for J_rho on the zero-mean torus slice.

    Each accepted step decreases J (backtracking line search on dt); the
    iteration stops at residual tol_res or max_iters.  Supercritical rho is
    allowed but convergence is then not promised.  Step underflow raises
    StagnationError carrying the best iterate.
    """
    opts = opts or SolveOptions()
    grid = grid or u0.grid
    rho = np.asarray(rho, dtype=float)
    N = u0.n_components
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    mt_classify(rho)  # validates positivity; supercritical proceeds anyway

    stepper = _TorusStepper(grid, N)
    u = Field(grid, _project_zero_mean(u0.components.copy(), grid), "zero-mean")
    J = functional_value(u, rho, h)
    hist = [J]
    dt = opts.dt0
    res = _res_norm(u, rho, h)
    it = 0
    while res > opts.tol_res and it < opts.max_iters:
        # u+ = (I + dt A^inv(-Delta))^-1 (u - dt N(u)): only the normalized
        # exponentials are explicit, so the step equals -dt (I + dt L)^-1 grad J
        # (a descent direction) while high modes are damped by 1/(1 + dt |k|^2).
        omega, _ = normalized_exp(u, h)
        nonlin = rho[:, None, None] / grid.area - rho[:, None, None] * omega
        accepted = False
        while not accepted:
            trial = stepper.implicit(u.components - dt * nonlin, dt)
            trial = _project_zero_mean(trial, grid)
            u_try = Field(grid, trial, "zero-mean")
            try:
                J_try = functional_value(u_try, rho, h)
            except Exception:
                J_try = np.inf
            if J_try <= J + 1e-12 * (1.0 + abs(J)):
                accepted = True
            else:
                dt *= opts.shrink
                if dt < opts.dt_min:
                    raise StagnationError(
                        f"flow step underflow at iteration {it} (res {res:.3e})",
                        result=SolveResult(u, res, J, it, False, hist,
                                           "stagnation"))
        u, J = u_try, J_try
        hist.append(J)
        dt = min(dt * opts.grow, opts.dt_max)
        res = _res_norm(u, rho, h)
        it += 1
        if opts.verbose and it % 50 == 0:
            print(f"  flow it {it}: res {res:.3e} J {J:.6e} dt {dt:.2f}")
    return SolveResult(u, res, J, it, bool(res <= opts.tol_res), hist,
                       "flow converged" if res <= opts.tol_res else "max_iters")


# ----------------------------------------------------------------------------
# Newton refinement (torus)
# ----------------------------------------------------------------------------

def _newton_operator_torus(u, rho, h, grid):
    N = u.n_components
    C = cartan(N)
    omega, _ = normalized_exp(u, h)
    shape = (N, *grid.shape)
    size = int(np.prod(shape))

    def matvec(x):
        phi = x.reshape(shape)
        out = np.stack([-laplacian(p, grid) for p in phi])
        for i in range(N):
            for j in range(N):
                mean_j = integrate(omega[j] * phi[j], grid)
                out[i] -= rho[j] * C.a[i, j] * (omega[j] * phi[j] - omega[j] * mean_j)
        return _project_zero_mean(out, grid).ravel()

    kx = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.h)
    ky = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.h)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    k2p1 = KX * KX + KY * KY + 1.0

    def precond(x):
        phi = x.reshape(shape)
        out = np.fft.irfft2(np.fft.rfft2(phi, axes=(1, 2)) / k2p1[None],
                            s=grid.shape, axes=(1, 2))
        return out.ravel()

    A = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
    M = spla.LinearOperator((size, size), matvec=precond, dtype=float)
    return A, M


def newton_refine(u: Field, rho, h=None, grid=None,
                  opts: SolveOptions | None = None) -> SolveResult:
    """Damped inexact Newton on the residual, matrix-free GMRES solves.

    Quadratic decrease near roots; raises LinearizationSingularError when the
    Krylov solve stagnates or damping cannot make progress (expected near the
    blow-up walls rho_i -> 4 pi Z).
    """
    opts = opts or SolveOptions()
    grid = grid or u.grid
    rho = np.asarray(rho, dtype=float)
    N = u.n_components
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    u = Field(grid, _project_zero_mean(u.components.copy(), grid), "zero-mean")
    res_f = residual(u, rho, h).components
    res = float(np.abs(res_f).max())
    hist = [functional_value(u, rho, h)]
    if res <= opts.tol_res:
        return SolveResult(u, res, hist[0], 0, True, hist, "already converged")

    for step in range(1, opts.newton_max_steps + 1):
        floor_guard = 1e-8 * max(1.0, float(np.abs(u.components).max()))
        A, M = _newton_operator_torus(u, rho, h, grid)
        b = -res_f.ravel()
        eta = _forcing_term(res, opts.tol_res)
        sol, info = spla.gmres(A, b, M=M, rtol=eta, atol=0.0,
                               restart=100, maxiter=opts.krylov_maxiter)
        if info != 0 and _linear_reduction(A, b, sol) > 0.9:
            if res <= floor_guard:
                # rhs is at the spectral evaluation floor; nothing to solve
                return SolveResult(u, res, hist[-1], step - 1,
                                   bool(res <= opts.tol_res), hist,
                                   "stalled at evaluation floor")
            raise LinearizationSingularError(
                f"GMRES stagnated at Newton step {step} (res {res:.3e}); "
                "linearization is singular or near-singular on the gauge slice")
        delta = _project_zero_mean(sol.reshape((N, *grid.shape)), grid)
        t = 1.0
        while t >= 1e-4:
            u_try = Field(grid, u.components + t * delta, "zero-mean")
            try:
                r_try = residual(u_try, rho, h).components
            except Exception:
                t *= 0.5
                continue
            res_try = float(np.abs(r_try).max())
            if res_try <= (1.0 - 0.5 * t) * res + 1e-15:
                break
            t *= 0.5
        else:
            if res <= floor_guard:
                return SolveResult(u, res, hist[-1], step - 1,
                                   bool(res <= opts.tol_res), hist,
                                   "stalled at evaluation floor")
            raise LinearizationSingularError(
                f"Newton step rejected at step {step} (res {res:.3e}): no "
                "damping factor achieves descent")
        u, res_f, res = u_try, r_try, res_try
        hist.append(functional_value(u, rho, h))
        if res <= opts.tol_res:
            return SolveResult(u, res, hist[-1], step, True, hist, "newton converged")
    return SolveResult(u, res, hist[-1], opts.newton_max_steps, False, hist,
                       "newton max steps")


def solve_meanfield(u0: Field, rho, h=None, grid=None,
                    opts: SolveOptions | None = None) -> SolveResult:
    """Flow to newton_switch_res, then Newton to tol_res (the standard
    pipeline used by the CLI and continuation)."""
    opts = opts or SolveOptions()
    flow_opts = SolveOptions(**{**opts.__dict__})
    flow_opts.tol_res = max(opts.newton_switch_res, opts.tol_res)
    r = gradient_flow(u0, rho, h, grid, flow_opts)
    if r.residual_norm <= opts.tol_res:
        return r
    try:
        rn = newton_refine(r.u, rho, h, grid, opts)
    except LinearizationSingularError:
        if r.converged or r.residual_norm <= opts.newton_switch_res:
            # fall back to plain flow at the tight tolerance
            tight = SolveOptions(**{**opts.__dict__})
            rn = gradient_flow(r.u, rho, h, grid, tight)
        else:
            raise
    rn.J_history = r.J_history + rn.J_history[1:]
    return rn


# ----------------------------------------------------------------------------
# continuation
# ----------------------------------------------------------------------------

@dataclass
class BranchPoint:
    rho: np.ndarray
    u: Field
    max_u: tuple
    sigma: tuple
    J_value: float
    residual_norm: float
    converged: bool
    blowup_suspected: bool
    classification: str


def continuation(rho_path, h=None, grid=None, opts: SolveOptions | None = None,
                 u0: Field | None = None):
    """Warm-started solves along a rho path (compactness probing).

    Records per point the componentwise max of u and the plateau local
    masses around the dominant maximum; flags blow-up when max u exceeds
    opts.blowup_threshold or convergence fails.  A failure at the first
    point propagates; later failures mark the point and continue warm.
    """
    opts = opts or SolveOptions()
    rho_path = [np.asarray(r, dtype=float) for r in rho_path]
    if grid is None:
        if u0 is None:
            raise ValueError("need grid or u0")
        grid = u0.grid
    N = rho_path[0].size
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    u = u0 if u0 is not None else Field.zeros(grid, N, "zero-mean")
    points = []
    for k, rho in enumerate(rho_path):
        try:
            r = solve_meanfield(u, rho, h, grid, opts)
            failed = not r.converged
        except (StagnationError, LinearizationSingularError) as exc:
            if k == 0:
                raise
            carried = getattr(exc, "result", None)
            r = carried if carried is not None else SolveResult(
                u, np.inf, np.nan, 0, False, [], str(exc))
            failed = True
        u = r.u
        max_u = tuple(float(c.max()) for c in u.components)
        i_top = int(np.argmax(max_u))
        ij = np.unravel_index(np.argmax(u.components[i_top]), grid.shape)
        center = (ij[0] * grid.h, ij[1] * grid.h)
        eps = float(np.exp(-0.5 * max(max_u[i_top], 0.0)))
        vals, _, _ = plateau_sigma(u, h, grid, center, eps)
        blow = bool(max(max_u) > opts.blowup_threshold or failed)
        points.append(BranchPoint(
            rho=rho, u=u, max_u=max_u,
            sigma=tuple(float(v) for v in vals),
            J_value=r.J_value, residual_norm=r.residual_norm,
            converged=bool(r.converged), blowup_suspected=blow,
            classification=mt_classify(rho).kind))
    return points


# ----------------------------------------------------------------------------
# Dirichlet annulus system
# ----------------------------------------------------------------------------

def dirichlet_functional(u: Field, rho, h=None, grid=None) -> float:
    """J_rho on H^1_0 of the annulus:
    1/2 sum a^ij int grad u_i grad u_j - sum rho_j log int h_j e^{u_j}."""
    grid = grid or u.grid
    rho = np.asarray(rho, dtype=float)
    N = u.n_components
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    C = cartan(N)
    val = 0.0
    for i in range(N):
        for j in range(N):
            val += 0.5 * C.a_inv[i, j] * dirichlet_energy(
                u.components[i], u.components[j], grid)
    _, log_ints = normalized_exp(u, h)
    return float(val - np.dot(rho, log_ints))


def dirichlet_residual(u: Field, rho, h=None, grid=None) -> Field:
    """r_i = -Delta u_i - sum_j rho_j a_ij h_j e^{u_j} / int h_j e^{u_j}
    (boundary rows zeroed)."""
    grid = grid or u.grid
    rho = np.asarray(rho, dtype=float)
    N = u.n_components
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    C = cartan(N)
    omega, _ = normalized_exp(u, h)
    r = np.stack([-laplacian(c, grid) for c in u.components])
    for i in range(N):
        for j in range(N):
            r[i] -= rho[j] * C.a[i, j] * omega[j]
    r[:, -1, :] = 0.0
    if not grid.has_axis:
        r[:, 0, :] = 0.0
    return Field(grid, r, gauge="none")


def _dirichlet_res_norm(u, rho, h):
    return float(np.abs(dirichlet_residual(u, rho, h).components).max())


class _AnnulusStepper:
    """(I + dt A^inv (-Delta_D))^-1 via cached sparse factorizations."""

    def __init__(self, grid: PolarGrid, N: int):
        from .geometry import _gather_interior, _polar_operator, _scatter_interior
        self.grid = grid
        C = cartan(N)
        self.lam, self.Q = np.linalg.eigh(C.a_inv)
        self.A, _, _, self.idx, self.nunk = _polar_operator(grid)
        self._gather = _gather_interior
        self._scatter = _scatter_interior
        self._factors = {}

    def _factor(self, dt, m):
        key = (round(float(dt), 14), m)
        if key not in self._factors:
            import scipy.sparse as sp
            op = sp.eye(self.nunk, format="csc") + dt * self.lam[m] * (-self.A)
            self._factors[key] = spla.factorized(op.tocsc())
        return self._factors[key]

    def implicit(self, comps, dt):
        N = comps.shape[0]
        vecs = np.stack([self._gather(c, self.grid, self.idx, self.nunk)
                         for c in comps])
        mixed = self.Q.T @ vecs.reshape(N, -1)
        for m in range(N):
            mixed[m] = self._factor(dt, m)(mixed[m])
        vecs = (self.Q @ mixed).reshape(N, -1)
        out = np.stack([self._scatter(v, self.grid, self.idx) for v in vecs])
        return out


def _dirichlet_gradient(u, rho, h, grid):
    """L^2 gradient of the H^1_0 functional: sum_j a^kj (-Delta u_j) - rho_k omega_k."""
    N = u.n_components
    C = cartan(N)
    omega, _ = normalized_exp(u, h)
    lap = np.stack([laplacian(c, grid) for c in u.components])
    g = np.einsum("kj,j...->k...", C.a_inv, -lap)
    for k in range(N):
        g[k] -= rho[k] * omega[k]
    g[:, -1, :] = 0.0
    if not grid.has_axis:
        g[:, 0, :] = 0.0
    return g


def dirichlet_solve_system(rho, h=None, grid: PolarGrid = None,
                           opts: SolveOptions | None = None,
                           u0: Field | None = None) -> SolveResult:
    """Solve -Delta u_i = sum_j rho_j a_ij h_j e^{u_j}/int h_j e^{u_j} with
    u_i = 0 on both boundary circles of an annulus, by the same
    flow-then-Newton pipeline on the Dirichlet Green operator.

    (The source system is quoted with Delta on the left; the sign used here
    is the one that makes it the Euler-Lagrange system of the H^1_0
    functional, which the rho -> 0 linearization and the radial oracle
    confirm.)
    """
    opts = opts or SolveOptions()
    if grid is None:
        raise ValueError("grid required")
    if grid.has_axis:
        raise ValueError("the Dirichlet system needs two boundary circles (r_in > 0)")
    rho = np.asarray(rho, dtype=float)
    N = rho.size
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    u = u0.copy() if u0 is not None else Field.zeros(grid, N, "dirichlet")
    u.components[:, -1, :] = 0.0
    u.components[:, 0, :] = 0.0

    stepper = _AnnulusStepper(grid, N)
    J = dirichlet_functional(u, rho, h)
    hist = [J]
    dt = opts.dt0
    res = _dirichlet_res_norm(u, rho, h)
    it = 0
    while res > max(opts.tol_res, opts.newton_switch_res) and it < opts.max_iters:
        omega, _ = normalized_exp(u, h)
        nonlin = -rho[:, None, None] * omega
        nonlin[:, -1, :] = 0.0
        nonlin[:, 0, :] = 0.0
        accepted = False
        while not accepted:
            trial = stepper.implicit(u.components - dt * nonlin, dt)
            u_try = Field(grid, trial, "dirichlet")
            try:
                J_try = dirichlet_functional(u_try, rho, h)
            except Exception:
                J_try = np.inf
            if J_try <= J + 1e-12 * (1.0 + abs(J)):
                accepted = True
            else:
                dt *= opts.shrink
                if dt < opts.dt_min:
                    raise StagnationError(
                        f"annulus flow stagnated at iteration {it}",
                        result=SolveResult(u, res, J, it, False, hist, "stagnation"))
        u, J = u_try, J_try
        hist.append(J)
        dt = min(dt * opts.grow, opts.dt_max)
        res = _dirichlet_res_norm(u, rho, h)
        it += 1

    if res > opts.tol_res:
        u, res, n2, hist2 = _newton_dirichlet(u, rho, h, grid, opts)
        it += n2
        hist += hist2
        J = dirichlet_functional(u, rho, h)
    return SolveResult(u, res, J, it, bool(res <= opts.tol_res), hist,
                       "dirichlet solve")


def _newton_dirichlet(u, rho, h, grid, opts):
    from .geometry import _gather_interior, _polar_operator, _scatter_interior
    import scipy.sparse as sp
    N = u.n_components
    C = cartan(N)
    A_fv, _, _, idx, nunk = _polar_operator(grid)
    prec = spla.factorized((sp.eye(nunk, format="csc") - A_fv).tocsc())
    size = N * nunk
    hist = []

    def gather(f):
        return np.stack([_gather_interior(c, grid, idx, nunk) for c in f]).ravel()

    def scatter(x):
        out = np.stack([_scatter_interior(v, grid, idx)
                        for v in x.reshape(N, nunk)])
        out[:, -1, :] = 0.0
        out[:, 0, :] = 0.0
        return out

    res_f = dirichlet_residual(u, rho, h).components
    res = float(np.abs(res_f).max())
    for step in range(1, opts.newton_max_steps + 1):
        if res <= opts.tol_res:
            break
        omega, _ = normalized_exp(u, h)

        def matvec(x):
            phi = scatter(x)
            out = np.stack([-laplacian(p, grid) for p in phi])
            for i in range(N):
                for j in range(N):
                    mean_j = integrate(omega[j] * phi[j], grid)
                    out[i] -= rho[j] * C.a[i, j] * (omega[j] * phi[j]
                                                    - omega[j] * mean_j)
            return gather(out)

        def pc(x):
            return np.stack([prec(v) for v in x.reshape(N, nunk)]).ravel()

        A = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
        M = spla.LinearOperator((size, size), matvec=pc, dtype=float)
        b = -gather(res_f)
        eta = _forcing_term(res, opts.tol_res)
        floor_guard = 1e-8 * max(1.0, float(np.abs(u.components).max()))
        sol, info = spla.gmres(A, b, M=M, rtol=eta, atol=0.0,
                               restart=100, maxiter=opts.krylov_maxiter)
        if info != 0 and _linear_reduction(A, b, sol) > 0.9:
            if res <= floor_guard:
                break
            raise LinearizationSingularError(
                f"annulus GMRES stagnated at Newton step {step}")
        delta = scatter(sol)
        t = 1.0
        while t >= 1e-4:
            u_try = Field(grid, u.components + t * delta, "dirichlet")
            r_try = dirichlet_residual(u_try, rho, h).components
            res_try = float(np.abs(r_try).max())
            if res_try <= (1.0 - 0.5 * t) * res + 1e-15:
                break
            t *= 0.5
        else:
            if res <= floor_guard:
                break
            raise LinearizationSingularError(
                f"annulus Newton step rejected at step {step}")
        u, res_f, res = u_try, r_try, res_try
        hist.append(dirichlet_functional(u, rho, h))
    return u, res, step if res <= opts.tol_res else opts.newton_max_steps, hist


# ----------------------------------------------------------------------------
# center of mass
# ----------------------------------------------------------------------------

def center_of_mass(v, grid):
    """e^v-weighted centroid int x e^v / int e^v.

    Polar grids: direct Cartesian quadrature.  Torus: circular means per
    axis (the domain is periodic, so the mean is an angle), mapped back to
    [0, L).  Exponentials are max-shifted for stability.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(grid, PolarGrid):
        w = grid.quad_weights()
        e = np.exp(v - v.max()) * w
        if grid.has_axis:
            e[0, 1:] = 0.0
            e[0, 0] *= grid.n_t
        X, Y = grid.nodes()
        z = e.sum()
        return np.array([(X * e).sum() / z, (Y * e).sum() / z])
    if isinstance(grid, TorusGrid):
        X, Y = grid.nodes()
        e = np.exp(v - v.max())
        L = grid.length
        out = []
        for coord in (X, Y):
            ang = 2.0 * np.pi * coord / L
            c = (e * np.cos(ang)).sum()
            s = (e * np.sin(ang)).sum()
            out.append((np.arctan2(s, c) % (2.0 * np.pi)) * L / (2.0 * np.pi))
        return np.array(out)
    raise TypeError(f"unsupported grid {type(grid)!r}")


# ----------------------------------------------------------------------------
# minimax estimator
# ----------------------------------------------------------------------------

@dataclass
class BubbleFamily:
    """Two independent projected-bubble paths, one per component.

    Centers sweep a radial segment from the inner to the outer boundary as
    t goes 0 -> 1; the concentration scale lam is the free parameter
    minimized over ``lambdas`` by coordinate search.  Projection onto H^1_0
    subtracts the harmonic extension of the bubble's boundary trace.
    """

    n_path: int = 17
    lambdas: tuple = (6.0, 8.0, 10.0)
    angle: float = 0.0
    corridor: float = 0.2    # admissible distance to the boundary, as a
                             # fraction of the gap width, for m_c at the ends
    margin_cells: int = 2


@dataclass
class MinimaxResult:
    alpha: float             # min over lambda of sup over t of J
    t_star: float
    lambda_star: float
    sup_J: dict              # lambda -> sup_t J
    J_path: np.ndarray       # J(t) at lambda_star
    ts: np.ndarray
    endpoint_J: tuple        # J at t=0 and t=1 (truncation indicator)
    noise: float             # path-resolution estimate near the maximizer
    centers_ok: bool


def _projected_bubble(grid: PolarGrid, center, lam):
    """Bubble -2 log(1 + e^lam |x - p|^2 / 4) minus the harmonic extension of
    its boundary trace (exactly zero boundary values)."""
    X, Y = grid.nodes()
    d2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    b = -2.0 * np.log1p(np.exp(lam) * d2 / 4.0)
    u = b - _harmonic_extension(grid, b[0, :], b[-1, :])
    u[0, :] = 0.0
    u[-1, :] = 0.0
    return u


def _harmonic_extension(grid: PolarGrid, inner, outer):
    return dirichlet_solve(np.zeros(grid.shape), grid, boundary=(inner, outer))


def minimax_estimate(rho, h=None, grid: PolarGrid = None,
                     family: BubbleFamily | None = None) -> MinimaxResult:
    """Upper-bound estimate of the mountain-pass level alpha_rho
    = inf_paths sup_t J_rho on the annulus.

    sup_t J over a discretized bubble path is minimized over the family's
    scale grid by coordinate search.  The family must move both components'
    centers of mass from near the inner boundary to near the outer one
    (two-sided supercritical case rho_i in (4 pi, 8 pi)); families that
    violate the corridor raise InvalidFamilyError.  The parameter interval
    truncates the formally unbounded path, so the endpoint J values are
    reported alongside the estimate.
    """
    family = family or BubbleFamily()
    if grid is None or grid.has_axis:
        raise ValueError("minimax needs an annulus grid")
    rho = np.asarray(rho, dtype=float)
    N = rho.size
    h = h if isinstance(h, WeightData) else WeightData.const(grid, N) if h is None \
        else WeightData(grid, h)
    if family.n_path < 5:
        raise InvalidFamilyError("path must have at least 5 samples")

    ts = np.linspace(0.0, 1.0, family.n_path)
    gap = grid.r_out - grid.r_in
    r_lo = grid.r_in + family.margin_cells * grid.dr
    r_hi = grid.r_out - family.margin_cells * grid.dr
    ct, st = np.cos(family.angle), np.sin(family.angle)

    sup_J = {}
    paths = {}
    centers_ok = True
    for lam in family.lambdas:
        Js = np.empty(len(ts))
        mc_radii = np.empty((len(ts), N))
        for a, t in enumerate(ts):
            rc = r_lo + t * (r_hi - r_lo)
            p = (rc * ct, rc * st)
            comps = np.stack([_projected_bubble(grid, p, lam) for _ in range(N)])
            u = Field(grid, comps, gauge="dirichlet")
            Js[a] = dirichlet_functional(u, rho, h, grid)
            for i in range(N):
                mc = center_of_mass(u.components[i], grid)
                mc_radii[a, i] = float(np.hypot(*mc))
        sup_J[float(lam)] = float(Js.max())
        paths[float(lam)] = Js
        # corridor check (5.6): ends of the path must concentrate near the
        # boundary circles
        lo_ok = np.all(mc_radii[0] < grid.r_in + family.corridor * gap)
        hi_ok = np.all(mc_radii[-1] > grid.r_out - family.corridor * gap)
        if not (lo_ok and hi_ok):
            centers_ok = False
    if not centers_ok:
        raise InvalidFamilyError(
            "family violates the center-of-mass corridor: bubble ends do not "
            "reach the boundary circles (degenerate/flat paths are "
            "inadmissible)")

    lam_star = min(sup_J, key=sup_J.get)
    Js = paths[lam_star]
    j = int(np.argmax(Js))
    lo, hi = max(j - 1, 0), min(j + 1, len(ts) - 1)
    noise = float(max(abs(Js[j] - Js[lo]), abs(Js[j] - Js[hi])))
    return MinimaxResult(
        alpha=float(Js[j]), t_star=float(ts[j]), lambda_star=float(lam_star),
        sup_J=sup_J, J_path=Js, ts=ts,
        endpoint_J=(float(Js[0]), float(Js[-1])), noise=noise,
        centers_ok=True)
