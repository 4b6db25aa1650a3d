"""Time stepping for the coupled Cahn-Hilliard / chemotaxis system.

Each step solves the Cahn-Hilliard block first and then the nutrient
equation with the fresh order parameter.  In the CH block the convex part
(``-Laplacian phi + beta(phi)``) is implicit, while ``lam * phi`` and the
coupling ``chi * sigma`` are lagged.  The nutrient step is linear in the new
concentration; its cross-diffusion flux uses the arithmetic face mean.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab, cg

from . import grid as g
from .grid import Grid
from .potential import CoeffSpec, InvalidSpecError, PotentialSpec, _beta_prime_unchecked, _beta_unchecked, _coeff, beta_hat

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ModelParams:
    chi: float = 0.0
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    h_spec: CoeffSpec = field(default_factory=CoeffSpec)
    k_spec: CoeffSpec = field(default_factory=CoeffSpec)
    dt: float = 1e-3
    solver_tol: float = 1e-10
    max_newton: int = 50
    linear_tol: float = 1e-11
    positivity_tol: float = 1e-12

    def __post_init__(self):
        if not self.chi >= 0:
            raise InvalidSpecError("chi must be >= 0")
        if not self.dt > 0:
            raise InvalidSpecError("dt must be > 0")
        if not self.dt < 1.0 / (2.0 * self.k_spec.upper):
            raise InvalidSpecError(
                f"dt must satisfy dt < 1/(2 k_max) = {1.0 / (2.0 * self.k_spec.upper):g}"
            )

    @property
    def lam(self) -> float:
        return self.potential.lam

    def with_dt(self, dt: float) -> "ModelParams":
        return replace(self, dt=dt)


@dataclass
class State:
    grid: Grid
    phi: np.ndarray
    sigma: np.ndarray
    t: float = 0.0
    mu: np.ndarray | None = None
    undershoot: float = 0.0

    def __post_init__(self):
        self.phi = self.grid.check(self.phi)
        self.sigma = self.grid.check(self.sigma)

    def copy(self) -> "State":
        return State(
            self.grid,
            self.phi.copy(),
            self.sigma.copy(),
            self.t,
            None if self.mu is None else self.mu.copy(),
            self.undershoot,
        )


@dataclass(frozen=True)
class Compatibility:
    passed: bool
    margin: float

    def __bool__(self):
        return self.passed


def check_compatibility(params: ModelParams) -> Compatibility:
    """``chi^2 <= 3 h_min``; the margin is ``3 h_min - chi^2``."""
    margin = 3.0 * params.h_spec.lower - params.chi**2
    return Compatibility(margin >= 0, margin)


# --- Cahn-Hilliard block -----------------------------------------------------


def _spectral_solve(grid: Grid, rhs: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    return g._idct(g._dct(rhs) / symbol)


def _inv_lap(grid: Grid, f: np.ndarray) -> np.ndarray:
    lam = grid.eigenvalues
    c = g._dct(f)
    c[0, 0] = 0.0
    c[1:, :] /= lam[1:, :]
    c[0, 1:] /= lam[0, 1:]
    return g._idct(c)


def _zero_mean(f: np.ndarray) -> np.ndarray:
    return f - f.mean()


def ch_residual(grid: Grid, phi, phi_old, g_explicit, params: ModelParams):
    """Returns ``(R, mu)``; ``R`` is the zero-mean part of ``N(phi - phi_old)/dt + mu``."""
    mu = -g.laplacian_neumann(grid, phi) + _beta_unchecked(params.potential, phi) - g_explicit
    R = _zero_mean(_inv_lap(grid, phi - phi_old) / params.dt + mu)
    return R, mu


def _ch_functional(grid: Grid, x, phi_old, g_explicit, params: ModelParams) -> float:
    d = x - phi_old
    return (
        0.5 * grid.cell_area * float(np.sum(d * _inv_lap(grid, d))) / params.dt
        + 0.5 * g.grad_norm_sq(grid, x)
        + grid.cell_area * float(np.sum(beta_hat(params.potential, x) - g_explicit * x))
    )


def step_ch(grid: Grid, phi: np.ndarray, sigma: np.ndarray, params: ModelParams):
    """One step of the CH block; returns ``(phi_next, mu)``.

    The step minimizes the convex functional
    ``|phi - phi_old|_*^2 / (2 dt) + |grad phi|^2 / 2 + int beta_hat(phi) - int g phi``
    over fields of the same mean, by Newton's method with a fraction-to-boundary
    rule that keeps every iterate strictly inside ``(-1, 1)``.
    """
    spec = params.potential
    dt = params.dt
    g_explicit = params.lam * phi + params.chi * sigma
    lam = grid.eigenvalues
    n = grid.nx * grid.ny

    x = phi.copy()
    res = np.inf
    for _ in range(params.max_newton + 1):
        R, mu = ch_residual(grid, x, phi, g_explicit, params)
        res = float(np.max(np.abs(R)))
        if res <= params.solver_tol:
            break
        if _ == params.max_newton:
            break
        D = _beta_prime_unchecked(spec, x)
        symbol = 1.0 / (dt * np.where(lam > 0, lam, 1.0)) + lam + float(D.mean())

        def matvec(v, D=D):
            v = v.reshape(grid.shape)
            out = _inv_lap(grid, v) / dt - g.laplacian_neumann(grid, v) + D * v
            return _zero_mean(out).ravel()

        def precond(v, symbol=symbol):
            c = g._dct(v.reshape(grid.shape)) / symbol
            c[0, 0] = 0.0
            return g._idct(c).ravel()

        A = LinearOperator((n, n), matvec=matvec, dtype=float)
        M = LinearOperator((n, n), matvec=precond, dtype=float)
        b = -R.ravel()
        delta, info = cg(A, b, M=M, rtol=1e-6, atol=1e-3 * params.solver_tol, maxiter=500)
        if not np.all(np.isfinite(delta)):
            raise StepFailure("CH linear solve broke down", res)
        delta = _zero_mean(delta.reshape(grid.shape))
        # fraction-to-boundary: never move more than 99% of the way to +-1
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(delta > 0, (1.0 - x) / delta, np.where(delta < 0, (-1.0 - x) / delta, np.inf))
        alpha = min(1.0, 0.99 * float(np.min(room)))
        # Armijo backtracking on the convex functional keeps iterates off the walls
        J0 = _ch_functional(grid, x, phi, g_explicit, params)
        slope = grid.cell_area * float(np.sum(R * delta))
        slack = 1e-13 * (abs(J0) + 1.0)
        for _ls in range(40):
            x_new = x + alpha * delta
            if _ch_functional(grid, x_new, phi, g_explicit, params) <= J0 + 1e-4 * alpha * slope + slack:
                break
            alpha *= 0.5
        else:
            raise StepFailure("CH line search failed", res)
        x = x_new
        if spec.singular:
            bad = np.abs(x) >= 1.0
            if np.any(bad):
                raise StepFailure("CH iterate reached the boundary of [-1, 1]", res)

    if not res <= params.solver_tol:
        raise StepFailure(f"CH Newton did not converge (residual {res:.3e})", res)
    # remove roundoff drift of the mean
    x += phi.mean() - x.mean()
    return x, mu


# --- nutrient ----------------------------------------------------------------


def _cross_flux(grid: Grid, s: np.ndarray, grad_phi: g.FaceFlux) -> g.FaceFlux:
    ax, ay = g.face_average(grid, s)
    return g.FaceFlux(ax * grad_phi.x, ay * grad_phi.y)


def nutrient_operator(grid: Grid, sigma_old, phi_next, params: ModelParams):
    """Cellwise reaction coefficient and the matrix-free operator of the nutrient step."""
    h = _coeff(params.h_spec, sigma_old, phi_next)
    k = _coeff(params.k_spec, sigma_old, phi_next)
    c = 1.0 / params.dt + h * sigma_old - k
    grad_phi = g.face_gradient(grid, phi_next)
    chi = params.chi

    def apply(s):
        out = c * s - g.laplacian_neumann(grid, s)
        if chi:
            out = out + chi * g.divergence(grid, _cross_flux(grid, s, grad_phi), check_boundary=False)
        return out

    return c, apply


def step_nutrient(grid: Grid, sigma: np.ndarray, phi_next: np.ndarray, params: ModelParams) -> np.ndarray:
    """Linear implicit step for the nutrient.

    Diffusion, cross-diffusion and the logistic terms ``-h sigma_old sigma_new + k sigma_new``
    are implicit in the new concentration, which keeps the matrix an M-matrix
    whenever ``chi * |jump of phi across a face| <= 2``.
    """
    c, apply = nutrient_operator(grid, sigma, phi_next, params)
    rhs = sigma / params.dt
    n = grid.nx * grid.ny
    symbol = float(c.mean()) + grid.eigenvalues
    if params.chi == 0 and np.ptp(c) == 0:
        # constant-coefficient operator: exact in the cosine basis
        return _spectral_solve(grid, rhs, symbol)

    A = LinearOperator((n, n), matvec=lambda v: apply(v.reshape(grid.shape)).ravel(), dtype=float)
    M = LinearOperator(
        (n, n), matvec=lambda v: _spectral_solve(grid, v.reshape(grid.shape), symbol).ravel(), dtype=float
    )
    x0 = _spectral_solve(grid, rhs, symbol).ravel()
    out, info = bicgstab(A, rhs.ravel(), x0=x0, M=M, rtol=params.linear_tol, atol=0.0, maxiter=1000)
    if info != 0:
        res = float(np.linalg.norm(apply(out.reshape(grid.shape)) - rhs) / np.linalg.norm(rhs))
        raise StepFailure(f"nutrient linear solve did not converge (info={info})", res)
    return out.reshape(grid.shape)


# --- entropic variable ----------------------------------------------------------


def _cell_average_faces(grid: Grid, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    """Average face quantities onto cells (two faces per axis)."""
    return 0.5 * (fx[1:, :] + fx[:-1, :]) + 0.5 * (fy[:, 1:] + fy[:, :-1])


def step_entropic(grid: Grid, v: np.ndarray, phi_next: np.ndarray, params: ModelParams) -> np.ndarray:
    """Semi-implicit step for ``v = ln sigma``: diffusion implicit, the rest lagged."""
    if not np.all(np.isfinite(v)):
        raise StepFailure("entropic variable is not finite")
    if np.max(np.abs(v)) > 700:
        raise StepFailure("entropic variable overflow (|v| > 700): near vacuum or blow-up")
    sigma = np.exp(v)
    h = _coeff(params.h_spec, sigma, phi_next)
    k = _coeff(params.k_spec, sigma, phi_next)
    gv = g.face_gradient(grid, v)
    src = _cell_average_faces(grid, gv.x**2, gv.y**2) - h * sigma + k
    if params.chi:
        gp = g.face_gradient(grid, phi_next)
        src -= params.chi * _cell_average_faces(grid, gv.x * gp.x, gv.y * gp.y)
        src -= params.chi * g.laplacian_neumann(grid, phi_next)
    dt = params.dt
    out = _spectral_solve(grid, v / dt + src, 1.0 / dt + grid.eigenvalues)
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > 700:
        raise StepFailure("entropic variable overflow (|v| > 700): near vacuum or blow-up")
    return out


# --- composite step ----------------------------------------------------------


def step(state: State, params: ModelParams, scheme: str = "standard") -> State:
    grid = state.grid
    phi_next, mu = step_ch(grid, state.phi, state.sigma, params)
    if scheme == "standard":
        sigma_next = step_nutrient(grid, state.sigma, phi_next, params)
    elif scheme == "entropic":
        if np.any(state.sigma <= 0):
            raise StepFailure("entropic stepper needs strictly positive sigma")
        sigma_next = np.exp(step_entropic(grid, np.log(state.sigma), phi_next, params))
    else:
        raise ValueError(f"unknown stepper {scheme!r}")
    undershoot = max(0.0, -float(sigma_next.min()))
    if undershoot > params.positivity_tol:
        log.warning("sigma undershoot %.3e at t=%.6g", undershoot, state.t + params.dt)
    return State(grid, phi_next, sigma_next, state.t + params.dt, mu, undershoot)


class Stepper:
    """Advances one trajectory; on failure retries the step as two half steps."""

    def __init__(self, params: ModelParams, scheme: str = "standard", max_halvings: int = 4):
        self.params = params
        self.scheme = scheme
        self.max_halvings = max_halvings

    def advance(self, state: State) -> State:
        return self._advance(state, self.params, 0)

    def _advance(self, state, params, depth):
        try:
            return step(state, params, self.scheme)
        except StepFailure:
            if depth >= self.max_halvings:
                raise
            half = params.with_dt(params.dt / 2)
            log.info("step failed at t=%.6g, halving dt to %.3g", state.t, half.dt)
            mid = self._advance(state, half, depth + 1)
            return self._advance(mid, half, depth + 1)
