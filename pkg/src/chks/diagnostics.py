"""Energies, dissipation defect, phase-space metrics and norm batteries."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import grid as g
from .grid import Grid, GridError, PreconditionError
from .potential import DomainError, PotentialSpec, _coeff, beta, beta0, beta_hat
from .stepper import ModelParams, State

SIGMA_LOG_FLOOR = 1e-300


def _entropy_density(sigma: np.ndarray) -> np.ndarray:
    # sigma ln sigma -> 0 at 0; undershoot cells count as 0
    s = np.maximum(sigma, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s > 0, s * (np.log(np.where(s > 0, s, 1.0)) - 1.0), 0.0)
    return out


def _check_phi(phi):
    if np.any(~(np.abs(phi) <= 1.0)):
        raise DomainError("order parameter outside [-1, 1]")


def energy(state: State, params: ModelParams) -> float:
    grid = state.grid
    phi, sigma = state.phi, state.sigma
    _check_phi(phi)
    spec = params.potential
    F = beta_hat(spec, phi) - 0.5 * spec.lam * phi * phi
    bulk = F + _entropy_density(sigma) - params.chi * np.maximum(sigma, 0.0) * phi
    return 0.5 * g.grad_norm_sq(grid, phi) + g.integrate(grid, bulk)


def entropy(grid: Grid, sigma: np.ndarray) -> float:
    return g.integrate(grid, _entropy_density(sigma))


def chemical_potential(state: State, params: ModelParams) -> np.ndarray:
    """``-Laplacian phi + f(phi) - chi sigma`` evaluated at the current state."""
    spec = params.potential
    return (
        -g.laplacian_neumann(state.grid, state.phi)
        + beta(spec, state.phi)
        - spec.lam * state.phi
        - params.chi * state.sigma
    )


@dataclass
class DissipationTerms:
    grad_mu_sq: float
    cross: float
    reaction: float
    excluded: int

    @property
    def total(self) -> float:
        return self.grad_mu_sq + self.cross + self.reaction


def dissipation_terms(state: State, mu: np.ndarray, params: ModelParams) -> DissipationTerms:
    """The three dissipation integrals at ``state``.

    The cross term uses the discrete nutrient flux: on each face
    ``(grad sigma - chi sigma_face grad phi) . grad(ln sigma - chi phi)``,
    which reduces to ``sigma |grad(ln sigma - chi phi)|^2`` in the continuum
    and makes the semi-discrete balance exact.  Cells with
    ``sigma < 1e-300`` are left out (and faces touching them).
    """
    grid = state.grid
    phi, sigma = state.phi, state.sigma
    ok = sigma >= SIGMA_LOG_FLOOR
    w = np.where(ok, np.log(np.where(ok, sigma, 1.0)), 0.0) - params.chi * phi

    gs = g.face_gradient(grid, sigma)
    gp = g.face_gradient(grid, phi)
    gw = g.face_gradient(grid, w)
    sf = g.face_average(grid, sigma)
    okx = np.zeros_like(gs.x, dtype=bool)
    oky = np.zeros_like(gs.y, dtype=bool)
    okx[1:-1] = ok[1:] & ok[:-1]
    oky[:, 1:-1] = ok[:, 1:] & ok[:, :-1]
    fx = (gs.x - params.chi * sf.x * gp.x) * gw.x
    fy = (gs.y - params.chi * sf.y * gp.y) * gw.y
    cross = float((np.sum(fx[okx]) + np.sum(fy[oky])) * grid.cell_area)

    h = _coeff(params.h_spec, sigma, phi)
    k = _coeff(params.k_spec, sigma, phi)
    react = np.where(ok, (h * sigma * sigma - k * sigma) * w, 0.0)
    return DissipationTerms(
        grad_mu_sq=g.grad_norm_sq(grid, mu),
        cross=cross,
        reaction=g.integrate(grid, react),
        excluded=int(np.count_nonzero(~ok)),
    )


def dissipation_residual(prev: State, nxt: State, mu: np.ndarray, dt: float, params: ModelParams) -> float:
    """``(E(next) - E(prev))/dt`` plus the dissipation integrals at ``next``."""
    dE = (energy(nxt, params) - energy(prev, params)) / dt
    return dE + dissipation_terms(nxt, mu, params).total


# --- metrics -----------------------------------------------------------------


def _same_grid(a: Grid, b: Grid):
    if a != b:
        raise GridError("states live on different grids")


def phase_distance(grid: Grid, phi1, phi2, spec: PotentialSpec) -> float:
    _check_phi(phi1)
    _check_phi(phi2)
    d = g.v_norm(grid, phi1 - phi2)
    return d + g.lp_norm(grid, beta_hat(spec, phi1) - beta_hat(spec, phi2), 1)


def strong_phase_distance(grid: Grid, phi1, phi2, spec: PotentialSpec) -> float:
    """H2 distance plus the L2 distance of the minimal sections."""
    return g.h2_norm(grid, phi1 - phi2) + g.l2_norm(grid, beta0(spec, phi1) - beta0(spec, phi2))


def phase_radius(state: State, spec: PotentialSpec) -> float:
    """``dist(phi, 0) + |sigma|_{D(A^1/4)}``: the radius in the product phase space."""
    grid = state.grid
    return phase_distance(grid, state.phi, np.zeros(grid.shape), spec) + g.frac_norm(grid, state.sigma, 0.25)


def product_distance(a: State, b: State, spec: PotentialSpec) -> float:
    _same_grid(a.grid, b.grid)
    return phase_distance(a.grid, a.phi, b.phi, spec) + g.frac_norm(a.grid, a.sigma - b.sigma, 0.25)


def contraction_metric(a: State, b: State, C_weight: float = 1.0) -> float:
    """Weighted dual-norm quantity controlling the difference of two solutions."""
    _same_grid(a.grid, b.grid)
    if not C_weight > 0:
        raise ValueError("C_weight must be > 0")
    grid = a.grid
    dphi = a.phi - b.phi
    dsig = a.sigma - b.sigma
    scale = max(float(np.max(np.abs(dphi))), 1e-300)
    if abs(g.mean(grid, dphi)) > 1e-9 * max(scale, 1.0):
        raise PreconditionError("order-parameter difference must have zero mean")
    s_mean = g.mean(grid, dsig)
    return (
        0.5 * g.dual_star_norm(grid, dsig - s_mean) ** 2
        + 0.5 * s_mean**2
        + 2.0 * C_weight * g.dual_star_norm(grid, dphi) ** 2
    )


# --- uniform Gronwall ------------------------------------------------------------


@dataclass
class GronwallReport:
    a1: float
    a2: float
    a3: float
    bound: float
    violations: list[float]

    @property
    def ok(self) -> bool:
        return not self.violations


def _window_integrals(x: np.ndarray, dt: float, w: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(0.5 * (x[1:] + x[:-1]) * dt)])
    return c[w:] - c[:-w]


def uniform_gronwall_check(t, y, a, b, window: float = 1.0, rtol: float = 1e-12) -> GronwallReport:
    """Check ``y(t + window) <= (a2 + a3) exp(a1)`` on uniformly sampled series.

    ``a1, a2, a3`` are suprema of trapezoid integrals of ``a, b, y`` over all
    windows that start on a sample.
    """
    t = np.asarray(t, dtype=float)
    n = t.size
    y, a, b = (np.broadcast_to(np.asarray(s, dtype=float), (n,)) for s in (y, a, b))
    if n < 3:
        raise ValueError("series too short")
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise ValueError("samples must be uniform in time")
    w = int(round(window / dt))
    if abs(w * dt - window) > 1e-9 * window:
        raise ValueError("window must be a whole number of samples")
    if t[-1] - t[0] < 2 * window * (1 - 1e-12):
        raise ValueError("series too short: need at least two windows")
    if min(y.min(), a.min(), b.min()) < 0:
        raise ValueError("Gronwall series must be nonnegative")
    a1 = float(_window_integrals(a, dt, w).max())
    a2 = float(_window_integrals(b, dt, w).max())
    a3 = float(_window_integrals(y, dt, w).max())
    bound = (a2 + a3) * math.exp(a1)
    late = np.arange(w, n)
    bad = late[y[late] > bound * (1 + rtol) + 1e-300]
    return GronwallReport(a1, a2, a3, bound, [float(t[i]) for i in bad])


# --- norm battery ------------------------------------------------------------------


@dataclass
class StateReport:
    t: float
    energy: float
    mass: float
    entropy: float
    min_sigma: float
    phi_V: float
    lap_phi_L2: float
    lap_phi_L6: float
    phi_W26: float
    beta_L1: float
    beta_L3: float
    beta_L6: float
    beta_minus_L6: float
    sigma_L2: float
    sigma_L3: float
    sigma_V: float
    sigma_H2: float
    sigma_A14: float
    sigma_A34: float
    grad_mu: float
    mu_V: float
    mu_mean: float
    v_minus_L1: float
    v_minus_L6: float
    radius: float
    dissipation_residual: float
    sigma_undershoot: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> tuple:
        return astuple(self)


def regularity_report(state: State, params: ModelParams, mu: np.ndarray | None = None,
                      prev: State | None = None) -> StateReport:
    """Fill every battery entry for ``state``.

    ``mu`` defaults to the state's own chemical potential; the dissipation
    defect needs the previous state and is 0 without it.
    """
    grid = state.grid
    spec = params.potential
    phi, sigma = state.phi, state.sigma
    if mu is None:
        mu = state.mu if state.mu is not None else chemical_potential(state, params)
    lap_phi = g.laplacian_neumann(grid, phi)
    b = beta(spec, phi)
    v = np.log(np.maximum(sigma, SIGMA_LOG_FLOOR))
    v_minus = np.maximum(-v, 0.0)
    E = energy(state, params)
    resid = 0.0
    if prev is not None:
        dt = state.t - prev.t
        resid = (E - energy(prev, params)) / dt + dissipation_terms(state, mu, params).total
    phi_V = g.v_norm(grid, phi)
    lap6 = g.lp_norm(grid, lap_phi, 6)
    return StateReport(
        t=state.t,
        energy=E,
        mass=g.mean(grid, phi),
        entropy=entropy(grid, sigma),
        min_sigma=float(sigma.min()),
        phi_V=phi_V,
        lap_phi_L2=g.l2_norm(grid, lap_phi),
        lap_phi_L6=lap6,
        phi_W26=lap6 + phi_V,
        beta_L1=g.lp_norm(grid, b, 1),
        beta_L3=g.lp_norm(grid, b, 3),
        beta_L6=g.lp_norm(grid, b, 6),
        beta_minus_L6=g.lp_norm(grid, np.maximum(-b, 0.0), 6),
        sigma_L2=g.l2_norm(grid, sigma),
        sigma_L3=g.lp_norm(grid, sigma, 3),
        sigma_V=g.v_norm(grid, sigma),
        sigma_H2=g.h2_norm(grid, sigma),
        sigma_A14=g.frac_norm(grid, sigma, 0.25),
        sigma_A34=g.frac_norm(grid, sigma, 0.75),
        grad_mu=math.sqrt(g.grad_norm_sq(grid, mu)),
        mu_V=g.v_norm(grid, mu),
        mu_mean=abs(g.mean(grid, mu)),
        v_minus_L1=g.lp_norm(grid, v_minus, 1),
        v_minus_L6=g.lp_norm(grid, v_minus, 6),
        radius=phase_distance(grid, phi, np.zeros(grid.shape), spec) + g.frac_norm(grid, sigma, 0.25),
        dissipation_residual=resid,
        sigma_undershoot=state.undershoot,
    )


def write_reports_csv(reports: Iterable[StateReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(StateReport.columns())
    for r in reports:
        w.writerow([format(x, ".17g") for x in r.row()])


def reports_to_csv(reports: Iterable[StateReport]) -> str:
    buf = io.StringIO()
    write_reports_csv(reports, buf)
    return buf.getvalue()


def read_reports_csv(fh) -> list[StateReport]:
    rows = list(csv.reader(fh))
    if not rows or rows[0] != StateReport.columns():
        raise ValueError("unexpected report CSV header")
    return [StateReport(*map(float, r)) for r in rows[1:]]


# --- minimum principle ------------------------------------------------------------


@dataclass
class MinPrincipleReport:
    delta: float
    argmin: tuple[float, float, float]
    times: list[float]
    v_minus_L1: list[float]
    v_minus_L6: list[float]


def min_principle_report(trajectory, tau: float, T: float) -> MinPrincipleReport:
    """Lower bound of sigma over the stored snapshots with ``tau <= t <= T``."""
    snaps = trajectory.snapshots
    if not snaps:
        raise ValueError("trajectory has no snapshots")
    grid = trajectory.grid
    s0 = snaps[0].sigma
    if np.any(s0 <= 0) or not np.isfinite(g.integrate(grid, np.abs(np.log(s0)))):
        raise PreconditionError("initial sigma must be strictly positive with integrable log")
    eps = 1e-9 * max(1.0, abs(T))
    window = [s for s in snaps if tau - eps <= s.t <= T + eps]
    if not window:
        raise ValueError(f"no snapshots in [{tau}, {T}]")
    best = min(window, key=lambda s: float(s.sigma.min()))
    i, j = np.unravel_index(int(np.argmin(best.sigma)), grid.shape)
    x, y = grid.coords()
    times, l1, l6 = [], [], []
    for s in snaps:
        if s.t > T + eps:
            break
        vm = np.maximum(-np.log(np.maximum(s.sigma, SIGMA_LOG_FLOOR)), 0.0)
        times.append(s.t)
        l1.append(g.lp_norm(grid, vm, 1))
        l6.append(g.lp_norm(grid, vm, 6))
    return MinPrincipleReport(
        delta=float(best.sigma.min()),
        argmin=(float(x[i, 0]), float(y[0, j]), float(best.t)),
        times=times,
        v_minus_L1=l1,
        v_minus_L6=l6,
    )
