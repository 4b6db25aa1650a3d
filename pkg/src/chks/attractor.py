"""Ensemble experiments: balls of initial data, absorbing-set detection,
Hausdorff semi-distances and late-time regularity envelopes."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import grid as g
from .diagnostics import (
    GronwallReport,
    phase_distance,
    product_distance,
    uniform_gronwall_check,
)
from .grid import Grid
from .potential import PotentialSpec
from .stepper import ModelParams, State
from .trajectory import Trajectory, simulate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleSpec:
    n_samples: int = 8
    R: float = 10.0
    m: float = 0.0
    seed: int = 0
    T: float = 10.0
    stride: int = 100
    sigma_floor: float = 0.05
    margin: float = 0.05
    corr_length: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not abs(self.m) < 1:
            raise ValueError("mean m must lie in (-1, 1)")
        if not self.R > 0:
            raise ValueError("radius R must be > 0")
        if not 0 < self.margin < 1 - abs(self.m):
            raise ValueError("margin must lie in (0, 1 - |m|)")
        if self.sigma_floor < 0:
            raise ValueError("sigma_floor must be >= 0")


# --- sampling ----------------------------------------------------------------------


def _smooth_noise(grid: Grid, rng: np.random.Generator, corr_length: float) -> np.ndarray:
    c = g._dct(rng.standard_normal(grid.shape))
    c *= np.exp(-0.5 * corr_length**2 * grid.eigenvalues)
    return g._idct(c)


def _bisect(fun, lo: float, hi: float, target: float, iters: int = 80) -> float:
    """Largest ``s`` in ``[lo, hi]`` with ``fun(s) <= target`` for increasing ``fun``."""
    if fun(hi) <= target:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fun(mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


def _fix_mean(grid: Grid, phi: np.ndarray, m: float, bound: float) -> np.ndarray:
    for _ in range(100):
        phi = np.clip(phi + (m - g.mean(grid, phi)), -bound, bound)
        if abs(g.mean(grid, phi) - m) <= 1e-12:
            return phi
    raise ValueError("could not enforce the prescribed mean")


def ball_center_radius(grid: Grid, spec: EnsembleSpec, potential: PotentialSpec) -> float:
    phi = grid.constant(spec.m)
    sigma = grid.constant(spec.sigma_floor)
    return phase_distance(grid, phi, np.zeros(grid.shape), potential) + g.frac_norm(grid, sigma, 0.25)


def sample_initial_ball(grid: Grid, spec: EnsembleSpec, potential: PotentialSpec) -> list[State]:
    """Seeded random initial data of mean ``m`` inside the product-metric ball of radius ``R``.

    Each sample gets a random target radius and a random split of it between
    the order parameter and the nutrient; amplitudes are then found by
    bisection, which works because both radius parts grow monotonically with
    the amplitude.  The part of the target the bounded order parameter cannot
    take is given to the nutrient, so every sample lands on its target radius.
    """
    r0 = ball_center_radius(grid, spec, potential)
    if spec.R < r0:
        raise ValueError(f"radius R={spec.R:g} cannot hold mean-{spec.m:g} data (needs >= {r0:.6g})")
    bound = 1.0 - spec.margin
    zero = np.zeros(grid.shape)
    phi_c = grid.constant(spec.m)
    sig_c = grid.constant(spec.sigma_floor)
    rphi0 = phase_distance(grid, phi_c, zero, potential)
    rsig0 = g.frac_norm(grid, sig_c, 0.25)
    states = []
    for child in np.random.SeedSequence(spec.seed).spawn(spec.n_samples):
        rng = np.random.default_rng(child)
        psi = _smooth_noise(grid, rng, spec.corr_length)
        psi -= psi.mean()
        rho = _smooth_noise(grid, rng, spec.corr_length)
        rho = (rho - rho.min()) / max(float(np.ptp(rho)), 1e-300)
        u, w = rng.random(2)
        target = r0 + u * (spec.R - r0)
        budget_phi = rphi0 + w * (target - r0)

        s_max = min((bound - spec.m) / max(psi.max(), 1e-300), (bound + spec.m) / max(-psi.min(), 1e-300))
        s = _bisect(lambda s: phase_distance(grid, spec.m + s * psi, zero, potential), 0.0, s_max, budget_phi)
        phi = _fix_mean(grid, spec.m + s * psi, spec.m, bound)
        # whatever the bounded order parameter cannot absorb goes to the nutrient
        budget_sig = max(target - phase_distance(grid, phi, zero, potential), rsig0)

        b_hi = 1.0
        while g.frac_norm(grid, sig_c + b_hi * rho, 0.25) < budget_sig and b_hi < 1e12:
            b_hi *= 2.0
        b = _bisect(lambda b: g.frac_norm(grid, sig_c + b * rho, 0.25), 0.0, b_hi, budget_sig)
        sigma = sig_c + b * rho
        states.append(State(grid, phi, sigma, 0.0))
    return states


# --- running -----------------------------------------------------------------------


def _run_one(args) -> Trajectory:
    state, params, T, stride, scheme = args
    return simulate(state, params, T, stride, scheme)


def run_ensemble(
    states: Sequence[State],
    params: ModelParams,
    T: float,
    stride: int = 100,
    scheme: str = "standard",
    workers: int = 1,
) -> list[Trajectory]:
    """One trajectory per initial state; step failures stay inside their trajectory."""
    jobs = [(s, params, T, stride, scheme) for s in states]
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# --- set distances -----------------------------------------------------------------


def hausdorff_semidist(A: Sequence[State], K: Sequence[State], potential: PotentialSpec) -> float:
    """``sup_{a in A} inf_{k in K} d(a, k)`` in the product phase metric."""
    if not A or not K:
        raise ValueError("Hausdorff semi-distance needs nonempty sets")
    return max(min(product_distance(a, k, potential) for k in K) for a in A)


# --- absorbing set -------------------------------------------------------------------


@dataclass
class AbsorbingFit:
    kappa_hat: float
    C_hat: float
    A_hat: float
    R1_hat: float
    T1_hat: float
    reexit: bool
    conclusive: bool
    headroom: float = 0.1
    reexit_tol: float = 0.1
    gronwall: GronwallReport | None = None
    note: str = ""

    def summary(self) -> dict:
        return {
            "kappa_hat": self.kappa_hat,
            "C_hat": self.C_hat,
            "A_hat": self.A_hat,
            "R1_hat": self.R1_hat,
            "T1_hat": self.T1_hat,
            "reexit": self.reexit,
            "conclusive": self.conclusive,
            "headroom": self.headroom,
            "reexit_tol": self.reexit_tol,
            "gronwall_violations": None if self.gronwall is None else len(self.gronwall.violations),
            "note": self.note,
        }


def _exp_model(t, A, kappa, C):
    return A * np.exp(-kappa * t) + C


def fit_exponential(t: np.ndarray, E: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``E ~ A exp(-kappa t) + C`` with ``kappa > 0``; returns ``(A, kappa, C)``."""
    t = np.asarray(t, float)
    E = np.asarray(E, float)
    span = max(t[-1] - t[0], 1e-12)
    C0 = float(E[-1])
    A0 = float(E[0] - C0)
    # initial rate from the time needed to lose half of the excess
    half = np.flatnonzero(np.abs(E - C0) <= 0.5 * abs(A0))
    k0 = math.log(2) / max(t[half[0]] - t[0], span / len(t)) if half.size and A0 else 1.0 / span
    popt, _ = curve_fit(
        _exp_model,
        t - t[0],
        E,
        p0=(A0, k0, C0),
        bounds=([-np.inf, 1e-12, -np.inf], [np.inf, np.inf, np.inf]),
        maxfev=20000,
    )
    A, kappa, C = (float(v) for v in popt)
    return A, kappa, C


def envelope(trajectories: Sequence[Trajectory], name: str) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble maximum of a report series over the common time span."""
    ok = [tr for tr in trajectories if tr.reports]
    n = min(len(tr.reports) for tr in ok)
    t = ok[0].times[:n]
    vals = np.max(np.stack([tr.series(name)[:n] for tr in ok]), axis=0)
    return t, vals


def absorbing_fit(
    trajectories: Sequence[Trajectory],
    headroom: float = 0.1,
    reexit_tol: float = 0.1,
    flat_ratio: float = 0.01,
    R1: float | None = None,
) -> AbsorbingFit:
    """Fit the dissipative energy bound on the ensemble envelope and locate the absorbing ball.

    ``R1_hat`` is ``(1 + headroom)`` times the largest radius seen over the last
    tenth of the horizon (or ``R1`` when given).  ``T1_hat`` is the first time
    the ensemble radius envelope drops below ``R1_hat``; afterwards it must
    stay below ``R1_hat * (1 + reexit_tol)``.
    """
    runs = [tr for tr in trajectories if tr.reports]
    if len(runs) < 1:
        raise ValueError("absorbing_fit needs at least one trajectory with reports")
    t, E = envelope(runs, "energy")
    _, rad = envelope(runs, "radius")
    n = len(t)
    if n < 10:
        raise ValueError("series too short for a fit")
    tail = max(2, n // 10)

    slope_first = (E[tail] - E[0]) / (t[tail] - t[0])
    slope_last = (E[-1] - E[-1 - tail]) / (t[-1] - t[-1 - tail])
    conclusive = bool(abs(slope_last) <= flat_ratio * abs(slope_first)) if slope_first else True
    note = "" if conclusive else "energy envelope has not flattened; fit inconclusive"

    A, kappa, C = fit_exponential(t, E)
    R1_hat = R1 if R1 is not None else (1.0 + headroom) * float(np.max(rad[-tail:]))
    first_in = np.flatnonzero(rad < R1_hat)
    T1 = float(t[first_in[0]]) if first_in.size else math.inf
    reexit = bool(first_in.size and np.any(rad[first_in[0]:] > R1_hat * (1.0 + reexit_tol)))

    gron = None
    dt = t[1] - t[0]
    window = 1.0
    if t[-1] - t[0] >= 2 * window and abs(round(window / dt) * dt - window) < 1e-9:
        y = E - E.min()
        b = np.maximum(np.gradient(y, dt), 0.0)
        gron = uniform_gronwall_check(t, y, 0.0, b, window)
    return AbsorbingFit(kappa, C, A, R1_hat, T1, reexit, conclusive, headroom, reexit_tol, gron, note)


# --- late-time regularity ----------------------------------------------------------------

REGULARITY_KEYS = ("sigma_V", "sigma_H2", "mu_V", "beta_L6", "phi_W26", "sigma_A34")


@dataclass
class LateTimeReport:
    t_min: float
    suprema: dict[str, float]
    growth: dict[str, float]
    bounded: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.bounded.values())


def late_time_regularity(trajectory: Trajectory, t_min: float, keys=REGULARITY_KEYS,
                         growth_tol: float = 0.01) -> LateTimeReport:
    """Suprema of the regularity norms over ``t >= t_min``.

    Growth compares the maximum over the last quarter of the window with the
    maximum over the rest of it; a norm counts as bounded when it is finite
    and that growth stays below ``growth_tol``.
    """
    t = trajectory.times
    sel = np.flatnonzero(t >= t_min - 1e-12)
    if sel.size == 0:
        raise ValueError(f"no samples with t >= {t_min}")
    q = sel[int(0.75 * sel.size):]
    head = sel[: max(1, int(0.75 * sel.size))]
    sup, growth, bounded = {}, {}, {}
    for k in keys:
        s = trajectory.series(k)
        sup[k] = float(np.max(s[sel]))
        ref = float(np.max(s[head]))
        growth[k] = (float(np.max(s[q])) - ref) / abs(ref) if ref else 0.0
        bounded[k] = bool(np.isfinite(sup[k]) and growth[k] < growth_tol)
    return LateTimeReport(t_min, sup, growth, bounded)
