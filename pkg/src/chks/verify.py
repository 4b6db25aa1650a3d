"""Built-in self-checks run by ``chks verify``.

These are quick, fixed-size versions of the acceptance properties; the
full-size experiments live in the test suite.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import grid as g
from .attractor import fit_exponential
from .diagnostics import (
    contraction_metric,
    dissipation_residual,
    phase_distance,
    regularity_report,
    strong_phase_distance,
    uniform_gronwall_check,
)
from .grid import Grid
from .potential import CoeffSpec, PotentialSpec
from .stepper import ModelParams, State, step, step_ch
from .trajectory import simulate


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# --- operators ---------------------------------------------------------------


def _operator_checks(n: int) -> list[tuple[str, Callable[[], tuple[bool, str]]]]:
    grid = Grid(n, n, 1.0, 1.3)
    rng = np.random.default_rng(n)

    def inverse():
        f = rng.standard_normal(grid.shape)
        f -= f.mean()
        e1 = _rel(g.inv_neumann_laplacian(grid, -g.laplacian_neumann(grid, f)), f)
        e2 = _rel(-g.laplacian_neumann(grid, g.inv_neumann_laplacian(grid, f)), f)
        return max(e1, e2) <= 1e-10, f"N.B, B.N error {max(e1, e2):.2e}"

    def half_powers():
        f = rng.standard_normal(grid.shape)
        half = g.fractional_apply(grid, g.fractional_apply(grid, f, 0.5), 0.5)
        err = _rel(half, g.apply_A(grid, f))
        return err <= 1e-11, f"A^1/2 A^1/2 vs A error {err:.2e}"

    def by_parts():
        f, h = rng.standard_normal((2, *grid.shape))
        lhs = g.inner(grid, g.laplacian_neumann(grid, f), h)
        gf, gh = g.face_gradient(grid, f), g.face_gradient(grid, h)
        rhs = -(np.sum(gf.x * gh.x) + np.sum(gf.y * gh.y)) * grid.cell_area
        err = abs(lhs - rhs) / abs(rhs)
        return err <= 1e-12, f"integration by parts error {err:.2e}"

    def spectral():
        f = rng.standard_normal(grid.shape)
        err = _rel(g.laplacian_spectral(grid, f), g.laplacian_neumann(grid, f))
        return err <= 1e-11, f"stencil vs spectral Laplacian {err:.2e}"

    return [
        (f"{n}x{n} inverse Laplacian", inverse),
        (f"{n}x{n} half powers of A", half_powers),
        (f"{n}x{n} integration by parts", by_parts),
        (f"{n}x{n} spectral Laplacian", spectral),
    ]


def operator_suite():
    checks = []
    for n in (16, 32, 64):
        checks.extend(_operator_checks(n))
    return checks


# --- steppers ----------------------------------------------------------------


def _coupled_setup(n=32, chi=1.0, lam=3.0, dt=0.01):
    grid = Grid(n, n, 6.4, 6.4)
    rng = np.random.default_rng(7)
    phi = np.clip(0.1 + 0.3 * rng.standard_normal(grid.shape), -0.9, 0.9)
    sigma = 0.5 + 0.5 * rng.random(grid.shape)
    params = ModelParams(chi=chi, potential=PotentialSpec(lam=lam), dt=dt)
    return grid, State(grid, phi, sigma), params


def stepper_suite():
    def mass_and_bounds():
        grid, s, p = _coupled_setup()
        m0 = s.phi.mean()
        worst_mass, worst_phi, min_sig = 0.0, 0.0, np.inf
        for _ in range(300):
            s = step(s, p)
            worst_mass = max(worst_mass, abs(s.phi.mean() - m0))
            worst_phi = max(worst_phi, float(np.abs(s.phi).max()))
            min_sig = min(min_sig, float(s.sigma.min()))
        ok = worst_mass <= 1e-12 and worst_phi < 1 and min_sig >= -1e-12
        return ok, f"mass drift {worst_mass:.1e}, max|phi| {worst_phi:.6f}, min sigma {min_sig:.3e}"

    def entropic_positive():
        grid, s, p = _coupled_setup()
        min_sig = np.inf
        for _ in range(300):
            s = step(s, p, "entropic")
            min_sig = min(min_sig, float(s.sigma.min()))
        return min_sig > 0, f"min sigma {min_sig:.3e}"

    def logistic_oracle():
        grid = Grid(16, 16)
        p = ModelParams(chi=0.0, potential=PotentialSpec(lam=1.0), dt=0.05)
        s = State(grid, grid.constant(0.3), grid.constant(0.1))
        ref, worst = 0.1, 0.0
        for _ in range(1000):
            s = step(s, p)
            ref = ref / (1.0 + p.dt * ref - p.dt)
            worst = max(worst, abs(float(s.sigma.max()) - ref) / ref, abs(float(s.sigma.min()) - ref) / ref,
                        float(np.max(np.abs(s.phi - 0.3))))
        return worst <= 1e-12, f"max deviation from scalar oracle {worst:.1e}"

    def equilibrium():
        grid = Grid(16, 16)
        p = ModelParams(chi=0.5, potential=PotentialSpec(lam=2.0), h_spec=CoeffSpec.constant(2.0), dt=0.05)
        s = State(grid, grid.constant(-0.2), grid.constant(0.5))
        for _ in range(50):
            s = step(s, p)
        err = max(float(np.max(np.abs(s.phi + 0.2))), float(np.max(np.abs(s.sigma - 0.5))))
        return err <= 1e-10, f"drift from equilibrium {err:.1e}"

    return [
        ("mass, confinement, nonnegativity", mass_and_bounds),
        ("entropic stepper positivity", entropic_positive),
        ("decoupled logistic oracle", logistic_oracle),
        ("equilibrium fixed point", equilibrium),
    ]


# --- estimates ---------------------------------------------------------------


def estimate_suite():
    def dissipation_rate():
        grid = Grid(32, 32, 2 * np.pi, 2 * np.pi)
        x, y = grid.coords()
        phi0 = 0.2 + 0.3 * np.cos(x) * np.cos(y)
        sig0 = 1.0 + 0.3 * np.cos(2 * x) + 0.2 * np.cos(y)
        res = []
        for dt in (0.01, 0.005):
            p = ModelParams(chi=0.5, potential=PotentialSpec(lam=1.0), dt=dt)
            tr = simulate(State(grid, phi0.copy(), sig0.copy()), p, 0.2, stride=10**6)
            res.append(tr.reports[-1].dissipation_residual)
        ratio = res[0] / res[1]
        return 1.5 <= ratio <= 2.5, f"residual ratio {ratio:.3f}"

    def equilibrium_residual():
        grid = Grid(16, 16)
        p = ModelParams(chi=0.0, potential=PotentialSpec(lam=1.0), dt=0.05)
        s0 = State(grid, grid.constant(0.1), grid.constant(1.0))
        s1 = step(s0, p)
        r = dissipation_residual(s0, s1, s1.mu, p.dt, p)
        return abs(r) <= 1e-9, f"equilibrium residual {r:.1e}"

    def metrics():
        grid = Grid(16, 16)
        spec = PotentialSpec(lam=1.0)
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(20):
            a, b, c = (np.clip(rng.uniform(-0.95, 0.95, grid.shape), -0.95, 0.95) for _ in range(3))
            for d in (phase_distance, strong_phase_distance):
                worst = max(worst, d(grid, a, c, spec) - d(grid, a, b, spec) - d(grid, b, c, spec))
                worst = max(worst, abs(d(grid, a, b, spec) - d(grid, b, a, spec)), d(grid, a, a, spec))
        return worst <= 1e-12, f"worst axiom defect {worst:.1e}"

    def gronwall():
        t = np.linspace(0, 5, 501)
        a, b = 0.3, 0.5
        y = (1.0 + b / a) * np.exp(a * t) - b / a
        rep = uniform_gronwall_check(t, y, a, b)
        return rep.ok, f"bound {rep.bound:.4g}, violations {len(rep.violations)}"

    def fit():
        t = np.linspace(0, 5, 501)
        A, k, C = fit_exponential(t, 5 * np.exp(-2 * t) + 1)
        ok = abs(k - 2) <= 0.1 and abs(C - 1) <= 0.05
        return ok, f"kappa {k:.4f}, C {C:.4f}"

    def determinism():
        grid, s, p = _coupled_setup(n=16)
        a, b = s.copy(), s.copy()
        for _ in range(20):
            a, b = step(a, p), step(b, p)
        d = contraction_metric(a, b)
        return d == 0.0 and np.array_equal(a.phi, b.phi), f"twin-run metric {d:.1e}"

    return [
        ("dissipation defect is first order", dissipation_rate),
        ("equilibrium dissipation defect", equilibrium_residual),
        ("metric axioms", metrics),
        ("uniform Gronwall on exact series", gronwall),
        ("exponential fit oracle", fit),
        ("twin-run determinism", determinism),
    ]


SUITES = {"operators": operator_suite, "steppers": stepper_suite, "estimates": estimate_suite}


def run_suite(level: str) -> list[CheckResult]:
    results = []
    for name, fn in SUITES[level]():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time    detail", "-" * (width + 40)]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:5.2f}s  {r.detail}")
    return "\n".join(lines)
