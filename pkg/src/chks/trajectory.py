"""Single-trajectory driver: steps a state and records reports and snapshots."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import StateReport, chemical_potential, regularity_report
from .grid import Grid
from .stepper import ModelParams, State, StepFailure, Stepper

log = logging.getLogger(__name__)


@dataclass
class Snapshot:
    t: float
    phi: np.ndarray
    sigma: np.ndarray


@dataclass
class Trajectory:
    grid: Grid
    reports: list[StateReport] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    failure: str | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.reports])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


def simulate(
    state: State,
    params: ModelParams,
    T: float,
    stride: int = 100,
    scheme: str = "standard",
    reports: bool = True,
) -> Trajectory:
    """Advance ``state`` to time ``T`` with a report at every step.

    Snapshots are kept every ``stride`` steps and at the final step.  A step
    failure that survives dt halving ends the run; the failure is recorded and
    everything computed up to that point is kept.
    """
    nsteps = int(round(T / params.dt))
    stepper = Stepper(params, scheme)
    traj = Trajectory(state.grid)
    t0 = state.t
    if state.mu is None:
        state = State(state.grid, state.phi, state.sigma, state.t, chemical_potential(state, params))
    if reports:
        traj.reports.append(regularity_report(state, params))
    traj.snapshots.append(Snapshot(state.t, state.phi.copy(), state.sigma.copy()))
    for n in range(1, nsteps + 1):
        try:
            nxt = stepper.advance(state)
        except StepFailure as exc:
            traj.failure = f"t={state.t:.6g}: {exc}"
            log.error("trajectory stopped at %s", traj.failure)
            break
        # keep the time axis on the exact grid of multiples of dt
        nxt.t = t0 + n * params.dt
        if reports:
            traj.reports.append(regularity_report(nxt, params, nxt.mu, prev=state))
        if n % stride == 0 or n == nsteps:
            traj.snapshots.append(Snapshot(nxt.t, nxt.phi.copy(), nxt.sigma.copy()))
        state = nxt
    return traj
