"""Singular configuration potentials and the logistic coefficient functions.

A potential is split as ``F(r) = beta_hat(r) - lam r^2 / 2`` with ``beta_hat``
convex on ``[-1, 1]``, ``beta_hat(0) = 0`` and ``beta = beta_hat'`` monotone.
Every function here accepts scalars or arrays and works pointwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import xlogy

KINDS = ("flory_huggins", "double_obstacle_smoothed", "custom_tabulated")

_ONE_MINUS = np.nextafter(1.0, 0.0)


class DomainError(ValueError):
    pass


class SingularEndpointError(DomainError):
    """The monotone graph has no finite element at the requested endpoint."""


class InvalidSpecError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    """Convex part of the potential plus the nonconvexity coefficient ``lam``.

    ``smoothing`` is the width of the smoothed double obstacle
    ``beta_hat = smoothing * (1 - sqrt(1 - r^2))``.  ``table`` holds
    ``(nodes, values)`` of a monotone piecewise-linear ``beta`` on ``[-1, 1]``.
    """

    kind: str = "flory_huggins"
    lam: float = 0.0
    yosida_eps: float = 1e-6
    smoothing: float = 0.1
    table: tuple[tuple[float, ...], tuple[float, ...]] | None = field(default=None, compare=True)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpecError(f"unknown potential kind {self.kind!r}")
        if not self.lam >= 0:
            raise InvalidSpecError("lambda must be >= 0")
        if not self.yosida_eps > 0:
            raise InvalidSpecError("yosida_eps must be > 0")
        if self.kind == "double_obstacle_smoothed" and not self.smoothing > 0:
            raise InvalidSpecError("smoothing must be > 0")
        if self.kind == "custom_tabulated":
            _validate_table(self.table)

    @property
    def singular(self) -> bool:
        """True when ``beta`` blows up at ``+-1``."""
        return self.kind != "custom_tabulated"


def _validate_table(table):
    if table is None:
        raise InvalidSpecError("custom_tabulated potential needs a (nodes, values) table")
    r, b = (np.asarray(a, dtype=float) for a in table)
    if r.ndim != 1 or r.shape != b.shape or r.size < 2:
        raise InvalidSpecError("table nodes and values must be 1D of equal length >= 2")
    if r[0] != -1.0 or r[-1] != 1.0 or np.any(np.diff(r) <= 0):
        raise InvalidSpecError("table nodes must increase strictly from -1 to 1")
    if not np.all(np.isfinite(b)) or np.any(np.diff(b) < 0):
        raise InvalidSpecError("tabulated beta must be finite and nondecreasing")
    if abs(np.interp(0.0, r, b)) > 1e-12:
        raise InvalidSpecError("tabulated beta must vanish at 0")


def _table(spec):
    r, b = (np.asarray(a, dtype=float) for a in spec.table)
    return r, b


def _check_closed(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(np.abs(r) <= 1.0)):
        raise DomainError("argument outside [-1, 1]")
    return r


def _check_open(spec, r):
    r = _check_closed(r)
    if np.any(np.abs(r) == 1.0):
        if spec.singular:
            raise SingularEndpointError("beta is unbounded at +-1")
        raise DomainError("beta is single-valued only on (-1, 1); use beta0 at the endpoints")
    return r


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def beta_hat(spec: PotentialSpec, r):
    r = _check_closed(r)
    if spec.kind == "flory_huggins":
        out = xlogy(1.0 + r, 1.0 + r) + xlogy(1.0 - r, 1.0 - r)
    elif spec.kind == "double_obstacle_smoothed":
        out = spec.smoothing * (r * r / (1.0 + np.sqrt(1.0 - r * r)))
    else:
        out = _tab_primitive(spec, r) - _tab_primitive(spec, np.zeros(()))
    return _out(out)


def _tab_primitive(spec, r):
    nodes, vals = _table(spec)
    widths = np.diff(nodes)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * widths * (vals[1:] + vals[:-1]))])
    j = np.clip(np.searchsorted(nodes, r, side="right") - 1, 0, nodes.size - 2)
    d = r - nodes[j]
    slope = (vals[j + 1] - vals[j]) / widths[j]
    return cum[j] + vals[j] * d + 0.5 * slope * d * d


def _beta_unchecked(spec, r):
    if spec.kind == "flory_huggins":
        return np.log1p(r) - np.log1p(-r)
    if spec.kind == "double_obstacle_smoothed":
        return spec.smoothing * r / np.sqrt((1.0 - r) * (1.0 + r))
    nodes, vals = _table(spec)
    return np.interp(r, nodes, vals)


def _beta_prime_unchecked(spec, r):
    if spec.kind == "flory_huggins":
        return 2.0 / ((1.0 - r) * (1.0 + r))
    if spec.kind == "double_obstacle_smoothed":
        return spec.smoothing / ((1.0 - r) * (1.0 + r)) ** 1.5
    nodes, vals = _table(spec)
    j = np.clip(np.searchsorted(nodes, r, side="right") - 1, 0, nodes.size - 2)
    return (vals[j + 1] - vals[j]) / (nodes[j + 1] - nodes[j])


def beta(spec: PotentialSpec, r):
    return _out(_beta_unchecked(spec, _check_open(spec, r)))


def beta_prime(spec: PotentialSpec, r):
    """Derivative of ``beta`` (one-sided slope at table kinks)."""
    return _out(_beta_prime_unchecked(spec, _check_open(spec, r)))


def beta0(spec: PotentialSpec, r):
    """Minimal section of the maximal monotone extension of ``beta`` on ``[-1, 1]``."""
    r = _check_closed(r)
    if spec.singular:
        return beta(spec, r)
    return _out(_beta_unchecked(spec, r))


def F_value(spec: PotentialSpec, r):
    r = _check_closed(r)
    return _out(np.asarray(beta_hat(spec, r)) - 0.5 * spec.lam * r * r)


def f_value(spec: PotentialSpec, r):
    r = _check_open(spec, r)
    return _out(_beta_unchecked(spec, r) - spec.lam * r)


def resolvent(spec: PotentialSpec, tau: float, y, *, tol: float = 1e-12, max_iter: int = 200):
    """Solve ``x + tau * beta(x) = y`` for ``x`` pointwise.

    Safeguarded Newton: each iterate keeps a sign bracket and falls back to
    bisection whenever the Newton update leaves it.  Stops at ``|residual| <= tol``
    or when the bracket has collapsed to a few ulps.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y).copy()
    x = np.empty_like(y)

    if spec.singular:
        lo = np.full_like(y, -_ONE_MINUS)
        hi = np.full_like(y, _ONE_MINUS)
    else:
        _, vals = _table(spec)
        top = y >= 1.0 + tau * vals[-1]
        bot = y <= -1.0 + tau * vals[0]
        lo = np.full_like(y, -1.0)
        hi = np.full_like(y, 1.0)
        x[top] = 1.0
        x[bot] = -1.0

    if spec.kind == "flory_huggins":
        guess = np.tanh(y / (1.0 + 2.0 * tau))
    else:
        guess = y / (1.0 + tau * _beta_prime_unchecked(spec, np.zeros_like(y)))
    active = np.ones(y.shape, dtype=bool) if spec.singular else ~(top | bot)
    xa = np.clip(guess[active], lo[active], hi[active])
    ya, la, ha = y[active], lo[active], hi[active]

    for _ in range(max_iter):
        if xa.size == 0:
            break
        g = xa + tau * _beta_unchecked(spec, xa) - ya
        done = (np.abs(g) <= tol) | (ha - la <= 4 * np.spacing(np.maximum(np.abs(la), np.abs(ha))))
        idx = np.flatnonzero(active)
        x[idx[done]] = xa[done]
        active[idx[done]] = False
        keep = ~done
        xa, ya, la, ha, g = xa[keep], ya[keep], la[keep], ha[keep], g[keep]
        la = np.where(g < 0, xa, la)
        ha = np.where(g > 0, xa, ha)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - g / (1.0 + tau * _beta_prime_unchecked(spec, xa))
        bad = ~((xn > la) & (xn < ha))
        xa = np.where(bad, 0.5 * (la + ha), xn)
    if xa.size:
        x[np.flatnonzero(active)] = xa
    return float(x[0]) if scalar else x.reshape(np.shape(y))


def yosida(spec: PotentialSpec, eps: float, r):
    """Moreau-Yosida approximation ``(r - J_eps(r)) / eps`` of ``beta``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    r = np.asarray(r, dtype=float)
    return _out((r - resolvent(spec, eps, r)) / eps)


# --- logistic coefficients ---------------------------------------------------


@dataclass(frozen=True)
class CoeffSpec:
    """Either a positive constant or ``lo + (hi - lo) * sigma / (sigma + scale)``."""

    kind: Literal["constant", "saturating"] = "constant"
    value: float = 1.0
    lo: float = 1.0
    hi: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind == "constant":
            if not self.value > 0:
                raise InvalidSpecError("constant coefficient must be > 0")
        elif self.kind == "saturating":
            if not self.lo > 0:
                raise InvalidSpecError("saturating coefficient needs lo > 0")
            if not self.hi >= self.lo:
                raise InvalidSpecError("saturating coefficient needs hi >= lo")
            if not self.scale > 0:
                raise InvalidSpecError("saturating coefficient needs scale > 0")
        else:
            raise InvalidSpecError(f"unknown coefficient kind {self.kind!r}")

    @classmethod
    def constant(cls, c: float) -> "CoeffSpec":
        return cls("constant", value=c, lo=c, hi=c)

    @classmethod
    def saturating(cls, lo: float, hi: float, scale: float = 1.0) -> "CoeffSpec":
        return cls("saturating", value=lo, lo=lo, hi=hi, scale=scale)

    @property
    def lower(self) -> float:
        return self.value if self.kind == "constant" else self.lo

    @property
    def upper(self) -> float:
        return self.value if self.kind == "constant" else self.hi


def coefficient_eval(cspec: CoeffSpec, sigma, phi=0.0):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise DomainError("coefficients are defined for sigma >= 0")
    _check_closed(phi)
    return _out(_coeff(cspec, sigma, phi))


def _coeff(cspec, sigma, phi=None):
    """Unchecked evaluation; negative sigma undershoots are read as 0."""
    sigma = np.asarray(sigma, dtype=float)
    if cspec.kind == "constant":
        return np.full(sigma.shape, cspec.value) if sigma.ndim else cspec.value
    s = np.maximum(sigma, 0.0)
    return cspec.lo + (cspec.hi - cspec.lo) * s / (s + cspec.scale)
