"""Cell-centered 2D grids with homogeneous Neumann boundary conditions.

Fields are plain ``numpy`` arrays of shape ``(nx, ny)``; index ``(i, j)``
sits at ``((i + 1/2) hx, (j + 1/2) hy)``.  Mirrored ghost cells make the
5-point Laplacian exactly diagonal in the orthonormal DCT-II basis, so the
inverse Laplacian and the fractional powers of ``I - Laplacian`` are exact.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.fft


class GridError(ValueError):
    pass


class PreconditionError(ValueError):
    """Raised when an operator's input violates its precondition."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise GridError("nx, ny must be integers")
        if self.nx < 4 or self.ny < 4:
            raise GridError(f"grid needs nx, ny >= 4, got {self.nx}x{self.ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise GridError("Lx, Ly must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as broadcast-ready ``(nx, 1)`` and ``(1, ny)`` arrays."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return x[:, None], y[None, :]

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.coords()
        return np.broadcast_to(x, self.shape).copy(), np.broadcast_to(y, self.shape).copy()

    def constant(self, c: float) -> np.ndarray:
        return np.full(self.shape, float(c))

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the discrete Neumann operator ``-Laplacian`` per cosine mode."""
        kx = np.arange(self.nx)
        ky = np.arange(self.ny)
        lx = (2.0 / self.hx**2) * (1.0 - np.cos(np.pi * kx / self.nx))
        ly = (2.0 / self.hy**2) * (1.0 - np.cos(np.pi * ky / self.ny))
        lam = lx[:, None] + ly[None, :]
        lam[0, 0] = 0.0
        return lam

    @property
    def lambda1(self) -> float:
        """Smallest nonzero eigenvalue."""
        return float(np.min(self.eigenvalues.ravel()[1:]))

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise GridError(f"field shape {f.shape} does not match grid {self.shape}")
        if not np.isfinite(f).all():
            raise GridError("field has non-finite values")
        return f


class FaceFlux(NamedTuple):
    """Face-normal values: ``x`` has shape ``(nx+1, ny)``, ``y`` has ``(nx, ny+1)``.

    Boundary faces (first/last along the normal axis) carry the no-flux value 0.
    """

    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class SpectralCoeffs:
    grid: Grid
    coeffs: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.grid.eigenvalues


def dct(grid: Grid, f: np.ndarray) -> SpectralCoeffs:
    return SpectralCoeffs(grid, scipy.fft.dctn(grid.check(f), type=2, norm="ortho"))


def idct(c: SpectralCoeffs) -> np.ndarray:
    return scipy.fft.idctn(c.coeffs, type=2, norm="ortho")


def _dct(f):
    return scipy.fft.dctn(f, type=2, norm="ortho")


def _idct(c):
    return scipy.fft.idctn(c, type=2, norm="ortho")


# --- stencil operators -------------------------------------------------------


def face_gradient(grid: Grid, f: np.ndarray) -> FaceFlux:
    f = grid.check(f)
    gx = np.zeros((grid.nx + 1, grid.ny))
    gy = np.zeros((grid.nx, grid.ny + 1))
    gx[1:-1, :] = (f[1:, :] - f[:-1, :]) / grid.hx
    gy[:, 1:-1] = (f[:, 1:] - f[:, :-1]) / grid.hy
    return FaceFlux(gx, gy)


def face_average(grid: Grid, f: np.ndarray) -> FaceFlux:
    """Arithmetic mean of the two cells adjacent to each interior face."""
    f = grid.check(f)
    ax = np.zeros((grid.nx + 1, grid.ny))
    ay = np.zeros((grid.nx, grid.ny + 1))
    ax[1:-1, :] = 0.5 * (f[1:, :] + f[:-1, :])
    ay[:, 1:-1] = 0.5 * (f[:, 1:] + f[:, :-1])
    return FaceFlux(ax, ay)


def divergence(grid: Grid, flux: FaceFlux, *, check_boundary: bool = True) -> np.ndarray:
    fx, fy = flux
    if fx.shape != (grid.nx + 1, grid.ny) or fy.shape != (grid.nx, grid.ny + 1):
        raise GridError("face flux shape does not match grid")
    if check_boundary and (
        np.any(fx[0]) or np.any(fx[-1]) or np.any(fy[:, 0]) or np.any(fy[:, -1])
    ):
        raise PreconditionError("flux has nonzero normal component on boundary faces")
    return (fx[1:, :] - fx[:-1, :]) / grid.hx + (fy[:, 1:] - fy[:, :-1]) / grid.hy


def laplacian_neumann(grid: Grid, f: np.ndarray) -> np.ndarray:
    f = grid.check(f)
    g = np.pad(f, 1, mode="edge")
    return (g[2:, 1:-1] - 2.0 * f + g[:-2, 1:-1]) / grid.hx**2 + (
        g[1:-1, 2:] - 2.0 * f + g[1:-1, :-2]
    ) / grid.hy**2


def laplacian_spectral(grid: Grid, f: np.ndarray) -> np.ndarray:
    return _idct(-grid.eigenvalues * _dct(grid.check(f)))


# --- integrals and spectral operators ----------------------------------------


def integrate(grid: Grid, f: np.ndarray) -> float:
    return float(np.sum(f) * grid.cell_area)


def mean(grid: Grid, f: np.ndarray) -> float:
    return float(np.sum(grid.check(f)) * grid.cell_area / grid.area)


def inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    return float(np.sum(f * g) * grid.cell_area)


def inv_neumann_laplacian(grid: Grid, f: np.ndarray, *, rtol: float = 1e-10) -> np.ndarray:
    """Zero-mean ``g`` with ``-Laplacian g = f``; ``f`` must have zero mean."""
    f = grid.check(f)
    scale = max(float(np.sqrt(np.mean(f * f))), np.finfo(float).tiny)
    if abs(mean(grid, f)) > rtol * scale:
        raise PreconditionError(f"inverse Laplacian needs zero-mean input, mean={mean(grid, f):.3e}")
    c = _dct(f)
    lam = grid.eigenvalues.copy()
    lam[0, 0] = 1.0
    c = c / lam
    c[0, 0] = 0.0
    return _idct(c)


def fractional_apply(grid: Grid, f: np.ndarray, s: float) -> np.ndarray:
    """``(I - Laplacian)^s f`` through the cosine basis."""
    if s == 0:
        return grid.check(f).copy()
    return _idct((1.0 + grid.eigenvalues) ** s * _dct(grid.check(f)))


def apply_A(grid: Grid, f: np.ndarray) -> np.ndarray:
    return f - laplacian_neumann(grid, f)


# --- norms -------------------------------------------------------------------


def lp_norm(grid: Grid, f: np.ndarray, p: float) -> float:
    f = np.abs(f)
    if np.isinf(p):
        return float(np.max(f))
    return float((np.sum(f**p) * grid.cell_area) ** (1.0 / p))


def l2_norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(np.sum(f * f) * grid.cell_area))


def grad_norm_sq(grid: Grid, f: np.ndarray) -> float:
    """``sum over faces of |face gradient|^2 * hx * hy``."""
    gx, gy = face_gradient(grid, f)
    return float((np.sum(gx * gx) + np.sum(gy * gy)) * grid.cell_area)


def v_norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(l2_norm(grid, f) ** 2 + grad_norm_sq(grid, f)))


def h2_norm(grid: Grid, f: np.ndarray) -> float:
    lap = laplacian_neumann(grid, f)
    return float(np.sqrt(l2_norm(grid, f) ** 2 + grad_norm_sq(grid, f) + l2_norm(grid, lap) ** 2))


def frac_norm(grid: Grid, f: np.ndarray, s: float) -> float:
    # Orthonormal DCT: the L2 norm is computed on the coefficients directly.
    c = (1.0 + grid.eigenvalues) ** s * _dct(grid.check(f))
    return float(np.sqrt(np.sum(c * c) * grid.cell_area))


def dual_star_norm(grid: Grid, f: np.ndarray) -> float:
    """``<f, N f>^(1/2)`` for zero-mean ``f``; the mean mode is discarded."""
    c = _dct(grid.check(f))
    lam = grid.eigenvalues.copy()
    lam[0, 0] = np.inf
    return float(np.sqrt(np.sum(c * c / lam) * grid.cell_area))


@dataclass
class NormReport:
    L1: float
    L2: float
    L3: float
    L6: float
    Linf: float
    V: float
    mean: float
    dual_star: float
    frac: dict[float, float] = field(default_factory=dict)


def norms(grid: Grid, f: np.ndarray) -> NormReport:
    f = grid.check(f)
    m = mean(grid, f)
    return NormReport(
        L1=lp_norm(grid, f, 1),
        L2=l2_norm(grid, f),
        L3=lp_norm(grid, f, 3),
        L6=lp_norm(grid, f, 6),
        Linf=lp_norm(grid, f, np.inf),
        V=v_norm(grid, f),
        mean=m,
        dual_star=dual_star_norm(grid, f - m),
        frac={s: frac_norm(grid, f, s) for s in (0.25, 0.5, 0.75)},
    )


# --- snapshot files ----------------------------------------------------------

_MAGIC = b"CHKS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIddd")


def write_snapshot(path: str | Path, grid: Grid, f: np.ndarray, t: float = 0.0) -> None:
    f = grid.check(f)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, grid.nx, grid.ny, grid.Lx, grid.Ly, float(t)))
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def read_snapshot(path: str | Path) -> tuple[Grid, np.ndarray, float]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridError(f"{path}: truncated snapshot header")
    magic, version, nx, ny, Lx, Ly, t = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise GridError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise GridError(f"{path}: unsupported snapshot version {version}")
    grid = Grid(nx, ny, Lx, Ly)
    body = data[_HEADER.size:]
    if len(body) != 8 * nx * ny:
        raise GridError(f"{path}: expected {nx * ny} values, found {len(body) // 8}")
    f = np.frombuffer(body, dtype="<f8").reshape(nx, ny).astype(float)
    return grid, f, t
