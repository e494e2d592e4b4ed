"""Design variables and the smoothing/projection chain.

The raw optimization variables live on the element grid of the periodic
unit cell.  A double filtering chain (hat-kernel smoothing, smoothed
Heaviside projection, second smoothing, multi-threshold projection) maps
them to the five physical density fields: blueprint, eroded, dilated and
the second eroded/dilated pair used by the constraints.  All fields are
periodic in x; the top and bottom plate rows are forced solid.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridSpec",
    "FilterSpec",
    "DesignVector",
    "PhysicalDesignSet",
    "smooth_filter",
    "smoothing_matrix",
    "heaviside_project",
    "heaviside_derivative",
    "build_physical_designs",
    "chain_backprop",
    "write_snapshot",
    "read_snapshot",
]


@dataclass(frozen=True)
class GridSpec:
    """Structured element grid of one unit cell.

    Element (ix, iy) has flat index iy*nx + ix (row-major, x fastest).
    ``fixed_rows`` rows at the top and bottom are forced solid to keep
    the face plates intact.
    """

    nx: int
    ny: int
    element_size: float
    fixed_rows: int = 0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs nx, ny >= 4")
        if self.element_size <= 0:
            raise ValueError("element_size must be positive")
        if self.fixed_rows < 0 or 2 * self.fixed_rows >= self.ny:
            raise ValueError("fixed_rows must satisfy 0 <= 2*fixed_rows < ny")

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def lx(self) -> float:
        return self.nx * self.element_size

    @property
    def ly(self) -> float:
        return self.ny * self.element_size

    def element_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def mask(self) -> np.ndarray:
        """Boolean array, True on elements of the fixed plate rows."""
        iy = np.arange(self.n_elements) // self.nx
        return (iy < self.fixed_rows) | (iy >= self.ny - self.fixed_rows)


def paper_grid() -> GridSpec:
    """The 50 x 50 mm cell: 100 x 100 elements of 0.5 mm, 5 mm plates."""
    return GridSpec(nx=100, ny=100, element_size=0.5e-3, fixed_rows=10)


@dataclass(frozen=True)
class FilterSpec:
    """Parameters of the double filtering chain.

    Radii are in element widths.  ``eta_b`` is the blueprint threshold;
    the eroded/dilated thresholds are eta_b +/- delta_eta.  A LOWER
    threshold passes more material, so the dilated branch uses
    eta_b - delta_eta and the second-stage constants satisfy
    eta_dilate2 < eta_b < eta_erode2.
    """

    r1: float = 14.0
    r2: float = 7.0
    beta1: float = 1.0
    beta2: float = 0.5
    eta_b: float = 0.5
    delta_eta: float = 0.1
    eta_erode2: float = 0.6
    eta_dilate2: float = 0.4

    def __post_init__(self):
        if self.r1 <= 0 or self.r2 <= 0:
            raise ValueError("filter radii must be positive")
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("projection steepness must be positive")
        for eta in (self.eta_b, self.eta_b - self.delta_eta,
                    self.eta_b + self.delta_eta, self.eta_erode2, self.eta_dilate2):
            if not 0.0 < eta < 1.0:
                raise ValueError("projection thresholds must lie in (0, 1)")
        if not self.eta_dilate2 < self.eta_b < self.eta_erode2:
            raise ValueError("need eta_dilate2 < eta_b < eta_erode2")

    def thresholds(self) -> dict[str, float]:
        """Second-projection threshold per field tag."""
        return {
            "b": self.eta_b,
            "e": self.eta_b + self.delta_eta,
            "d": self.eta_b - self.delta_eta,
            "e2": self.eta_erode2,
            "d2": self.eta_dilate2,
        }


@dataclass
class DesignVector:
    """Raw optimization variables on the element grid, masked plate rows."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_elements,):
            raise ValueError(
                f"design vector length {self.values.shape} does not match grid "
                f"({self.grid.n_elements} elements)")
        if np.any(self.values < -1e-12) or np.any(self.values > 1 + 1e-12):
            raise ValueError("design values must lie in [0, 1]")
        self.values = np.clip(self.values, 0.0, 1.0)
        self.values[self.grid.mask()] = 1.0


@dataclass
class PhysicalDesignSet:
    """The five projected density fields of one design point."""

    b: np.ndarray
    e: np.ndarray
    d: np.ndarray
    e2: np.ndarray
    d2: np.ndarray

    def field(self, tag: str) -> np.ndarray:
        return getattr(self, tag)

    def tags(self) -> tuple[str, ...]:
        return ("b", "e", "d", "e2", "d2")


_SMOOTHING_CACHE: dict[tuple, sp.csr_matrix] = {}


def smoothing_matrix(radius: float, grid: GridSpec) -> sp.csr_matrix:
    """Row-normalized hat-kernel smoothing operator.

    Weights are max(0, R - d) on element-center distances measured in
    element widths; x wraps periodically (minimal image), y truncates the
    stencil and the row normalization uses only the weights present.
    """
    if radius <= 0:
        raise ValueError("smoothing radius must be positive")
    key = (round(float(radius), 12), grid.nx, grid.ny)
    cached = _SMOOTHING_CACHE.get(key)
    if cached is not None:
        return cached

    nx, ny = grid.nx, grid.ny
    r_int = int(math.ceil(radius)) - 1
    if 2 * r_int + 1 <= nx:
        dxs = range(-r_int, r_int + 1)
    else:
        # kernel wider than the cell: one period, minimal-image distances
        dxs = range(-(nx // 2), nx - nx // 2)
    offs = []
    for dy in range(-r_int, r_int + 1):
        for dx in dxs:
            w = radius - math.hypot(dx, dy)
            if w > 0.0:
                offs.append((dx, dy, w))

    n = grid.n_elements
    ex = np.arange(n) % nx
    ey = np.arange(n) // nx
    rows, cols, data = [], [], []
    for dx, dy, w in offs:
        jy = ey + dy
        valid = (jy >= 0) & (jy < ny)
        jx = (ex + dx) % nx  # periodic wrap in x only
        rows.append(np.nonzero(valid)[0])
        cols.append((jy[valid] * nx + jx[valid]))
        data.append(np.full(valid.sum(), w))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    w_raw = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    norm = np.asarray(w_raw.sum(axis=1)).ravel()
    w_norm = sp.diags(1.0 / norm) @ w_raw
    w_norm = w_norm.tocsr()
    _SMOOTHING_CACHE[key] = w_norm
    return w_norm


def smooth_filter(field: np.ndarray, radius: float, grid: GridSpec) -> np.ndarray:
    """Apply the hat-kernel smoothing filter to an element field."""
    field = np.asarray(field, dtype=float)
    if field.shape != (grid.n_elements,):
        raise ValueError("field length does not match grid")
    return smoothing_matrix(radius, grid) @ field


def heaviside_project(field: np.ndarray, eta: float, beta: float) -> np.ndarray:
    """Smoothed Heaviside projection.

    H(x) = [tanh(beta*eta) + tanh(beta*(x - eta))] /
           [tanh(beta*eta) + tanh(beta*(1 - eta))]

    Maps [0,1] onto [0,1], fixing the endpoints; nondecreasing in x and
    nonincreasing in eta.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("projection level eta must lie in (0, 1)")
    if beta <= 0:
        raise ValueError("projection steepness beta must be positive")
    field = np.asarray(field, dtype=float)
    t0 = math.tanh(beta * eta)
    return (t0 + np.tanh(beta * (field - eta))) / (t0 + math.tanh(beta * (1.0 - eta)))


def heaviside_derivative(field: np.ndarray, eta: float, beta: float) -> np.ndarray:
    """Entrywise derivative of :func:`heaviside_project` w.r.t. its input."""
    if not 0.0 < eta < 1.0:
        raise ValueError("projection level eta must lie in (0, 1)")
    if beta <= 0:
        raise ValueError("projection steepness beta must be positive")
    field = np.asarray(field, dtype=float)
    t0 = math.tanh(beta * eta)
    sech2 = 1.0 / np.cosh(beta * (field - eta)) ** 2
    return beta * sech2 / (t0 + math.tanh(beta * (1.0 - eta)))


@dataclass
class ChainState:
    """Forward intermediates needed to backpropagate through the chain."""

    xi_masked: np.ndarray
    smooth1: np.ndarray
    proj1: np.ndarray
    smooth2: np.ndarray
    spec: FilterSpec
    grid: GridSpec


def build_physical_designs(
    xi: DesignVector, spec: FilterSpec, return_state: bool = False
) -> PhysicalDesignSet | tuple[PhysicalDesignSet, ChainState]:
    """Map raw variables to the five physical density fields.

    Chain: mask -> smooth(r1) -> project(eta_b, beta1) -> smooth(r2)
    -> project(threshold per field, beta2) -> re-mask.
    """
    grid = xi.grid
    mask = grid.mask()
    x0 = xi.values.copy()
    x0[mask] = 1.0
    s1 = smooth_filter(x0, spec.r1, grid)
    p1 = heaviside_project(s1, spec.eta_b, spec.beta1)
    s2 = smooth_filter(p1, spec.r2, grid)
    fields = {}
    for tag, eta in spec.thresholds().items():
        out = heaviside_project(s2, eta, spec.beta2)
        out[mask] = 1.0
        fields[tag] = out
    designs = PhysicalDesignSet(**fields)
    if return_state:
        return designs, ChainState(x0, s1, p1, s2, spec, grid)
    return designs


def chain_backprop(grad_phys: np.ndarray, tag: str, state: ChainState) -> np.ndarray:
    """Pull a gradient w.r.t. one physical field back to the raw variables.

    Transposed smoothings and diagonal projection derivatives applied in
    reverse chain order; masked entries carry zero gradient on both ends.
    """
    spec, grid = state.spec, state.grid
    eta = spec.thresholds()[tag]
    mask = grid.mask()
    g = np.asarray(grad_phys, dtype=float).copy()
    g[mask] = 0.0  # masked outputs are constants
    g = g * heaviside_derivative(state.smooth2, eta, spec.beta2)
    g = smoothing_matrix(spec.r2, grid).T @ g
    g = g * heaviside_derivative(state.smooth1, spec.eta_b, spec.beta1)
    g = smoothing_matrix(spec.r1, grid).T @ g
    g[mask] = 0.0  # masked inputs are not variables
    return g


def write_snapshot(values: np.ndarray, grid: GridSpec) -> str:
    """Serialize an element field as a plain-text grayscale grid.

    One header line (nx, ny, element_size) then one row of 6-decimal
    values per grid row, bottom row first.  The canonical form
    round-trips bit-exactly through :func:`read_snapshot`.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_elements,):
        raise ValueError("field length does not match grid")
    buf = io.StringIO()
    buf.write(f"{grid.nx} {grid.ny} {grid.element_size!r} {grid.fixed_rows}\n")
    rows = values.reshape(grid.ny, grid.nx)
    for row in rows:
        buf.write(" ".join(f"{v:.6f}" for v in row))
        buf.write("\n")
    return buf.getvalue()


def read_snapshot(text: str) -> tuple[np.ndarray, GridSpec]:
    """Parse the snapshot format written by :func:`write_snapshot`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty snapshot")
    head = lines[0].split()
    if len(head) != 4:
        raise ValueError("snapshot header must be 'nx ny element_size fixed_rows'")
    nx, ny = int(head[0]), int(head[1])
    grid = GridSpec(nx=nx, ny=ny, element_size=float(head[2]),
                    fixed_rows=int(head[3]))
    if len(lines) - 1 != ny:
        raise ValueError(f"snapshot expects {ny} rows, found {len(lines) - 1}")
    rows = [np.array([float(tok) for tok in ln.split()]) for ln in lines[1:]]
    arr = np.vstack(rows)
    if arr.shape != (ny, nx):
        raise ValueError("snapshot row length does not match header")
    return arr.ravel(), grid
