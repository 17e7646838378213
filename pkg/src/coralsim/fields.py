"""Structured-grid fields on an axis-aligned box.

Scalars (cell densities, chemical signal, pressure) live at cell centers;
velocity components live on cell faces in the usual MAC staggering::

    scalar : (nx, ny, nz)      cell centers
    u_x    : (nx+1, ny, nz)    faces normal to x (boundary faces included)
    u_y    : (nx, ny+1, nz)    faces normal to y
    u_z    : (nx, ny, nz+1)    faces normal to z

Boundary conditions are fixed by the model and baked into the operators:
homogeneous Neumann (zero flux) for every cell-centered scalar, homogeneous
Dirichlet (no-slip) for the velocity.  An axis may be collapsed to a single
cell (dim == 1) to run 2D or 1D problems with the same code; collapsed axes
carry no flux and are ignored in boundary-distance computations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "integrate",
    "lp_norm",
    "velocity_l2",
    "velocity_inner",
]


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on [0, Lx] x [0, Ly] x [0, Lz]."""

    dims: tuple[int, int, int]
    extent: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if len(self.dims) != 3 or len(self.extent) != 3:
            raise ValueError("dims and extent must have three entries")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        if any(n < 1 for n in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if max(self.dims) < 2:
            raise ValueError("at least one axis must have >= 2 cells")
        if any(not (e > 0.0) or not math.isfinite(e) for e in self.extent):
            raise ValueError(f"extents must be positive and finite, got {self.extent}")

    @property
    def spacing(self) -> tuple[float, float, float]:
        # exactly L/N per axis
        return tuple(self.extent[a] / self.dims[a] for a in range(3))

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.spacing
        return hx * hy * hz

    @property
    def volume(self) -> float:
        return self.extent[0] * self.extent[1] * self.extent[2]

    @property
    def active_axes(self) -> tuple[int, ...]:
        """Axes with more than one cell; collapsed axes carry no flux."""
        return tuple(a for a in range(3) if self.dims[a] > 1)

    def cell_centers(self, axis: int) -> np.ndarray:
        """Midpoint coordinates of cell centers along ``axis`` (1D array)."""
        h = self.spacing[axis]
        return (np.arange(self.dims[axis]) + 0.5) * h

    def cell_center_mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable (sparse) meshgrid of cell-center coordinates."""
        return tuple(
            self.cell_centers(a).reshape([-1 if b == a else 1 for b in range(3)])
            for a in range(3)
        )

    def face_shape(self, axis: int) -> tuple[int, int, int]:
        s = list(self.dims)
        s[axis] += 1
        return tuple(s)

    def face_center_mesh(self, axis: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinates of face centers for faces normal to ``axis``."""
        out = []
        for a in range(3):
            h = self.spacing[a]
            if a == axis:
                coords = np.arange(self.dims[a] + 1) * h
            else:
                coords = (np.arange(self.dims[a]) + 0.5) * h
            out.append(coords.reshape([-1 if b == a else 1 for b in range(3)]))
        return tuple(out)

    def boundary_distance(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Distance to the boundary of the box, ignoring collapsed axes."""
        coords = (x, y, z)
        dist = None
        for a in self.active_axes:
            d = np.minimum(coords[a], self.extent[a] - coords[a])
            dist = d if dist is None else np.minimum(dist, d)
        return np.maximum(dist, 0.0)


@dataclass
class ScalarField:
    """Cell-centered scalar; ``values`` has shape ``grid.dims``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.dims:
            raise ValueError(
                f"scalar shape {self.values.shape} does not match grid {self.grid.dims}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.dims))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.dims, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        """Sample ``fn(x, y, z)`` at cell centers (midpoint rule)."""
        x, y, z = grid.cell_center_mesh()
        return cls(grid, np.broadcast_to(np.asarray(fn(x, y, z), dtype=np.float64), grid.dims).copy())

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    """MAC face-centered velocity; one array per component.

    Boundary faces are stored; the no-penetration condition means the
    outermost plane of each component is held at zero by the solvers.
    """

    grid: Grid
    components: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.components:
            self.components = [np.zeros(self.grid.face_shape(a)) for a in range(3)]
        self.components = [np.asarray(c, dtype=np.float64) for c in self.components]
        for a in range(3):
            if self.components[a].shape != self.grid.face_shape(a):
                raise ValueError(
                    f"component {a} shape {self.components[a].shape} "
                    f"!= face shape {self.grid.face_shape(a)}"
                )

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        """Sample ``fn(axis, x, y, z)`` at face centers; boundary faces zeroed."""
        comps = []
        for a in range(3):
            x, y, z = grid.face_center_mesh(a)
            vals = np.broadcast_to(
                np.asarray(fn(a, x, y, z), dtype=np.float64), grid.face_shape(a)
            ).copy()
            comps.append(vals)
        v = cls(grid, comps)
        v.zero_boundary_faces()
        return v

    def copy(self) -> "VectorField":
        return VectorField(self.grid, [c.copy() for c in self.components])

    def zero_boundary_faces(self) -> None:
        """Enforce zero normal velocity on the domain boundary."""
        for a in range(3):
            c = self.components[a]
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[a] = 0
            sl_hi[a] = -1
            c[tuple(sl_lo)] = 0.0
            c[tuple(sl_hi)] = 0.0

    def boundary_normal_max(self) -> float:
        """Largest |normal velocity| on the boundary (should be exactly 0)."""
        worst = 0.0
        for a in range(3):
            c = self.components[a]
            sl_lo = [slice(None)] * 3
            sl_hi = [slice(None)] * 3
            sl_lo[a] = 0
            sl_hi[a] = -1
            worst = max(worst, np.abs(c[tuple(sl_lo)]).max(initial=0.0),
                        np.abs(c[tuple(sl_hi)]).max(initial=0.0))
        return worst


# ---------------------------------------------------------------------------
# integrals and norms
# ---------------------------------------------------------------------------

def integrate(f: ScalarField) -> float:
    """Cell-volume-weighted sum; exact for constant fields."""
    return float(f.values.sum()) * f.grid.cell_volume


def lp_norm(f: ScalarField, p: float) -> float:
    """Discrete L^p norm, p in [1, inf]."""
    if p == math.inf:
        return float(np.abs(f.values).max())
    if not p >= 1.0:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    return float((np.abs(f.values) ** p).sum() * f.grid.cell_volume) ** (1.0 / p)


def velocity_l2(u: VectorField) -> float:
    """Discrete L^2 norm of a MAC velocity (each face weighted by one cell volume)."""
    return math.sqrt(velocity_inner(u, u))


def velocity_inner(u: VectorField, v: VectorField) -> float:
    """Inner product under which the discrete Helmholtz projection is orthogonal."""
    dv = u.grid.cell_volume
    return sum(float(np.vdot(a, b)) for a, b in zip(u.components, v.components)) * dv
