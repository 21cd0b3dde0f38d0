"""Structured grids, nodal fields, discrete calculus, and boundary data.

The spatial setting is a node-centered uniform rectangular grid in one or
two dimensions.  Every boundary node belongs, for each of the three
physical fields (mechanical, electric, thermal), to exactly one of two
complementary boundary parts: the essential part, where the field value is
prescribed, and the natural part, where the conjugate flux (traction,
surface charge, normal heat flux) is prescribed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .errors import GridTooSmall, PartitionMismatch, ValidationError

__all__ = [
    "Grid",
    "Field",
    "IncrementalAction",
    "gradient",
    "divergence",
    "integrate_volume",
    "integrate_surface",
    "apply_boundary_conditions",
]

PARTITIONS = ("mech", "elec", "therm")

_SIDES_1D = ("left", "right")
_SIDES_2D = ("left", "right", "bottom", "top")

_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered rectangular grid with boundary partitions.

    Parameters
    ----------
    extents : tuple of float
        Physical length per axis, > 0.
    n : tuple of int
        Node count per axis, each >= 3.
    mech_essential, elec_essential, therm_essential : tuple of str
        Side names ("left", "right" and, in 2-D, "bottom", "top") whose
        nodes carry prescribed values for that field.  The remaining
        boundary is the natural part.  A corner node on both an essential
        and a natural side counts as essential.
    """

    extents: tuple
    n: tuple
    mech_essential: tuple = ()
    elec_essential: tuple = ()
    therm_essential: tuple = ()

    def __post_init__(self):
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        if len(extents) != len(n) or len(n) not in (1, 2):
            raise ValidationError("extents and n must both have length 1 or 2")
        if any(e <= 0 for e in extents):
            raise ValidationError("extents must be positive")
        if any(k < 3 for k in n):
            raise GridTooSmall(f"need at least 3 nodes per axis, got {n}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "n", n)
        for name in ("mech_essential", "elec_essential", "therm_essential"):
            sides = getattr(self, name)
            if isinstance(sides, str):
                sides = (sides,)
            sides = tuple(sides)
            for s in sides:
                if s not in self.sides:
                    raise PartitionMismatch(
                        f"unknown side {s!r} for a {len(n)}-D grid")
            object.__setattr__(self, name, sides)

    # -- geometry -----------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.n))

    @property
    def h(self) -> tuple:
        return tuple(e / (k - 1) for e, k in zip(self.extents, self.n))

    @property
    def coords(self) -> list:
        """One 1-D coordinate array per axis."""
        return [np.linspace(0.0, e, k) for e, k in zip(self.extents, self.n)]

    @property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (dim,)``."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def sides(self) -> tuple:
        return _SIDES_1D if self.dim == 1 else _SIDES_2D

    def normal(self, side: str) -> np.ndarray:
        """Outward unit normal of a boundary side."""
        if side not in self.sides:
            raise PartitionMismatch(f"unknown side {side!r}")
        return np.asarray(_NORMALS[side][: self.dim])

    def side_mask(self, side: str) -> np.ndarray:
        """Boolean node mask of one boundary side."""
        if side not in self.sides:
            raise PartitionMismatch(f"unknown side {side!r}")
        mask = np.zeros(self.shape, dtype=bool)
        index = {"left": (0,), "right": (-1,)}.get(side)
        if index is not None:
            mask[index] = True
        elif side == "bottom":
            mask[:, 0] = True
        else:
            mask[:, -1] = True
        return mask

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for side in self.sides:
            mask |= self.side_mask(side)
        return mask

    # -- partitions -----------------------------------------------------

    def essential_sides(self, partition: str) -> tuple:
        if partition not in PARTITIONS:
            raise PartitionMismatch(f"unknown partition {partition!r}")
        return getattr(self, f"{partition}_essential")

    def natural_sides(self, partition: str) -> tuple:
        ess = self.essential_sides(partition)
        return tuple(s for s in self.sides if s not in ess)

    def essential_mask(self, partition: str) -> np.ndarray:
        """Essential-part node mask; corners resolve to essential."""
        mask = np.zeros(self.shape, dtype=bool)
        for side in self.essential_sides(partition):
            mask |= self.side_mask(side)
        return mask

    def natural_mask(self, partition: str) -> np.ndarray:
        return self.boundary_mask & ~self.essential_mask(partition)

    @property
    def boundary_partitions(self) -> dict:
        """Per partition, the (essential, natural) boundary node masks."""
        return {p: (self.essential_mask(p), self.natural_mask(p))
                for p in PARTITIONS}

    def check_partition(self, partition: str) -> bool:
        """Assert the two parts tile the boundary without overlap."""
        ess, nat = self.boundary_partitions[partition]
        union_ok = np.array_equal(ess | nat, self.boundary_mask)
        disjoint_ok = not (ess & nat).any()
        return union_ok and disjoint_ok


@dataclass(frozen=True)
class Field:
    """Node-centered nodal values on a grid.

    ``values`` has the grid shape followed by zero, one, or two component
    axes of length ``grid.dim`` (scalar, vector, second-order tensor).
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        d = self.grid.dim
        if vals.shape[:d] != self.grid.shape:
            raise ValidationError(
                f"values must start with grid shape {self.grid.shape}, "
                f"got {vals.shape}")
        comp = vals.shape[d:]
        if len(comp) > 2 or any(c != d for c in comp):
            raise ValidationError(
                f"component axes must all have length {d}, got {comp}")
        object.__setattr__(self, "values", vals)

    @property
    def rank(self) -> int:
        return self.values.ndim - self.grid.dim


def gradient(f: Field) -> Field:
    """Nodal gradient; appends the derivative index as the last axis.

    Second-order central differences in the interior, second-order
    one-sided at the boundary.
    """
    g = f.grid
    parts = [np.gradient(f.values, g.coords[ax], axis=ax, edge_order=2)
             for ax in range(g.dim)]
    return Field(g, np.stack(parts, axis=-1))


def divergence(f: Field) -> Field:
    """Nodal divergence, contracting the derivative with the first
    component axis (so a flux array ``K[..., L, a]`` yields a vector)."""
    g = f.grid
    if f.rank < 1:
        raise ValidationError("divergence needs a field of rank >= 1")
    total = np.zeros(f.values.shape[: g.dim] + f.values.shape[g.dim + 1:])
    for L in range(g.dim):
        comp = np.take(f.values, L, axis=g.dim)
        total += np.gradient(comp, g.coords[L], axis=L, edge_order=2)
    return Field(g, total)


def integrate_volume(f: Field):
    """Trapezoidal volume integral; scalar for rank 0, array otherwise."""
    vals = f.values
    for ax in reversed(range(f.grid.dim)):
        vals = np.trapezoid(vals, x=f.grid.coords[ax], axis=ax)
    return float(vals) if np.ndim(vals) == 0 else vals


def integrate_surface(f: Field, sides):
    """Trapezoidal integral over one or more named boundary sides.

    The integrand is used as given; any outward-normal factor is the
    caller's responsibility.
    """
    g = f.grid
    if isinstance(sides, str):
        sides = (sides,)
    total = 0.0
    for side in sides:
        if side not in g.sides:
            raise PartitionMismatch(f"unknown side {side!r}")
        idx = {"left": (0,), "right": (-1,)}.get(side)
        if idx is not None:
            line = f.values[idx] if g.dim == 1 else f.values[idx[0]]
            tangent_axis = 1
        else:
            line = f.values[:, 0] if side == "bottom" else f.values[:, -1]
            tangent_axis = 0
        if g.dim == 1:
            total = total + line
        else:
            total = total + np.trapezoid(line, x=g.coords[tangent_axis], axis=0)
    return float(total) if np.ndim(total) == 0 else total


_Spacetime = Callable  # (X, t) -> value


@dataclass(frozen=True)
class IncrementalAction:
    """Volume and surface inputs driving an incremental process.

    All entries are optional; a missing entry means zero.  Volume data and
    essential boundary data are callables ``(X, t) -> value`` where ``X``
    has shape ``(..., dim)`` and the result broadcasts over the leading
    axes.  Natural boundary data are mappings from a side name to such a
    callable, giving the prescribed traction vector, inflowing surface
    charge, and outgoing normal heat flux on that side.

    Attributes
    ----------
    f1 : body force per unit mass (vector).
    rhoE1 : incremental free-charge density (scalar).
    gamma1 : heat source per unit mass (scalar).
    u_essential, phi_essential, theta_essential :
        Prescribed values on each partition's essential part.
    traction, surface_charge, heat_flux :
        Side-keyed natural data for the conjugate fluxes.
    """

    f1: _Spacetime | None = None
    rhoE1: _Spacetime | None = None
    gamma1: _Spacetime | None = None
    u_essential: _Spacetime | None = None
    phi_essential: _Spacetime | None = None
    theta_essential: _Spacetime | None = None
    traction: Mapping = field(default_factory=dict)
    surface_charge: Mapping = field(default_factory=dict)
    heat_flux: Mapping = field(default_factory=dict)

    def validate_against(self, grid: Grid) -> None:
        """Check every natural datum sits on a natural side of its field."""
        for name, data, part in (("traction", self.traction, "mech"),
                                 ("surface_charge", self.surface_charge, "elec"),
                                 ("heat_flux", self.heat_flux, "therm")):
            natural = grid.natural_sides(part)
            for side in data:
                if side not in natural:
                    raise PartitionMismatch(
                        f"{name} datum on side {side!r}, but that side is "
                        f"not in the natural part of the {part} boundary")


def _eval_spacetime(fn, X, t, ncomp=None):
    out = np.asarray(fn(X, t), dtype=float)
    want = X.shape[:-1] + ((ncomp,) if ncomp else ())
    return np.broadcast_to(out, want)


def apply_boundary_conditions(state, action: IncrementalAction, t: float):
    """Return a copy of ``state`` with essential boundary values imposed.

    Prescribed displacement, potential, and temperature values are written
    onto the essential nodes of their partitions (zero when the action
    supplies no datum).  Natural data are validated here but imposed
    weakly by the solver: the prescribed fluxes enter the discrete balance
    equations as boundary work terms, without ghost nodes.
    """
    grid = state.grid
    action.validate_against(grid)
    X = grid.points
    d = grid.dim

    u = np.array(state.u, dtype=float)
    mask = grid.essential_mask("mech")
    if mask.any():
        vals = (np.zeros(grid.shape + (d,)) if action.u_essential is None
                else _eval_spacetime(action.u_essential, X, t, d))
        u[mask] = vals[mask]

    phi1 = np.array(state.phi1, dtype=float)
    mask = grid.essential_mask("elec")
    if mask.any():
        vals = (np.zeros(grid.shape) if action.phi_essential is None
                else _eval_spacetime(action.phi_essential, X, t))
        phi1[mask] = vals[mask]

    theta1 = np.array(state.theta1, dtype=float)
    mask = grid.essential_mask("therm")
    if mask.any():
        vals = (np.zeros(grid.shape) if action.theta_essential is None
                else _eval_spacetime(action.theta_essential, X, t))
        theta1[mask] = vals[mask]

    return replace(state, u=u, phi1=phi1, theta1=theta1)
