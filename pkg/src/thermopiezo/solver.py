"""Monolithic implicit integration of the incremental coupled equations.

The incremental unknowns are displacement u, velocity v, potential phi1,
and temperature theta1 on a structured grid.  The semi-discrete system is

    M v' = -A u - B phi + C theta + mechanical loads      (momentum)
    u'   = v                                              (kinematics)
    D phi - B^T u - E theta = electric loads              (charge constraint)
    Cq u' - Eq phi' + Hq theta' + Kq theta = heat loads   (entropy balance)

built from cell-wise two-point Gauss quadrature with multilinear hat
functions.  The charge constraint holds at every time level; momentum,
kinematics, and entropy are advanced with the implicit midpoint
(trapezoidal) rule in all fields.  Because the coupling blocks appear in
adjoint pairs (B with B^T, C with Cq, E with Eq), midpoint stepping gives
an exact per-step energy identity: the discrete total energy changes only
by the conduction dissipation and the injected power, which the theorem
checks in :mod:`thermopiezo.theorems` rely on.

Velocity is eliminated per step, so each step is a single sparse direct
solve for (u, phi1, theta1) at the new level; the factorization is reused
across steps.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .bias import BiasState, EffectiveConstants, effective_constants
from .errors import SolveFailure, StabilityViolation, ValidationError
from .fields import Grid, IncrementalAction, apply_boundary_conditions
from .material import MaterialModel

__all__ = [
    "IncrementalState",
    "Scenario",
    "Trajectory",
    "DiscreteOperators",
    "incremental_constitutive",
    "assemble_operators",
    "assemble_loads",
    "Stepper",
    "run_simulation",
]


# ---------------------------------------------------------------------------
# pointwise incremental constitutive response
# ---------------------------------------------------------------------------

def incremental_constitutive(ec: EffectiveConstants, grad_u, grad_phi1,
                             theta1, grad_theta1):
    """Linear incremental response at a point (or batch of points).

    Parameters
    ----------
    ec : EffectiveConstants
    grad_u : ndarray, shape (..., d, d)
        Displacement gradient with the derivative index first:
        ``grad_u[..., L, g] = u_{g,L}``.
    grad_phi1 : ndarray, shape (..., d)
    theta1 : ndarray, shape (...)
    grad_theta1 : ndarray, shape (..., d)

    Returns
    -------
    (K1, Delta1, eta1, Q1)
        Stress increment ``K1[..., M, a]`` (divergence index first),
        charge-displacement increment, entropy increment, heat-flux
        increment.
    """
    grad_u = np.asarray(grad_u, dtype=float)
    grad_phi1 = np.asarray(grad_phi1, dtype=float)
    theta1 = np.asarray(theta1, dtype=float)
    grad_theta1 = np.asarray(grad_theta1, dtype=float)
    rho0 = ec.rho0

    K1 = (np.einsum("MaLg,...Lg->...Ma", ec.G, grad_u)
          + np.einsum("LMa,...L->...Ma", ec.R, grad_phi1)
          - rho0 * np.einsum("Ma,...->...Ma", ec.Lam, theta1))
    Delta1 = (np.einsum("MNg,...Ng->...M", ec.R, grad_u)
              - np.einsum("MN,...N->...M", ec.L, grad_phi1)
              + rho0 * np.einsum("M,...->...M", ec.P, theta1))
    eta1 = (np.einsum("Mg,...Mg->...", ec.Lam, grad_u)
            - np.einsum("M,...M->...", ec.P, grad_phi1)
            + ec.alpha * theta1)
    Q1 = -(np.einsum("MNa,...Na->...M", ec.kap_u, grad_u)
           + np.einsum("MN,...N->...M", ec.kap_E, grad_phi1)
           + np.einsum("M,...->...M", ec.kap_1, theta1)
           + np.einsum("MN,...N->...M", ec.kap_2, grad_theta1))
    return K1, Delta1, eta1, Q1


# ---------------------------------------------------------------------------
# state / scenario / trajectory containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IncrementalState:
    """All incremental fields at one time level (grid-shaped arrays)."""

    grid: Grid
    t: float
    u: np.ndarray
    v: np.ndarray
    phi1: np.ndarray
    theta1: np.ndarray

    def __post_init__(self):
        d = self.grid.dim
        shp = self.grid.shape
        for name, want in (("u", shp + (d,)), ("v", shp + (d,)),
                           ("phi1", shp), ("theta1", shp)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != want:
                raise ValidationError(f"{name} must have shape {want}, "
                                      f"got {arr.shape}")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class Scenario:
    """A complete description of one incremental simulation run.

    Initial fields may be arrays of the right shape, callables ``X ->
    values`` over node coordinates, or None for zero.  The initial
    potential is always (re)solved from the charge constraint so every
    reported state satisfies it.
    """

    material: MaterialModel
    bias: BiasState
    grid: Grid
    action: IncrementalAction
    dt: float
    t_final: float
    u0: object = None
    v0: object = None
    theta1_0: object = None
    save_every: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.t_final < 0:
            raise ValidationError("dt must be > 0 and t_final >= 0")
        if self.save_every < 1:
            raise ValidationError("save_every must be >= 1")

    def num_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass(frozen=True)
class Trajectory:
    """Uniform-step sequence of incremental states with diagnostics."""

    scenario: Scenario
    states: tuple
    gauss_residuals: np.ndarray

    @property
    def dt(self) -> float:
        return self.scenario.dt

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


# ---------------------------------------------------------------------------
# quadrature tables and assembly
# ---------------------------------------------------------------------------

def _reference_tables(h):
    """Cell-local Gauss data on a uniform grid.

    Returns (offsets, weights, N, dN, rel) where offsets are the local
    corner index offsets, N[q, a] the hat values, dN[q, a, k] the physical
    gradients, and rel[q, k] the Gauss point position within the cell.
    """
    d = len(h)
    gp1 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    pts = np.array(list(itertools.product(gp1, repeat=d)))
    offsets = np.array(list(itertools.product((0, 1), repeat=d)))
    nq, nloc = len(pts), len(offsets)
    w = np.full(nq, np.prod(h) / 2.0**d)
    N = np.ones((nq, nloc))
    dN = np.zeros((nq, nloc, d))
    for q in range(nq):
        for a in range(nloc):
            vals = [0.5 * (1.0 - pts[q, k]) if offsets[a, k] == 0
                    else 0.5 * (1.0 + pts[q, k]) for k in range(d)]
            for k in range(d):
                others = np.prod([vals[m] for m in range(d) if m != k])
                sign = -1.0 if offsets[a, k] == 0 else 1.0
                dN[q, a, k] = sign / h[k] * others
            N[q, a] = np.prod(vals)
    rel = (pts + 1.0) / 2.0 * np.asarray(h)  # (nq, d) offsets within cell
    return offsets, w, N, dN, rel


def _cell_topology(grid: Grid):
    """Global node index per cell corner, plus cell origin coordinates."""
    n = grid.n
    h = grid.h
    if grid.dim == 1:
        ci = np.arange(n[0] - 1)
        loc2glob = np.stack([ci, ci + 1], axis=1)
        origins = ci[:, None] * h[0]
    else:
        ci, cj = np.meshgrid(np.arange(n[0] - 1), np.arange(n[1] - 1),
                             indexing="ij")
        ci, cj = ci.ravel(), cj.ravel()
        corners = []
        for di, dj in itertools.product((0, 1), repeat=2):
            corners.append((ci + di) * n[1] + (cj + dj))
        loc2glob = np.stack(corners, axis=1)
        origins = np.stack([ci * h[0], cj * h[1]], axis=1)
    return loc2glob, origins


def _scatter(loc, rows, cols, shape):
    """COO scatter of per-cell local matrices into a CSR global matrix."""
    nr, nc = loc.shape[1], loc.shape[2]
    r = np.repeat(rows, nc, axis=1).ravel()
    c = np.tile(cols, (1, nr)).ravel()
    return sp.coo_matrix((loc.ravel(), (r, c)), shape=shape).tocsr()


@dataclass(frozen=True)
class DiscreteOperators:
    """Assembled weak-form matrices and the dof bookkeeping.

    Matrix meanings (w: vector test, zeta/xi: scalar tests):

    - ``A``:  a_G(u, w)      = w . A u        (elastic stiffness)
    - ``B``:  b_R(phi, w)    = w . B phi      (piezoelectric coupling)
    - ``C``:  c_Lam(th, w)   = w . C th       (thermal stress coupling)
    - ``D``:  d_L(phi, zeta) = zeta . D phi   (dielectric stiffness)
    - ``E``:  e_P(th, zeta)  = zeta . E th    (pyroelectric coupling)
    - ``M``:  m(v, w)        = w . M v        (mass)
    - ``H``:  (rho0 alpha th, xi)             (heat capacity)
    - ``Kq``: (kap2 grad th, grad xi)         (conduction stiffness)
    - ``Cq, Eq, Hq``: entropy-rate blocks weighted by the bias
      temperature; for a uniform bias they equal theta0 * (C^T, E^T, H).

    Dof layout: u components node-major (node*dim + comp), then phi and
    theta one dof per node.  ``*_free`` masks select the unknowns after
    essential elimination (including the electric gauge pin).
    """

    grid: Grid
    ec0: EffectiveConstants
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    D: sp.csr_matrix
    E: sp.csr_matrix
    M: sp.csr_matrix
    H: sp.csr_matrix
    Kq: sp.csr_matrix
    Cq: sp.csr_matrix
    Eq: sp.csr_matrix
    Hq: sp.csr_matrix
    u_free: np.ndarray
    phi_free: np.ndarray
    theta_free: np.ndarray
    gauge_node: int | None

    @property
    def num_u(self) -> int:
        return self.A.shape[0]

    @property
    def num_scalar(self) -> int:
        return self.D.shape[0]


def assemble_operators(material: MaterialModel, bias: BiasState,
                       grid: Grid) -> DiscreteOperators:
    """Assemble every weak-form matrix for a material/bias/grid triple."""
    if material.dim != grid.dim:
        raise ValidationError("material and grid dimensions differ")
    d = grid.dim
    h = np.asarray(grid.h)
    nn = grid.num_nodes
    nu = nn * d

    offsets, w, N, dN, rel = _reference_tables(h)
    loc2glob, origins = _cell_topology(grid)
    ncells, nloc = loc2glob.shape
    nq = len(w)

    # Gauss-point coordinates and the bias temperature there
    Xq = origins[:, None, :] + rel[None, :, :]  # (ncells, nq, d)
    theta0_q = bias.theta_c + Xq @ bias.theta_grad  # (ncells, nq)
    if np.any(theta0_q <= 0.0):
        raise ValidationError("bias temperature is not positive on the grid")

    ec0 = effective_constants(material, bias, at=np.zeros(d))
    rho0 = material.rho0

    # spatially varying elastic array: G(X) = G0 - tau_shift(X) * lam (x) I
    tau_shift = theta0_q - bias.theta_c
    G_q = ec0.G[None, None] - np.einsum("cq,ML,xy->cqMxLy", tau_shift,
                                        material.lam_thermo, np.eye(d))

    dof_u = (loc2glob[:, :, None] * d
             + np.arange(d)[None, None, :]).reshape(ncells, nloc * d)
    dof_s = loc2glob

    def vv(loc):
        return _scatter(loc.reshape(ncells, nloc * d, nloc * d),
                        dof_u, dof_u, (nu, nu))

    def ss(loc):
        return _scatter(loc, dof_s, dof_s, (nn, nn))

    def vs(loc):
        return _scatter(loc.reshape(ncells, nloc * d, nloc),
                        dof_u, dof_s, (nu, nn))

    def sv(loc):
        return _scatter(loc.reshape(ncells, nloc, nloc * d),
                        dof_s, dof_u, (nn, nu))

    def tile(loc):
        return np.broadcast_to(loc, (ncells,) + loc.shape)

    eye_d = np.eye(d)
    A = vv(np.einsum("q,qaM,cqMxLy,qbL->caxby", w, dN, G_q, dN))
    B = vs(tile(np.einsum("q,qaM,LMx,qbL->axb", w, dN, ec0.R, dN)))
    C = vs(tile(np.einsum("q,qaM,Mx,qb->axb", w, dN, rho0 * ec0.Lam, N)))
    D = ss(tile(np.einsum("q,qaM,MN,qbN->ab", w, dN, ec0.L, dN)))
    E = ss(tile(np.einsum("q,qaM,M,qb->ab", w, dN, rho0 * ec0.P, N)))
    M = vv(tile(np.einsum("q,qa,qb,xy->axby", w, N, N, rho0 * eye_d)))
    H = ss(tile(rho0 * ec0.alpha * np.einsum("q,qa,qb->ab", w, N, N)))
    Kq = ss(tile(np.einsum("q,qaM,MN,qbN->ab", w, dN, ec0.kap_2, dN)))
    # Entropy-rate rows carry the bias temperature inside the integral.
    # For a uniform bias they are exact scalar multiples of the coupling
    # transposes, which keeps the discrete energy identity exact.
    if bias.is_uniform:
        Cq = (bias.theta_c * C.T).tocsr()
        Eq = (bias.theta_c * E.T).tocsr()
        Hq = (bias.theta_c * H).tocsr()
    else:
        Cq = sv(np.einsum("q,cq,qa,Mx,qbM->cabx", w, theta0_q, N,
                          rho0 * ec0.Lam, dN))
        Eq = ss(np.einsum("q,cq,qa,M,qbM->cab", w, theta0_q, N,
                          rho0 * ec0.P, dN))
        Hq = ss(rho0 * ec0.alpha
                * np.einsum("q,cq,qa,qb->cab", w, theta0_q, N, N))

    # essential dof masks (free = not eliminated)
    mech_ess = grid.essential_mask("mech").ravel()
    u_free = ~np.repeat(mech_ess, d)
    elec_ess = grid.essential_mask("elec").ravel()
    gauge_node = None
    if not elec_ess.any():
        gauge_node = 0
        elec_ess = elec_ess.copy()
        elec_ess[gauge_node] = True
    phi_free = ~elec_ess
    theta_free = ~grid.essential_mask("therm").ravel()

    return DiscreteOperators(grid=grid, ec0=ec0, A=A, B=B, C=C, D=D, E=E,
                             M=M, H=H, Kq=Kq, Cq=Cq, Eq=Eq, Hq=Hq,
                             u_free=u_free, phi_free=phi_free,
                             theta_free=theta_free, gauge_node=gauge_node)


def _edge_quadrature(grid: Grid, side: str):
    """Boundary quadrature data for one side.

    Returns (node_idx, weights, N, Xq): per boundary edge the global node
    indices (nedges, nloc), Gauss weights (nq,), shape values (nq, nloc),
    and Gauss point coordinates (nedges, nq, d).  In 1-D the "edge" is the
    single boundary node with unit weight.
    """
    if grid.dim == 1:
        node = 0 if side == "left" else grid.n[0] - 1
        x = np.array([[[grid.coords[0][node]]]])
        return (np.array([[node]]), np.array([1.0]), np.array([[1.0]]), x)
    n1, n2 = grid.n
    h = grid.h
    if side in ("left", "right"):
        i = 0 if side == "left" else n1 - 1
        line = i * n2 + np.arange(n2)
        t_axis, fixed = 1, grid.coords[0][i]
    else:
        j = 0 if side == "bottom" else n2 - 1
        line = np.arange(n1) * n2 + j
        t_axis, fixed = 0, grid.coords[1][j]
    nodes = np.stack([line[:-1], line[1:]], axis=1)
    ht = h[t_axis]
    gp1 = (np.array([-1.0, 1.0]) / np.sqrt(3.0) + 1.0) / 2.0 * ht
    w = np.full(2, ht / 2.0)
    N = np.stack([1.0 - gp1 / ht, gp1 / ht], axis=1)  # (nq, 2)
    t0 = grid.coords[t_axis][:-1]
    tq = t0[:, None] + gp1[None, :]  # (nedges, nq)
    Xq = np.empty(tq.shape + (2,))
    Xq[..., t_axis] = tq
    Xq[..., 1 - t_axis] = fixed
    return nodes, w, N, Xq


def assemble_loads(material: MaterialModel, grid: Grid,
                   action: IncrementalAction, t: float):
    """Weak-form load vectors (mechanical, electric, thermal) at time t.

    Mechanical: volume body force (per mass, weighted by rho0) plus
    prescribed traction on natural sides.  Electric: free charge plus
    inflowing surface charge.  Thermal: volume heat source (per mass,
    weighted by rho0) minus outgoing normal heat flux.
    """
    d = grid.dim
    nn = grid.num_nodes
    lu = np.zeros(nn * d)
    lphi = np.zeros(nn)
    ltheta = np.zeros(nn)

    offsets, w, N, dN, rel = _reference_tables(np.asarray(grid.h))
    loc2glob, origins = _cell_topology(grid)
    ncells, nloc = loc2glob.shape
    Xq = origins[:, None, :] + rel[None, :, :]

    if action.f1 is not None:
        fq = np.broadcast_to(np.asarray(action.f1(Xq, t), dtype=float),
                             (ncells, len(w), d))
        loc = np.einsum("q,cqx,qa->cax", w, material.rho0 * fq, N)
        np.add.at(lu, (loc2glob[:, :, None] * d
                       + np.arange(d)).reshape(ncells, -1), loc.reshape(ncells, -1))
    if action.rhoE1 is not None:
        rq = np.broadcast_to(np.asarray(action.rhoE1(Xq, t), dtype=float),
                             (ncells, len(w)))
        np.add.at(lphi, loc2glob, np.einsum("q,cq,qa->ca", w, rq, N))
    if action.gamma1 is not None:
        gq = np.broadcast_to(np.asarray(action.gamma1(Xq, t), dtype=float),
                             (ncells, len(w)))
        np.add.at(ltheta, loc2glob,
                  np.einsum("q,cq,qa->ca", w, material.rho0 * gq, N))

    for side, fn in action.traction.items():
        nodes, we, Ne, Xe = _edge_quadrature(grid, side)
        tq = np.broadcast_to(np.asarray(fn(Xe, t), dtype=float),
                             Xe.shape[:-1] + (d,))
        loc = np.einsum("q,eqx,qa->eax", we, tq, Ne)
        np.add.at(lu, (nodes[:, :, None] * d
                       + np.arange(d)).reshape(len(nodes), -1),
                  loc.reshape(len(nodes), -1))
    for side, fn in action.surface_charge.items():
        nodes, we, Ne, Xe = _edge_quadrature(grid, side)
        sq = np.broadcast_to(np.asarray(fn(Xe, t), dtype=float), Xe.shape[:-1])
        np.add.at(lphi, nodes, np.einsum("q,eq,qa->ea", we, sq, Ne))
    for side, fn in action.heat_flux.items():
        nodes, we, Ne, Xe = _edge_quadrature(grid, side)
        qq = np.broadcast_to(np.asarray(fn(Xe, t), dtype=float), Xe.shape[:-1])
        np.add.at(ltheta, nodes, -np.einsum("q,eq,qa->ea", we, qq, Ne))

    return lu, lphi, ltheta


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _as_nodal(values, grid: Grid, ncomp: int):
    shape = grid.shape + ((ncomp,) if ncomp else ())
    if values is None:
        return np.zeros(shape)
    if callable(values):
        out = np.asarray(values(grid.points), dtype=float)
        return np.broadcast_to(out, shape).copy()
    out = np.asarray(values, dtype=float)
    if out.shape != shape:
        raise ValidationError(f"initial field must have shape {shape}")
    return out.copy()


class Stepper:
    """One-step advancer for a fixed (material, bias, grid, dt).

    Builds the discrete operators, checks the accuracy time-step bound
    against the fastest elastic wave speed (warning only — the scheme is
    implicit), and factorizes the step matrix once.
    """

    def __init__(self, material: MaterialModel, bias: BiasState, grid: Grid,
                 dt: float):
        self.material = material
        self.bias = bias
        self.grid = grid
        self.dt = float(dt)
        self.ops = assemble_operators(material, bias, grid)
        d = grid.dim

        Gmat = self.ops.ec0.G.reshape(d * d, d * d)
        lam_max = max(float(np.linalg.eigvalsh(0.5 * (Gmat + Gmat.T)).max()),
                      0.0)
        self.c_max = np.sqrt(lam_max / material.rho0)
        if self.c_max > 0.0 and self.dt > min(grid.h) / self.c_max:
            warnings.warn(
                f"dt = {self.dt:g} exceeds the accuracy bound h/c_max = "
                f"{min(grid.h) / self.c_max:g}; results remain stable but "
                "may be inaccurate", StabilityViolation, stacklevel=2)

        self._build_system()

    def _build_system(self):
        ops, dt = self.ops, self.dt
        S = sp.bmat([
            [2.0 / dt**2 * ops.M + 0.5 * ops.A, 0.5 * ops.B, -0.5 * ops.C],
            [-ops.B.T, ops.D, -ops.E],
            [ops.Cq / dt, -ops.Eq / dt, ops.Hq / dt + 0.5 * ops.Kq],
        ], format="csr")
        self._S = S
        free = np.concatenate([ops.u_free, ops.phi_free, ops.theta_free])
        self._free = free
        Scc = S.tocsc()
        self._S_ff = Scc[free][:, free].tocsc()
        self._S_fe = Scc[free][:, ~free].tocsc()
        try:
            self._lu = splu(self._S_ff)
        except RuntimeError as exc:
            raise SolveFailure(f"step matrix factorization failed: {exc}")
        # separate factorization of the charge constraint for consistent
        # initialization
        Dcc = ops.D.tocsc()
        self._D_ff = Dcc[ops.phi_free][:, ops.phi_free].tocsc()
        self._D_fe = Dcc[ops.phi_free][:, ~ops.phi_free].tocsc()
        try:
            self._lu_D = splu(self._D_ff)
        except RuntimeError as exc:
            raise SolveFailure(f"charge-constraint factorization failed: {exc}")

    # -- helpers ---------------------------------------------------------

    def _essential_values(self, action: IncrementalAction, t: float):
        """Essential nodal values at time t, as flat dof vectors."""
        g = self.grid
        d = g.dim
        zero = IncrementalState(grid=g, t=t, u=np.zeros(g.shape + (d,)),
                                v=np.zeros(g.shape + (d,)),
                                phi1=np.zeros(g.shape),
                                theta1=np.zeros(g.shape))
        s = apply_boundary_conditions(zero, action, t)
        return s.u.reshape(-1), s.phi1.reshape(-1), s.theta1.reshape(-1)

    def solve_potential(self, action: IncrementalAction, u_flat, theta_flat,
                        t: float) -> np.ndarray:
        """Solve the charge constraint for phi1 given u and theta1."""
        ops = self.ops
        _, lphi, _ = assemble_loads(self.material, self.grid, action, t)
        _, phi_e, _ = self._essential_values(action, t)
        rhs = lphi + ops.B.T @ u_flat + ops.E @ theta_flat
        phi = phi_e.copy()
        free = ops.phi_free
        b = rhs[free] - self._D_fe @ phi_e[~free]
        phi[free] = self._lu_D.solve(b)
        if not np.all(np.isfinite(phi)):
            raise SolveFailure("charge-constraint solve produced non-finite "
                               "values")
        return phi

    def gauss_residual(self, action: IncrementalAction, u_flat, phi_flat,
                       theta_flat, t: float) -> float:
        """Norm of the discrete charge-constraint residual (free dofs)."""
        ops = self.ops
        _, lphi, _ = assemble_loads(self.material, self.grid, action, t)
        r = ops.D @ phi_flat - ops.B.T @ u_flat - ops.E @ theta_flat - lphi
        return float(np.linalg.norm(r[ops.phi_free]))

    # -- the step --------------------------------------------------------

    def step(self, state: IncrementalState, action: IncrementalAction,
             dt: float | None = None) -> IncrementalState:
        """Advance one implicit midpoint step; returns the new state."""
        if dt is not None and not np.isclose(dt, self.dt):
            self.dt = float(dt)
            self._build_system()
        ops, dt = self.ops, self.dt
        g = self.grid
        d = g.dim
        nu = ops.num_u
        nn = ops.num_scalar

        u = state.u.reshape(-1)
        v = state.v.reshape(-1)
        phi = state.phi1.reshape(-1)
        th = state.theta1.reshape(-1)
        t_mid = state.t + dt / 2.0
        t_new = state.t + dt

        lu_mid, _, lth_mid = assemble_loads(self.material, g, action, t_mid)
        _, lphi_new, _ = assemble_loads(self.material, g, action, t_new)

        r_u = (lu_mid + 2.0 / dt**2 * (ops.M @ (u + dt * v))
               - 0.5 * (ops.A @ u) - 0.5 * (ops.B @ phi) + 0.5 * (ops.C @ th))
        r_phi = lphi_new
        r_th = (lth_mid + (ops.Cq @ u - ops.Eq @ phi + ops.Hq @ th) / dt
                - 0.5 * (ops.Kq @ th))
        rhs = np.concatenate([r_u, r_phi, r_th])

        u_e, phi_e, th_e = self._essential_values(action, t_new)
        x_ess = np.concatenate([u_e, phi_e, th_e])
        free = self._free

        x = x_ess.copy()
        b = rhs[free] - self._S_fe @ x_ess[~free]
        x[free] = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SolveFailure("time step produced non-finite values")

        u_new = x[:nu]
        phi_new = x[nu:nu + nn]
        th_new = x[nu + nn:]
        v_new = 2.0 * (u_new - u) / dt - v

        return IncrementalState(
            grid=g, t=t_new,
            u=u_new.reshape(g.shape + (d,)),
            v=v_new.reshape(g.shape + (d,)),
            phi1=phi_new.reshape(g.shape),
            theta1=th_new.reshape(g.shape),
        )


def run_simulation(scenario: Scenario) -> Trajectory:
    """Integrate a scenario from homogeneous start time to t_final.

    The initial potential is solved from the charge constraint (with the
    essential electric data at t = 0), so the constraint residual is at
    solver precision from the first state on.  Deterministic: identical
    scenarios produce bitwise identical trajectories.
    """
    g = scenario.grid
    d = g.dim
    scenario.action.validate_against(g)
    stepper = Stepper(scenario.material, scenario.bias, g, scenario.dt)

    u0 = _as_nodal(scenario.u0, g, d)
    v0 = _as_nodal(scenario.v0, g, d)
    th0 = _as_nodal(scenario.theta1_0, g, 0)
    state = IncrementalState(grid=g, t=0.0, u=u0, v=v0,
                             phi1=np.zeros(g.shape), theta1=th0)
    state = apply_boundary_conditions(state, scenario.action, 0.0)
    phi0 = stepper.solve_potential(scenario.action, state.u.reshape(-1),
                                   state.theta1.reshape(-1), 0.0)
    state = replace(state, phi1=phi0.reshape(g.shape))

    states = [state]
    residuals = [stepper.gauss_residual(
        scenario.action, state.u.reshape(-1), state.phi1.reshape(-1),
        state.theta1.reshape(-1), 0.0)]
    nsteps = scenario.num_steps()
    for k in range(nsteps):
        state = stepper.step(state, scenario.action)
        if (k + 1) % scenario.save_every == 0 or k + 1 == nsteps:
            states.append(state)
            residuals.append(stepper.gauss_residual(
                scenario.action, state.u.reshape(-1),
                state.phi1.reshape(-1), state.theta1.reshape(-1), state.t))
    return Trajectory(scenario=scenario, states=tuple(states),
                      gauss_residuals=np.array(residuals))
