"""Nonlinear material model: free energy, its partial derivatives, the
finite-deformation constitutive response, and the heat-flux law.

The free energy per unit mass is the polynomial

    rho0 * psi = 1/2 c2[K,L,M,N] E[K,L] E[M,N]
               + 1/6 c3[K,L,M,N,P,Q] E[K,L] E[M,N] E[P,Q]
               - e_piezo[M,K,L] W[M] E[K,L]
               - 1/2 chi_diel[M,N] W[M] W[N]
               - lam_thermo[K,L] E[K,L] * tau
               - rho0 * p_pyro[M] W[M] * tau
               - rho0 * a_heat / (2 theta_ref) * tau**2,

with ``tau = theta - theta_ref``, evaluated at a local state (E, W, theta).
All derivative formulas below are the closed-form partials of this
polynomial; an independent finite-difference oracle cross-checks them in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveTemperature, SingularDeformation, ValidationError

__all__ = [
    "MaterialModel",
    "LocalThermoState",
    "PsiDerivatives",
    "isotropic_stiffness",
    "free_energy",
    "psi_derivatives",
    "nonlinear_constitutive",
    "heat_flux",
]


def isotropic_stiffness(lam: float, mu: float, dim: int) -> np.ndarray:
    """Isotropic fourth-order stiffness c[K,L,M,N] from Lame constants.

    Parameters
    ----------
    lam, mu : float
        Lame parameters (stress units).
    dim : int
        Spatial dimension, 1 or 2.

    Returns
    -------
    ndarray, shape (dim, dim, dim, dim)
        ``lam * delta_KL delta_MN + mu * (delta_KM delta_LN + delta_KN delta_LM)``.
    """
    I = np.eye(dim)
    return (
        lam * np.einsum("KL,MN->KLMN", I, I)
        + mu * np.einsum("KM,LN->KLMN", I, I)
        + mu * np.einsum("KN,LM->KLMN", I, I)
    )


def _symmetric(a: np.ndarray, *perms: tuple[int, ...]) -> bool:
    """True if ``a`` equals its transpose under every index permutation."""
    tol = 1e-12 * (1.0 + abs(a).max())
    return all(
        np.allclose(a, np.transpose(a, p), rtol=0.0, atol=tol) for p in perms
    )


def _pair_symmetric(c: np.ndarray) -> bool:
    """Minor and major symmetries of a fourth-order stiffness array."""
    return _symmetric(c, (1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1))


@dataclass(frozen=True)
class MaterialModel:
    """Coefficients of the free-energy polynomial and the conductivity law.

    Parameters
    ----------
    rho0 : float
        Reference mass density, > 0.
    theta_ref : float
        Reference absolute temperature, > 0.
    c2 : ndarray, shape (d, d, d, d)
        Second-order elastic coefficients with full minor/major symmetry.
    c3 : ndarray, shape (d,)*6, optional
        Third-order elastic coefficients (fully symmetric in its three
        index pairs); zero if omitted.
    e_piezo : ndarray, shape (d, d, d), optional
        Piezoelectric coefficients e[M,K,L], symmetric in (K, L).
    chi_diel : ndarray, shape (d, d), optional
        Dielectric susceptibility, symmetric.
    lam_thermo : ndarray, shape (d, d), optional
        Thermoelastic coupling, symmetric.
    p_pyro : ndarray, shape (d,), optional
        Pyroelectric coupling.
    a_heat : float
        Specific-heat coefficient, > 0.
    kappa_cond : ndarray, shape (d, d)
        Heat conductivity, symmetric positive definite.
    eps0 : float
        Vacuum permittivity in the working unit system (default 1.0).
    """

    rho0: float
    theta_ref: float
    c2: np.ndarray
    kappa_cond: np.ndarray
    a_heat: float = 1.0
    c3: np.ndarray | None = None
    e_piezo: np.ndarray | None = None
    chi_diel: np.ndarray | None = None
    lam_thermo: np.ndarray | None = None
    p_pyro: np.ndarray | None = None
    eps0: float = 1.0

    def __post_init__(self):
        c2 = np.asarray(self.c2, dtype=float)
        if c2.ndim != 4 or len(set(c2.shape)) != 1:
            raise ValidationError("c2 must be a fourth-order array with equal axes")
        d = c2.shape[0]
        if d not in (1, 2):
            raise ValidationError(f"spatial dimension must be 1 or 2, got {d}")
        object.__setattr__(self, "c2", c2)

        def _opt(name, shape):
            val = getattr(self, name)
            arr = np.zeros(shape) if val is None else np.asarray(val, dtype=float)
            if arr.shape != shape:
                raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
            return arr

        c3 = _opt("c3", (d,) * 6)
        e = _opt("e_piezo", (d, d, d))
        chi = _opt("chi_diel", (d, d))
        lam = _opt("lam_thermo", (d, d))
        _opt("p_pyro", (d,))
        kap = np.asarray(self.kappa_cond, dtype=float)
        if kap.shape != (d, d):
            raise ValidationError(f"kappa_cond must have shape {(d, d)}")
        object.__setattr__(self, "kappa_cond", kap)

        if self.rho0 <= 0.0:
            raise ValidationError("rho0 must be positive")
        if self.theta_ref <= 0.0:
            raise NonPositiveTemperature("theta_ref must be positive")
        if self.a_heat <= 0.0:
            raise ValidationError("a_heat must be positive")

        if not _pair_symmetric(c2):
            raise ValidationError("c2 must have full minor and major symmetries")
        if not _symmetric(e, (0, 2, 1)):
            raise ValidationError("e_piezo must be symmetric in its strain pair")
        if not _symmetric(chi, (1, 0)):
            raise ValidationError("chi_diel must be symmetric")
        if not _symmetric(lam, (1, 0)):
            raise ValidationError("lam_thermo must be symmetric")
        if not _symmetric(kap, (1, 0)):
            raise ValidationError("kappa_cond must be symmetric")
        if np.linalg.eigvalsh(kap).min() <= 0.0:
            raise ValidationError("kappa_cond must be positive definite")
        # c3 must be symmetric within and under permutations of its pairs so
        # that repeated strain contractions commute with differentiation.
        if not _symmetric(c3, (1, 0, 2, 3, 4, 5), (0, 1, 3, 2, 4, 5),
                          (2, 3, 0, 1, 4, 5), (4, 5, 2, 3, 0, 1)):
            raise ValidationError("c3 must be fully pair-symmetric")

    @property
    def dim(self) -> int:
        return self.c2.shape[0]


@dataclass(frozen=True)
class LocalThermoState:
    """Pointwise thermodynamic state (E, W, theta) with temperature gradient.

    Parameters
    ----------
    E : ndarray, shape (d, d)
        Symmetric finite strain.
    W : ndarray, shape (d,)
        Referential electric potential gradient (negated), W = -grad phi.
    theta : float
        Absolute temperature, > 0.
    Theta : ndarray, shape (d,), optional
        Referential temperature gradient (zero if omitted).
    """

    E: np.ndarray
    W: np.ndarray
    theta: float
    Theta: np.ndarray | None = None

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        W = np.asarray(self.W, dtype=float)
        d = W.shape[0]
        if E.shape != (d, d):
            raise ValidationError(f"E must have shape {(d, d)}, got {E.shape}")
        if not np.allclose(E, E.T, rtol=0.0, atol=1e-12 * (1.0 + abs(E).max())):
            raise ValidationError("E must be symmetric")
        if self.theta <= 0.0:
            raise NonPositiveTemperature(f"theta = {self.theta} must be positive")
        Theta = np.zeros(d) if self.Theta is None else np.asarray(self.Theta, dtype=float)
        if Theta.shape != (d,):
            raise ValidationError(f"Theta must have shape {(d,)}")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Theta", Theta)

    @property
    def dim(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class PsiDerivatives:
    """First and second partials of psi (per unit mass) at a local state.

    ``dE[K,L]`` is d psi / d E[K,L] reported as a symmetric array;
    ``dWdE[M,K,L]`` is d^2 psi / (d W[M] d E[K,L]), and so on.  Mixed
    partials are order-independent, and ``dEdE`` carries the
    (K,L) <-> (M,N) pair-exchange symmetry of the polynomial.
    """

    dE: np.ndarray
    dW: np.ndarray
    dtheta: float
    dEdE: np.ndarray
    dWdE: np.ndarray
    dEdtheta: np.ndarray
    dWdW: np.ndarray
    dWdtheta: np.ndarray
    dthetadtheta: float


def free_energy(m: MaterialModel, s: LocalThermoState) -> float:
    """Free energy psi per unit mass at the local state ``s``.

    Returns
    -------
    float
        ``psi(E, W, theta)``; zero at the natural state
        (E = 0, W = 0, theta = theta_ref).
    """
    E, W = s.E, s.W
    tau = s.theta - m.theta_ref
    rho_psi = 0.5 * np.einsum("KLMN,KL,MN->", m.c2, E, E)
    rho_psi += np.einsum("KLMNPQ,KL,MN,PQ->", m.c3, E, E, E) / 6.0
    rho_psi -= np.einsum("MKL,M,KL->", m.e_piezo, W, E)
    rho_psi -= 0.5 * np.einsum("MN,M,N->", m.chi_diel, W, W)
    rho_psi -= np.einsum("KL,KL->", m.lam_thermo, E) * tau
    rho_psi -= m.rho0 * np.dot(m.p_pyro, W) * tau
    rho_psi -= m.rho0 * m.a_heat / (2.0 * m.theta_ref) * tau * tau
    return rho_psi / m.rho0


def psi_derivatives(m: MaterialModel, s: LocalThermoState) -> PsiDerivatives:
    """Closed-form first and second partials of :func:`free_energy`."""
    E, W = s.E, s.W
    tau = s.theta - m.theta_ref
    r = m.rho0
    c3E = np.einsum("KLMNPQ,PQ->KLMN", m.c3, E)
    dE = (
        np.einsum("KLMN,MN->KL", m.c2, E)
        + 0.5 * np.einsum("KLMN,MN->KL", c3E, E)
        - np.einsum("MKL,M->KL", m.e_piezo, W)
        - m.lam_thermo * tau
    ) / r
    dW = (-np.einsum("MKL,KL->M", m.e_piezo, E) - m.chi_diel @ W) / r - m.p_pyro * tau
    dtheta = -np.einsum("KL,KL->", m.lam_thermo, E) / r - np.dot(m.p_pyro, W) \
        - m.a_heat / m.theta_ref * tau
    return PsiDerivatives(
        dE=dE,
        dW=dW,
        dtheta=float(dtheta),
        dEdE=(m.c2 + c3E) / r,
        dWdE=-m.e_piezo / r,
        dEdtheta=-m.lam_thermo / r,
        dWdW=-m.chi_diel / r,
        dWdtheta=-m.p_pyro,
        dthetadtheta=-m.a_heat / m.theta_ref,
    )


def nonlinear_constitutive(
    m: MaterialModel, F: np.ndarray, W: np.ndarray, theta: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Stress, electric displacement, and entropy at finite deformation.

    Parameters
    ----------
    F : ndarray, shape (d, d)
        Deformation gradient ``F[i, A] = dy_i / dX_A`` with positive
        determinant.
    W : ndarray, shape (d,)
        Referential potential gradient (negated).
    theta : float
        Absolute temperature.

    Returns
    -------
    K : ndarray, shape (d, d)
        First Piola-Kirchhoff stress ``K[L, i]``, including the vacuum
        field contribution built from the spatial field
        ``e = F^{-T} W``.
    Delta : ndarray, shape (d, d)
        Referential electric displacement ``Delta[L]``.
    eta : float
        Entropy per unit mass.

    Raises
    ------
    SingularDeformation
        If ``det F <= 0``.
    """
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    J = np.linalg.det(F)
    if J <= 0.0:
        raise SingularDeformation(f"det F = {J} must be positive")
    E = 0.5 * (F.T @ F - np.eye(m.dim))
    s = LocalThermoState(E=E, W=W, theta=theta)
    d = psi_derivatives(m, s)
    Xinv = np.linalg.inv(F)  # Xinv[L, j] = dX_L / dy_j
    e_sp = W @ Xinv  # spatial field e_j = W_L Xinv[L, j]
    Xe = Xinv @ e_sp
    ee = float(np.dot(e_sp, e_sp))
    K = m.rho0 * np.einsum("iA,AL->Li", F, d.dE)
    K += m.eps0 * J * (np.outer(Xe, e_sp) - 0.5 * ee * Xinv)
    Delta = m.eps0 * J * Xe - m.rho0 * d.dW
    eta = -d.dtheta
    return K, Delta, eta


def heat_flux(m: MaterialModel, s: LocalThermoState) -> np.ndarray:
    """Referential heat flux ``Q = -kappa_cond @ Theta``.

    Satisfies ``Q . Theta <= 0`` for every admissible state because
    ``kappa_cond`` is symmetric positive definite, and ``Q = 0`` when
    ``Theta = 0``.
    """
    return -m.kappa_cond @ s.Theta
