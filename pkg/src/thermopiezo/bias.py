"""Static bias states and the effective incremental constants they induce.

A bias state is a finitely deformed, polarized, heated configuration held
static: constant deformation gradient ``F0``, constant potential gradient
``W0``, and a bias temperature that is either uniform or affine in the
reference coordinates.  Linearizing the nonlinear response about such a
state yields effective tangent arrays (elastic, piezoelectric,
thermoelastic, dielectric, pyroelectric, heat) that drive the incremental
equations; the purely electrostatic (vacuum-field) contributions appear as
separate correction arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NonPositiveTemperature,
    NotPositiveDefinite,
    SingularDeformation,
    ValidationError,
)
from .material import (
    LocalThermoState,
    MaterialModel,
    free_energy,
    nonlinear_constitutive,
    psi_derivatives,
)

__all__ = [
    "BiasState",
    "EffectiveConstants",
    "SymmetryReport",
    "build_bias_state",
    "effective_constants",
    "check_symmetries",
    "ignaczak_condition",
]


@dataclass(frozen=True)
class BiasState:
    """A static finitely-biased configuration with its derived fields.

    Parameters
    ----------
    material : MaterialModel
        The material the body is made of.
    F0 : ndarray, shape (d, d)
        Constant bias deformation gradient, det > 0.
    W0 : ndarray, shape (d,)
        Constant bias potential gradient (negative potential slope).
    theta_c : float
        Bias temperature at the reference origin, > 0.
    theta_grad : ndarray, shape (d,)
        Constant reference gradient of the bias temperature; zero for a
        uniform bias temperature.

    Attributes
    ----------
    kind : str
        ``"homogeneous"`` when every bias field is constant,
        ``"affine-per-field"`` when the temperature varies affinely.
    J0, X0inv, E0 : derived kinematics (determinant, inverse deformation
        gradient with layout ``X0inv[L, i]``, finite strain).
    psi0, K0, Delta0, eta0, Q0 : free energy, stress, charge displacement,
        entropy, and heat flux evaluated at the origin.
    momentum_residual, electric_residual, thermal_residual :
        Static equilibrium residuals under zero bias body action.  They
        vanish for a uniform bias temperature; an affine temperature
        leaves constant imbalances that are reported, not enforced.
    """

    material: MaterialModel
    F0: np.ndarray
    W0: np.ndarray
    theta_c: float
    theta_grad: np.ndarray
    kind: str = field(init=False)
    J0: float = field(init=False)
    X0inv: np.ndarray = field(init=False)
    E0: np.ndarray = field(init=False)
    psi0: float = field(init=False)
    K0: np.ndarray = field(init=False)
    Delta0: np.ndarray = field(init=False)
    eta0: float = field(init=False)
    Q0: np.ndarray = field(init=False)
    momentum_residual: np.ndarray = field(init=False)
    electric_residual: float = field(init=False)
    thermal_residual: float = field(init=False)

    def __post_init__(self):
        m = self.material
        d = m.dim
        F0 = np.asarray(self.F0, dtype=float)
        W0 = np.asarray(self.W0, dtype=float)
        grad = np.asarray(self.theta_grad, dtype=float)
        if F0.shape != (d, d):
            raise ValidationError(f"F0 must have shape {(d, d)}, got {F0.shape}")
        if W0.shape != (d,):
            raise ValidationError(f"W0 must have shape {(d,)}, got {W0.shape}")
        if grad.shape != (d,):
            raise ValidationError(f"theta_grad must have shape {(d,)}")
        J0 = float(np.linalg.det(F0))
        if J0 <= 0.0:
            raise SingularDeformation(f"det F0 = {J0:g} must be positive")
        if self.theta_c <= 0.0:
            raise NonPositiveTemperature("bias temperature must be positive")
        object.__setattr__(self, "F0", F0)
        object.__setattr__(self, "W0", W0)
        object.__setattr__(self, "theta_c", float(self.theta_c))
        object.__setattr__(self, "theta_grad", grad)
        object.__setattr__(self, "kind",
                           "homogeneous" if not grad.any() else "affine-per-field")
        object.__setattr__(self, "J0", J0)
        object.__setattr__(self, "X0inv", np.linalg.inv(F0))
        object.__setattr__(self, "E0", 0.5 * (F0.T @ F0 - np.eye(d)))

        state = LocalThermoState(E=self.E0, W=W0, theta=self.theta_c, Theta=grad)
        K0, Delta0, eta0 = nonlinear_constitutive(m, F0, W0, self.theta_c)
        object.__setattr__(self, "psi0", free_energy(m, state))
        object.__setattr__(self, "K0", K0)
        object.__setattr__(self, "Delta0", Delta0)
        object.__setattr__(self, "eta0", eta0)
        object.__setattr__(self, "Q0", -m.kappa_cond @ grad)

        # With constant F0 and W0 only the affine temperature contributes
        # spatial variation, through the linear tau couplings, so the
        # divergences of stress and charge displacement are constant.
        object.__setattr__(self, "momentum_residual",
                           -np.einsum("aA,AL,L->a", F0, m.lam_thermo, grad))
        object.__setattr__(self, "electric_residual",
                           float(m.rho0 * m.p_pyro @ grad))
        # Constant heat flux is divergence free and the state is static.
        object.__setattr__(self, "thermal_residual", 0.0)

    @property
    def is_uniform(self) -> bool:
        """True when the bias temperature (hence every field) is uniform."""
        return not self.theta_grad.any()

    def theta0_at(self, X) -> float:
        """Bias temperature at reference position X."""
        return float(self.theta_c + self.theta_grad @ np.asarray(X, dtype=float))

    def local_state(self, at=None) -> LocalThermoState:
        """The pointwise material state at reference position ``at``."""
        theta = self.theta_c if at is None else self.theta0_at(at)
        return LocalThermoState(E=self.E0, W=self.W0, theta=theta,
                                Theta=self.theta_grad)


def build_bias_state(material: MaterialModel, F0=None, W0=None,
                     theta0=None) -> BiasState:
    """Construct a validated bias state from plain inputs.

    Parameters
    ----------
    material : MaterialModel
    F0 : array_like, optional
        Bias deformation gradient; identity if omitted.
    W0 : array_like, optional
        Bias potential gradient; zero if omitted.
    theta0 : float or (float, array_like), optional
        Uniform bias temperature, or a pair ``(center, gradient)`` for an
        affine temperature field; ``material.theta_ref`` if omitted.

    Returns
    -------
    BiasState
    """
    d = material.dim
    F0 = np.eye(d) if F0 is None else np.asarray(F0, dtype=float)
    W0 = np.zeros(d) if W0 is None else np.asarray(W0, dtype=float)
    if theta0 is None:
        theta_c, grad = material.theta_ref, np.zeros(d)
    elif np.isscalar(theta0):
        theta_c, grad = float(theta0), np.zeros(d)
    else:
        center, gradient = theta0
        theta_c, grad = float(center), np.asarray(gradient, dtype=float)
    return BiasState(material=material, F0=F0, W0=W0,
                     theta_c=theta_c, theta_grad=grad)


@dataclass(frozen=True)
class EffectiveConstants:
    """Tangent arrays of the incremental constitutive response at a point.

    Index layout (d = spatial dimension):

    - ``G[M, a, L, g]``: effective elastic array; the increment of the
      stress component ``(M, a)`` per displacement gradient ``u_{g,L}``.
      Pair-exchange symmetric: ``G[M, a, L, g] == G[L, g, M, a]``.
    - ``R[A, B, g]``: effective piezoelectric array; enters the stress
      increment as ``R[L, M, a] phi_{,L}`` and the charge-displacement
      increment as ``R[M, N, g] u_{g,N}``.
    - ``Lam[M, g]``: effective thermoelastic array.
    - ``L[M, N]``: effective dielectric array, symmetric.
    - ``P[M]``: effective pyroelectric vector.
    - ``alpha``: effective specific-heat scalar.
    - ``kap_u[M, N, a]``, ``kap_E[M, N]``, ``kap_1[M]``, ``kap_2[M, N]``:
      heat-flux tangents with respect to displacement gradient, potential
      gradient, temperature, and temperature gradient.  For the linear
      conduction law with constant conductivity only ``kap_2`` survives.
    - ``g_corr, r_corr, l_corr``: purely electrostatic (vacuum-field)
      corrections already included in G, R, L.
    - ``rho0``: reference mass density, carried along because the stress,
      charge, and entropy increments scale their temperature couplings
      by it.
    """

    G: np.ndarray
    R: np.ndarray
    Lam: np.ndarray
    L: np.ndarray
    P: np.ndarray
    alpha: float
    kap_u: np.ndarray
    kap_E: np.ndarray
    kap_1: np.ndarray
    kap_2: np.ndarray
    g_corr: np.ndarray
    r_corr: np.ndarray
    l_corr: np.ndarray
    rho0: float = 1.0

    @property
    def dim(self) -> int:
        return self.L.shape[0]


def effective_constants(m: MaterialModel, b: BiasState,
                        at=None) -> EffectiveConstants:
    """Assemble the incremental tangent arrays about a bias state.

    Parameters
    ----------
    m : MaterialModel
    b : BiasState
    at : array_like, optional
        Reference position; relevant only for an affine bias temperature,
        which makes the elastic array spatially varying through the
        thermal-stress contribution.  Defaults to the origin.

    Returns
    -------
    EffectiveConstants
    """
    d = m.dim
    ders = psi_derivatives(m, b.local_state(at))
    F0, Xinv, J0, rho0 = b.F0, b.X0inv, b.J0, m.rho0

    # vacuum-field geometry: spatial bias field and inverse-gradient
    # contractions
    e_hat = b.W0 @ Xinv
    XE = Xinv @ e_hat
    XX = Xinv @ Xinv.T
    ee = float(e_hat @ e_hat)

    l_corr = m.eps0 * J0 * XX
    r_corr = m.eps0 * J0 * (
        np.einsum("K,Lg->KLg", XE, Xinv)
        - np.einsum("Kg,L->KLg", Xinv, XE)
        - np.einsum("g,KL->KLg", e_hat, XX)
    )
    g_corr = m.eps0 * J0 * (
        np.einsum("a,K,Lg->KaLg", e_hat, XE, Xinv)
        - np.einsum("a,Kg,L->KaLg", e_hat, Xinv, XE)
        + np.einsum("g,Ka,L->KaLg", e_hat, Xinv, XE)
        - np.einsum("g,K,La->KaLg", e_hat, XE, Xinv)
        + 0.5 * ee * (np.einsum("Kg,La->KaLg", Xinv, Xinv)
                      - np.einsum("Ka,Lg->KaLg", Xinv, Xinv))
        - np.einsum("a,g,KL->KaLg", e_hat, e_hat, XX)
    )

    G = (np.einsum("aM,KMLN,gN->KaLg", F0, rho0 * ders.dEdE, F0)
         + rho0 * np.einsum("KL,ag->KaLg", ders.dE, np.eye(d))
         + g_corr)
    R = -rho0 * np.einsum("ABK,gK->ABg", ders.dWdE, F0) + r_corr
    Lam = -np.einsum("LM,gL->Mg", ders.dEdtheta, F0)
    L = -rho0 * ders.dWdW + l_corr
    P = -ders.dWdtheta
    alpha = -ders.dthetadtheta

    return EffectiveConstants(
        G=G, R=R, Lam=Lam, L=L, P=P, alpha=alpha,
        kap_u=np.zeros((d, d, d)), kap_E=np.zeros((d, d)),
        kap_1=np.zeros(d), kap_2=m.kappa_cond.copy(),
        g_corr=g_corr, r_corr=r_corr, l_corr=l_corr, rho0=rho0,
    )


@dataclass(frozen=True)
class SymmetryReport:
    """Relative asymmetry norms of the effective arrays."""

    g_asymmetry: float
    l_asymmetry: float
    tol: float
    passed: bool


def check_symmetries(ec: EffectiveConstants, tol: float = 1e-8) -> SymmetryReport:
    """Measure the pair-exchange symmetry defects of G and L.

    Returns the Frobenius norms of ``G - G^T(pair)`` and ``L - L^T``
    relative to the norms of G and L, with a pass/fail verdict at ``tol``.
    """
    g_norm = np.linalg.norm(ec.G)
    l_norm = np.linalg.norm(ec.L)
    g_asym = np.linalg.norm(ec.G - np.transpose(ec.G, (2, 3, 0, 1)))
    l_asym = np.linalg.norm(ec.L - ec.L.T)
    g_rel = g_asym / g_norm if g_norm > 0.0 else g_asym
    l_rel = l_asym / l_norm if l_norm > 0.0 else l_asym
    return SymmetryReport(
        g_asymmetry=float(g_rel),
        l_asymmetry=float(l_rel),
        tol=tol,
        passed=bool(g_rel <= tol and l_rel <= tol),
    )


def ignaczak_condition(ec: EffectiveConstants, rho0: float,
                       theta0_uniform: float):
    """Sufficient uniqueness inequality on the pyroelectric coupling.

    Compares the coupling vector magnitude against the smallest dielectric
    eigenvalue scaled by the heat-capacity coefficient: with
    ``lambda_m = min eig L``, ``c = rho0 * alpha / (2 theta0)``, and
    ``g = rho0 * P``, the condition holds when ``|g| <= c * lambda_m``.

    Returns
    -------
    (holds, lambda_m, c, gnorm)

    Raises
    ------
    NotPositiveDefinite
        If L has an eigenvalue <= 0.
    """
    lam_m = float(np.linalg.eigvalsh(ec.L).min())
    if lam_m <= 0.0:
        raise NotPositiveDefinite(
            f"effective dielectric array has min eigenvalue {lam_m:g}")
    c = rho0 * ec.alpha / (2.0 * theta0_uniform)
    gnorm = float(np.linalg.norm(rho0 * ec.P))
    return bool(gnorm <= c * lam_m), lam_m, float(c), gnorm
