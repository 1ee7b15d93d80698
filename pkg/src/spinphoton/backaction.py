"""Analytical model of photon-detection back-action on the resident spin.

A V-polarized probe photon scatters off the charged device into

    |up>  ->  r_uu |up>|V>  + (lost channels)
    |dn>  ->  r_dd |dn>|V>  + r_du |up>|H>  + (lost channels)

and detecting the reflected photon in the linear polarization
``|M> = cos(phi/2)|H> + sin(phi/2)|V>`` conditions the spin.  The spin basis
{|up>, |dn>} is the energy eigenbasis (x-quantized, field along x), so the
populations live on the Bloch x axis and the coherence carries sigma_y and
sigma_z.  All operations here are closed-form and stateless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import ReflectionSet
from .traces import StokesTrace

__all__ = [
    "BackactionError",
    "SpinState",
    "SpinDynamicsParams",
    "StokesVector",
    "measurement_state",
    "detection_probability",
    "conditional_spin_state",
    "evolve_spin",
    "conditional_stokes",
    "conditional_probabilities",
    "coherence_sweep",
    "stokes_trace",
]


class BackactionError(Exception):
    pass


@dataclass(frozen=True)
class SpinState:
    """2x2 spin density matrix in the {|up>, |dn>} energy eigenbasis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise BackactionError(f"spin state must be 2x2, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_populations(cls, p_up: float, p_dn: float, coherence_du: complex = 0.0) -> "SpinState":
        """Build from populations and the dn-up coherence rho[dn, up]."""
        return cls(np.array([[p_up, np.conj(coherence_du)],
                             [coherence_du, p_dn]], dtype=complex))

    @property
    def p_up(self) -> float:
        return self.matrix[0, 0].real

    @property
    def p_dn(self) -> float:
        return self.matrix[1, 1].real

    @property
    def coherence_du(self) -> complex:
        """rho[dn, up] = <dn|rho|up>."""
        return self.matrix[1, 0]

    @property
    def bloch(self) -> tuple[float, float, float]:
        """(<sx>, <sy>, <sz>): populations on x, coherence in the y-z plane."""
        m = self.matrix
        return (m[0, 0].real - m[1, 1].real,
                2.0 * m[0, 1].imag,
                2.0 * m[0, 1].real)

    @property
    def bloch_coherence(self) -> float:
        """C_B = 2 |rho_du| = sqrt(<sy>^2 + <sz>^2)."""
        return 2.0 * abs(self.matrix[1, 0])

    def validate(self, atol: float = 1e-9) -> "SpinState":
        m = self.matrix
        if abs(np.trace(m) - 1.0) > atol:
            raise BackactionError(f"spin trace {np.trace(m)} != 1")
        if np.max(np.abs(m - m.conj().T)) > atol:
            raise BackactionError("spin state not Hermitian")
        sx, sy, sz = self.bloch
        norm = np.sqrt(sx * sx + sy * sy + sz * sz)
        if norm > 1.0 + 1e-9:
            raise BackactionError(f"Bloch vector norm {norm} exceeds 1")
        return self


@dataclass(frozen=True)
class SpinDynamicsParams:
    """Free-evolution constants of the conditioned spin.

    ``omega_L`` Larmor angular frequency (rad/s), ``T1`` population
    relaxation toward ``rho_stationary`` (which must be diagonal), ``T2_star``
    coherence decay with a gaussian envelope by default (static nuclear-field
    distribution); the exponential envelope is kept for sensitivity studies.
    """

    omega_L: float
    T1: float
    T2_star: float
    rho_stationary: SpinState
    envelope: str = "gaussian"

    def __post_init__(self):
        if self.T1 <= 0 or self.T2_star <= 0:
            raise BackactionError("T1 and T2* must be positive")
        if self.envelope not in ("gaussian", "exponential"):
            raise BackactionError(f"unknown envelope {self.envelope!r}")
        if abs(self.rho_stationary.coherence_du) > 1e-12:
            raise BackactionError("stationary state must be diagonal in the energy basis")

    def envelope_at(self, tau: float | np.ndarray) -> np.ndarray:
        x = np.asarray(tau, dtype=float) / self.T2_star
        if self.envelope == "gaussian":
            return np.exp(-x ** 2)
        return np.exp(-x)


@dataclass(frozen=True)
class StokesVector:
    s_hv: float
    s_da: float
    s_rl: float

    def __post_init__(self):
        for name in ("s_hv", "s_da", "s_rl"):
            v = getattr(self, name)
            if abs(v) > 1.0 + 1e-9:
                raise BackactionError(f"{name} = {v} outside [-1, 1]")
        n2 = self.s_hv ** 2 + self.s_da ** 2 + self.s_rl ** 2
        if n2 > 1.0 + 1e-9:
            raise BackactionError(f"Stokes vector norm^2 = {n2} exceeds 1")


def measurement_state(phi: float) -> tuple[float, float]:
    """Polarization amplitudes (c_H, c_V) of the measured state at angle phi."""
    return (np.cos(0.5 * phi), np.sin(0.5 * phi))


def detection_probability(phi: float, p_up: float, p_dn: float, r: ReflectionSet) -> float:
    """Probability of detecting an M(phi)-polarized reflected photon.

    P_M = P_up |r_uu|^2 sin^2(phi/2)
        + P_dn (|r_du|^2 cos^2(phi/2) + |r_dd|^2 sin^2(phi/2))
    """
    _check_populations(p_up, p_dn)
    c_h, c_v = measurement_state(phi)
    return (p_up * abs(r.r_uu) ** 2 * c_v ** 2
            + p_dn * (abs(r.r_du) ** 2 * c_h ** 2 + abs(r.r_dd) ** 2 * c_v ** 2))


def _check_populations(p_up: float, p_dn: float) -> None:
    if not (0.0 <= p_up <= 1.0 and 0.0 <= p_dn <= 1.0):
        raise BackactionError(f"populations outside [0, 1]: {p_up}, {p_dn}")
    if abs(p_up + p_dn - 1.0) > 1e-9:
        raise BackactionError(f"populations must sum to 1, got {p_up + p_dn}")


def conditional_spin_state(phi: float, p_up: float, p_dn: float, r: ReflectionSet) -> SpinState:
    """Spin density matrix conditioned on an M(phi) detection.

    rho_dn_dn = P_dn |r_dd|^2 sin^2(phi/2) / P_M
    rho_dn_up = P_dn r_dd r_du^* sin(phi) / (2 P_M)

    with rho_up_up = 1 - rho_dn_dn and Hermitian completion.  Undefined when
    the detection probability vanishes.
    """
    p_m = detection_probability(phi, p_up, p_dn, r)
    if p_m <= 0.0:
        raise BackactionError(f"zero detection probability at phi = {phi}")
    rho_dd = p_dn * abs(r.r_dd) ** 2 * np.sin(0.5 * phi) ** 2 / p_m
    rho_du = p_dn * r.r_dd * np.conj(r.r_du) * np.sin(phi) / (2.0 * p_m)
    return SpinState.from_populations(1.0 - rho_dd, rho_dd, rho_du).validate()


def evolve_spin(state: SpinState, tau: float, dyn: SpinDynamicsParams) -> SpinState:
    """Free evolution: precession, T2* envelope, T1 relaxation to stationarity."""
    if tau < 0:
        raise BackactionError("tau must be >= 0")
    if tau == 0:
        return state
    decay = np.exp(-tau / dyn.T1)
    p_dn = dyn.rho_stationary.p_dn + (state.p_dn - dyn.rho_stationary.p_dn) * decay
    coh = state.coherence_du * dyn.envelope_at(tau) * np.exp(1j * dyn.omega_L * tau)
    return SpinState.from_populations(1.0 - p_dn, p_dn, coh)


def conditional_probabilities(state: SpinState, r: ReflectionSet) -> tuple[float, float, float]:
    """(P_H, P_V, P_refl) for the next reflected photon given the spin state.

    P_H = |r_du|^2 rho_dn_dn, P_V = |r_dd|^2 rho_dn_dn + |r_uu|^2 rho_up_up,
    and P_refl = P_H + P_V exactly.
    """
    p_h = abs(r.r_du) ** 2 * state.p_dn
    p_v = abs(r.r_dd) ** 2 * state.p_dn + abs(r.r_uu) ** 2 * state.p_up
    return p_h, p_v, p_h + p_v


def conditional_stokes(state: SpinState, r: ReflectionSet) -> StokesVector:
    """Stokes vector of the next reflected photon, mapped from the spin state.

    s_HV = [(|r_du|^2 - |r_dd|^2) rho_dn_dn - |r_uu|^2 rho_up_up] / P_refl
    s_DA = 2 Re(r_uu r_du^* rho_up_dn) / P_refl
    s_RL = 2 Im(r_uu r_du^* rho_up_dn) / P_refl
    """
    p_h, p_v, p_refl = conditional_probabilities(state, r)
    if p_refl <= 0.0:
        raise BackactionError("zero conditional reflectivity")
    cross = r.r_uu * np.conj(r.r_du) * np.conj(state.coherence_du)
    return StokesVector(
        s_hv=(p_h - p_v) / p_refl,
        s_da=2.0 * cross.real / p_refl,
        s_rl=2.0 * cross.imag / p_refl,
    )


def stokes_coherence(state: SpinState, r: ReflectionSet) -> float:
    """C_S = 2 |rho_du r_uu^* r_du| / P_refl, the s_DA/s_RL quadrature sum."""
    s = conditional_stokes(state, r)
    return float(np.hypot(s.s_da, s.s_rl))


def coherence_sweep(phi_grid: np.ndarray, p_up: float, p_dn: float, r: ReflectionSet,
                    at_tau: float = 0.0,
                    dyn: SpinDynamicsParams | None = None) -> np.ndarray:
    """Bloch and Stokes coherences against the measurement angle.

    Returns an array of rows (phi, C_B, C_S) evaluated at delay ``at_tau``
    after the conditioning detection (0 by default; a positive value mimics
    the experimental exclusion of the optical transient and requires ``dyn``).
    Both coherences vanish exactly at phi = 0 and phi = pi.
    """
    if at_tau > 0 and dyn is None:
        raise BackactionError("at_tau > 0 requires spin dynamics parameters")
    out = np.empty((len(phi_grid), 3))
    for k, phi in enumerate(np.asarray(phi_grid, dtype=float)):
        state = conditional_spin_state(phi, p_up, p_dn, r)
        if at_tau > 0:
            state = evolve_spin(state, at_tau, dyn)
        out[k] = (phi, state.bloch_coherence, stokes_coherence(state, r))
    return out


def stokes_trace(phi: float, p_up: float, p_dn: float, r: ReflectionSet,
                 dyn: SpinDynamicsParams, tau_grid: np.ndarray) -> StokesTrace:
    """Conditional Stokes dynamics from the closed-form spin evolution."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    s = np.empty((len(tau_grid), 3))
    state0 = conditional_spin_state(phi, p_up, p_dn, r)
    for k, tau in enumerate(tau_grid):
        v = conditional_stokes(evolve_spin(state0, tau, dyn), r)
        s[k] = (v.s_hv, v.s_da, v.s_rl)
    return StokesTrace(tau_grid, s[:, 0], s[:, 1], s[:, 2])
