"""Independent reference computations used to pin expected values in tests.

Everything here is deliberately built from first principles (series
expansions, classical rate equations, textbook closed forms) so that the
code under test and its oracle share no implementation path.
"""

import numpy as np


def taylor_expm(m: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring of a plain Taylor series."""
    m = np.asarray(m, dtype=complex)
    norm = np.linalg.norm(m, np.inf)
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-300) / 0.25))))
    a = m / (2 ** squarings)
    term = np.eye(m.shape[0], dtype=complex)
    total = term.copy()
    for k in range(1, 60):
        term = term @ a / k
        total += term
        if np.max(np.abs(term)) < 1e-20:
            break
    for _ in range(squarings):
        total = total @ total
    return total


def classical_conditional_chain(rates: np.ndarray, p0: np.ndarray,
                                weights_collapse: np.ndarray,
                                weights_observe: np.ndarray,
                                tau_grid: np.ndarray) -> np.ndarray:
    """Two-time correlation of a classical jump process with diagonal operators.

    ``rates[j, i]`` is the i -> j transition rate.  The chain starts from the
    stationary distribution ``p0``; the first (diagonal) measurement reweights
    it by ``weights_collapse``, the population then evolves under the rate
    matrix and is read out with ``weights_observe``:

        G(tau) = sum_j w_obs[j] [exp(R tau) (w_col * p0)]_j
    """
    rates = np.asarray(rates, dtype=float)
    r = rates - np.diag(rates.sum(axis=0))
    p_cond = np.asarray(weights_collapse, dtype=float) * np.asarray(p0, dtype=float)
    out = np.empty(len(tau_grid))
    for k, tau in enumerate(tau_grid):
        out[k] = float(np.asarray(weights_observe) @ (taylor_expm(r * tau).real @ p_cond))
    return out


def driven_tls_excited_population(omega_rabi: float, gamma: float) -> float:
    """Steady excited-state population of a resonantly driven two-level atom.

    Optical Bloch equations with ``H = (omega_rabi/2) sigma_x`` and radiative
    decay ``gamma`` give ``rho_ee = omega_rabi^2 / (2 omega_rabi^2 + gamma^2)``.
    """
    return omega_rabi ** 2 / (2.0 * omega_rabi ** 2 + gamma ** 2)


def resonance_fluorescence_g2(tau: np.ndarray, omega_rabi: float, gamma: float) -> np.ndarray:
    """Closed-form g2 of resonant fluorescence, ``H = (omega_rabi/2) sigma_x``.

    g2(tau) = 1 - exp(-3 gamma tau / 4) [cos(mu tau) + (3 gamma / 4 mu) sin(mu tau)],
    mu = sqrt(omega_rabi^2 - (gamma/4)^2), valid above threshold.
    """
    tau = np.asarray(tau, dtype=float)
    mu = np.sqrt(omega_rabi ** 2 - (gamma / 4.0) ** 2)
    return 1.0 - np.exp(-0.75 * gamma * tau) * (np.cos(mu * tau)
                                                + (0.75 * gamma / mu) * np.sin(mu * tau))


def optical_bloch_coherence_decay(t: np.ndarray, rho_eg0: complex, omega0: float,
                                  gamma: float, gamma_star: float) -> np.ndarray:
    """Free coherence decay of a two-level atom with decay and pure dephasing.

    rho_eg(t) = rho_eg(0) exp(-i omega0 t) exp(-(gamma/2 + gamma_star) t).
    """
    t = np.asarray(t, dtype=float)
    return rho_eg0 * np.exp(-1j * omega0 * t) * np.exp(-(gamma / 2.0 + gamma_star) * t)
