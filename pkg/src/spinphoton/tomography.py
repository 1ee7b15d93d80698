"""Spin-timescale extraction from conditional Stokes traces.

The oscillating components (s_DA, s_RL) are fitted with a damped cosine
``A env(tau) cos(omega tau + theta) + c`` sharing one precession frequency
and one coherence time; the population component (s_HV) is fitted with an
exponential relaxation after excluding the short-delay optical transient.
One trace therefore yields omega_L, T2* and T1 together.

The optimizer is a damped Gauss-Newton (Levenberg-Marquardt) loop with
analytic Jacobians: the step solves ``(J^T J + mu diag(J^T J)) dp = -J^T r``,
mu shrinks by 3 on accepted steps and grows by 10 on rejected ones.
Convergence: relative step < 1e-10 or relative residual change < 1e-12,
at most 200 iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .traces import StokesTrace

__all__ = [
    "FitError",
    "NoOscillationError",
    "FitNonConvergence",
    "FitResult",
    "fit_damped_oscillation",
    "fit_relaxation",
    "extract_all",
    "measure_stokes_coherence",
]

MAX_ITER = 200
STEP_TOL = 1e-10
RESID_TOL = 1e-12
AMPLITUDE_FLOOR = 1e-3  # Stokes units; traces flatter than this carry no oscillation


class FitError(Exception):
    pass


class NoOscillationError(FitError):
    """Trace is flat within the amplitude floor: nothing to fit."""


class FitNonConvergence(FitError):
    pass


@dataclass(frozen=True)
class FitResult:
    """Fitted spin timescales and oscillation parameters.

    Oscillation fields are None when the trace carried no oscillation (for
    example the phi = 0 measurement basis); ``T1`` is None when only an
    oscillation fit was performed.  ``stderr`` maps parameter names to
    standard errors from the Jacobian at the optimum.
    """

    omega_L: float | None = None
    T1: float | None = None
    T2_star: float | None = None
    amplitudes: dict[str, float] = field(default_factory=dict)
    phases: dict[str, float] = field(default_factory=dict)
    offsets: dict[str, float] = field(default_factory=dict)
    residual_norm: float = 0.0
    stderr: dict[str, float] = field(default_factory=dict)
    envelope: str = "gaussian"
    quadrature_defect: float | None = None

    def __post_init__(self):
        for name in ("T1", "T2_star"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise FitError(f"{name} must be positive, got {v}")
        if not np.isfinite(self.residual_norm):
            raise FitError("residual norm is not finite")


def _levenberg_marquardt(residual_jac, p0: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimize ``|r(p)|^2``; returns (p, J at optimum, final cost)."""
    p = np.asarray(p0, dtype=float)
    r, jac = residual_jac(p)
    cost = float(r @ r)
    mu = 1e-3
    for _ in range(MAX_ITER):
        g = jac.T @ r
        h = jac.T @ jac
        d = np.diag(h).copy()
        d[d <= 0] = 1.0
        accepted = False
        for _try in range(50):
            try:
                step = np.linalg.solve(h + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            r_new, jac_new = residual_jac(p + step)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            raise FitNonConvergence("no downhill step found")
        rel_step = np.linalg.norm(step) / max(np.linalg.norm(p), 1e-300)
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        p, r, jac, cost = p + step, r_new, jac_new, cost_new
        mu = max(mu / 3.0, 1e-12)
        if rel_step < STEP_TOL or rel_drop < RESID_TOL:
            return p, jac, cost
    raise FitNonConvergence(f"not converged after {MAX_ITER} iterations")


def _stderr(jac: np.ndarray, cost: float, names: list[str]) -> dict[str, float]:
    n, k = jac.shape
    dof = max(n - k, 1)
    sigma2 = cost / dof
    try:
        cov = sigma2 * np.linalg.inv(jac.T @ jac)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(k, np.nan)
    return dict(zip(names, se))


def _env_and_dlam(tau: np.ndarray, lam: float, envelope: str) -> tuple[np.ndarray, np.ndarray]:
    """Envelope env(lam tau) and its derivative wrt lam."""
    if envelope == "gaussian":
        e = np.exp(-(lam * tau) ** 2)
        return e, -2.0 * lam * tau ** 2 * e
    if envelope == "exponential":
        e = np.exp(-lam * tau)
        return e, -tau * e
    raise FitError(f"unknown envelope {envelope!r}")


def _initial_oscillation_guess(tau: np.ndarray, y: np.ndarray, envelope: str,
                               amplitude_floor: float) -> tuple[float, float, float, float, float]:
    """(A, omega, theta, lam, c) bootstrap, derivative free and deterministic.

    Frequency from the dominant discrete-spectrum peak of the detrended
    trace, decay from a linear fit to the log envelope of its oscillation
    extrema, offset from the trace tail mean.
    """
    n = len(tau)
    tail = y[int(0.8 * n):]
    c0 = float(np.mean(tail)) if tail.size else float(np.mean(y))
    d = y - c0
    amp0 = float(np.max(np.abs(d)))
    if amp0 < amplitude_floor:
        raise NoOscillationError(
            f"no oscillation detected: trace amplitude {amp0:.2e} below floor {amplitude_floor:.1e}")

    dt = tau[1] - tau[0]
    spec = np.fft.rfft(d - d.mean())
    freqs = np.fft.rfftfreq(n, dt)
    k = 1 + int(np.argmax(np.abs(spec[1:])))
    if k < 1 or abs(spec[k]) < 1e-12 * n:
        raise NoOscillationError("no oscillation detected: flat spectrum")
    omega0 = 2.0 * np.pi * freqs[k]
    theta0 = float(-np.angle(np.sum(d * np.exp(-1j * omega0 * tau))))

    # log-envelope slope from local |d| maxima
    idx = [i for i in range(1, n - 1) if abs(d[i]) >= abs(d[i - 1]) and abs(d[i]) >= abs(d[i + 1])
           and abs(d[i]) > 0.05 * amp0]
    lam0 = 0.25 / (tau[-1] - tau[0])
    if len(idx) >= 3:
        tt = tau[idx]
        ll = np.log(np.abs(d[idx]))
        x = tt ** 2 if envelope == "gaussian" else tt
        slope, intercept = np.polyfit(x, ll, 1)
        if slope < 0:
            lam0 = np.sqrt(-slope) if envelope == "gaussian" else -slope
            amp0 = float(np.exp(intercept))
    return amp0, omega0, theta0, lam0, c0


def fit_damped_oscillation(tau: np.ndarray, values: np.ndarray, envelope: str = "gaussian",
                           amplitude_floor: float = AMPLITUDE_FLOOR) -> FitResult:
    """Least-squares fit of ``A env(tau/T2*) cos(omega tau + theta) + c``.

    The grid must cover at least 4 oscillation periods or 2 decay constants
    (judged from the bootstrap estimates).  A trace flat within
    ``amplitude_floor`` raises :class:`NoOscillationError`.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(values, dtype=float)
    if tau.ndim != 1 or tau.shape != y.shape or tau.size < 8:
        raise FitError("need matching 1-d arrays with at least 8 samples")
    a0, w0, th0, lam0, c0 = _initial_oscillation_guess(tau, y, envelope, amplitude_floor)
    span = tau[-1] - tau[0]
    if span * w0 < 4 * 2 * np.pi and span * lam0 < 2.0:
        raise FitError("grid covers neither 4 oscillation periods nor 2 decay constants")

    def residual_jac(p):
        a, w, th, lam, c = p
        env, denv = _env_and_dlam(tau, lam, envelope)
        phase = w * tau + th
        cos, sin = np.cos(phase), np.sin(phase)
        r = a * env * cos + c - y
        jac = np.column_stack([env * cos,
                               -a * env * sin * tau,
                               -a * env * sin,
                               a * denv * cos,
                               np.ones_like(tau)])
        return r, jac

    p, jac, cost = _levenberg_marquardt(residual_jac, np.array([a0, w0, th0, lam0, c0]))
    a, w, th, lam, c = p
    if a < 0:  # fold the sign into the phase
        a, th = -a, th + np.pi
    w = abs(w)
    if lam <= 0:
        raise FitNonConvergence(f"non-physical decay rate {lam}")
    th = (th + np.pi) % (2 * np.pi) - np.pi
    se = _stderr(jac, cost, ["amplitude", "omega_L", "phase", "decay_rate", "offset"])
    return FitResult(omega_L=w, T2_star=1.0 / lam, amplitudes={"osc": a},
                     phases={"osc": th}, offsets={"osc": c},
                     residual_norm=float(np.sqrt(cost)), stderr=se, envelope=envelope)


def fit_relaxation(tau: np.ndarray, values: np.ndarray,
                   exclude_before: float = 1e-9) -> FitResult:
    """Exponential relaxation fit ``A exp(-tau/T1) + c`` on ``tau > exclude_before``.

    The default exclusion window removes the short-delay transient during
    which the reflection amplitudes have not reached their driven values.
    """
    tau = np.asarray(tau, dtype=float)
    y = np.asarray(values, dtype=float)
    mask = tau > exclude_before
    if mask.sum() < 4:
        raise FitError(f"exclude window {exclude_before} leaves {mask.sum()} samples")
    t, z = tau[mask], y[mask]

    c0 = float(np.mean(z[int(0.8 * len(z)):]))
    a0 = float(z[0] - c0)
    lam0 = 1.0 / max(t[-1] - t[0], 1e-300) * 3.0
    if abs(a0) < 1e-12:
        a0 = 1e-12

    def residual_jac(p):
        a, lam, c = p
        e = np.exp(-lam * t)
        r = a * e + c - z
        jac = np.column_stack([e, -a * t * e, np.ones_like(t)])
        return r, jac

    p, jac, cost = _levenberg_marquardt(residual_jac, np.array([a0, lam0, c0]))
    a, lam, c = p
    if lam <= 0:
        raise FitNonConvergence(f"non-physical relaxation rate {lam}")
    se = _stderr(jac, cost, ["amplitude", "relaxation_rate", "offset"])
    return FitResult(T1=1.0 / lam, amplitudes={"hv": a}, offsets={"hv": c},
                     residual_norm=float(np.sqrt(cost)), stderr=se)


def _fit_joint_oscillation(tau: np.ndarray, y_da: np.ndarray, y_rl: np.ndarray,
                           envelope: str, amplitude_floor: float) -> FitResult:
    """Simultaneous DA/RL fit sharing omega and T2*, free amplitudes/phases."""
    a1, w1, t1, l1, c1 = _initial_oscillation_guess(tau, y_da, envelope, amplitude_floor)
    a2, _w2, t2, l2, c2 = _initial_oscillation_guess(tau, y_rl, envelope, amplitude_floor)
    p0 = np.array([w1, 0.5 * (l1 + l2), a1, t1, c1, a2, t2, c2])

    def residual_jac(p):
        w, lam, aa, ta, ca, ab, tb, cb = p
        env, denv = _env_and_dlam(tau, lam, envelope)
        rows = []
        jacs = []
        for a, th, c, y in ((aa, ta, ca, y_da), (ab, tb, cb, y_rl)):
            phase = w * tau + th
            cos, sin = np.cos(phase), np.sin(phase)
            rows.append(a * env * cos + c - y)
            jacs.append((cos, sin, a, env, denv))
        r = np.concatenate(rows)
        n = tau.size
        jac = np.zeros((2 * n, 8))
        for i, (cos, sin, a, env, denv) in enumerate(jacs):
            sl = slice(i * n, (i + 1) * n)
            jac[sl, 0] = -a * env * sin * tau
            jac[sl, 1] = a * denv * cos
            jac[sl, 2 + 3 * i] = env * cos
            jac[sl, 3 + 3 * i] = -a * env * sin
            jac[sl, 4 + 3 * i] = np.ones(n)
        return r, jac

    p, jac, cost = _levenberg_marquardt(residual_jac, p0)
    w, lam, aa, ta, ca, ab, tb, cb = p
    if lam <= 0:
        raise FitNonConvergence(f"non-physical decay rate {lam}")
    if aa < 0:
        aa, ta = -aa, ta + np.pi
    if ab < 0:
        ab, tb = -ab, tb + np.pi
    w = abs(w)
    wrap = lambda x: (x + np.pi) % (2 * np.pi) - np.pi
    ta, tb = wrap(ta), wrap(tb)
    quadrature = abs(abs(wrap(ta - tb)) - 0.5 * np.pi)
    se = _stderr(jac, cost, ["omega_L", "decay_rate", "amp_da", "phase_da",
                             "offset_da", "amp_rl", "phase_rl", "offset_rl"])
    return FitResult(omega_L=w, T2_star=1.0 / lam,
                     amplitudes={"da": aa, "rl": ab},
                     phases={"da": ta, "rl": tb},
                     offsets={"da": ca, "rl": cb},
                     residual_norm=float(np.sqrt(cost)), stderr=se, envelope=envelope,
                     quadrature_defect=float(quadrature))


def extract_all(stokes: StokesTrace, envelope: str = "gaussian",
                exclude_before: float = 1e-9,
                amplitude_floor: float = AMPLITUDE_FLOOR) -> FitResult:
    """All spin timescales from one conditional-tomography trace.

    Joint DA/RL oscillation fit (shared omega_L and T2*) plus the HV
    relaxation fit for T1.  When the oscillating components are flat (zero
    coherence measurement basis) the oscillation fields are left unset and
    T1 is still recovered.  Convergence failures propagate, tagged with the
    failing component.
    """
    try:
        relax = fit_relaxation(stokes.tau, stokes.s_hv, exclude_before=exclude_before)
    except FitError as exc:
        raise FitError(f"s_HV relaxation fit failed: {exc}") from exc

    try:
        osc = _fit_joint_oscillation(stokes.tau, stokes.s_da, stokes.s_rl,
                                     envelope, amplitude_floor)
    except NoOscillationError:
        return FitResult(T1=relax.T1, amplitudes=relax.amplitudes, offsets=relax.offsets,
                         residual_norm=relax.residual_norm, stderr=relax.stderr,
                         envelope=envelope)
    except FitError as exc:
        raise FitError(f"s_DA/s_RL oscillation fit failed: {exc}") from exc

    return FitResult(
        omega_L=osc.omega_L, T1=relax.T1, T2_star=osc.T2_star,
        amplitudes={**osc.amplitudes, **relax.amplitudes},
        phases=osc.phases,
        offsets={**osc.offsets, **relax.offsets},
        residual_norm=float(np.hypot(osc.residual_norm, relax.residual_norm)),
        stderr={**osc.stderr, **{f"hv_{k}": v for k, v in relax.stderr.items()}},
        envelope=envelope, quadrature_defect=osc.quadrature_defect)


def measure_stokes_coherence(stokes: StokesTrace, at_tau: float = 0.0,
                             envelope: str = "gaussian",
                             exclude_before: float = 1e-9,
                             amplitude_floor: float = AMPLITUDE_FLOOR) -> float:
    """Stokes coherence C_S from fitted oscillation amplitudes.

    C_S = sqrt(A_DA^2 + A_RL^2) evaluated on the fitted envelopes at
    ``at_tau`` (default 0): the fit extrapolates through the short-delay
    transient instead of reading the raw first bin.  Returns 0 for traces
    with no oscillation.
    """
    result = extract_all(stokes, envelope=envelope, exclude_before=exclude_before,
                         amplitude_floor=amplitude_floor)
    if result.omega_L is None:
        return 0.0
    env = {"gaussian": lambda x: np.exp(-x * x), "exponential": lambda x: np.exp(-x)}[result.envelope]
    e = env(at_tau / result.T2_star)
    return float(np.hypot(result.amplitudes["da"] * e, result.amplitudes["rl"] * e))
