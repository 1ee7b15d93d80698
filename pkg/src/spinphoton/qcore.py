"""Dense open-quantum-system kernel.

Operators are plain complex numpy arrays.  Density operators are vectorized
by COLUMN stacking throughout: ``vec(rho) = rho.flatten(order="F")`` and
``vec(A rho B) = (B.T kron A) vec(rho)``.  This convention is fixed here and
used by every superoperator in the package.

Rates and Hamiltonian entries carry angular-frequency units (rad/s); nothing
in this module depends on the absolute scale, so natural units (rate = 1)
work equally well in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

__all__ = [
    "QcoreError",
    "DimensionError",
    "HermiticityError",
    "StateInvariantError",
    "DegenerateSteadyStateError",
    "ConvergenceError",
    "hermiticity_defect",
    "require_hermitian",
    "DensityOperator",
    "Liouvillian",
    "CorrelationTrace",
    "build_lindblad",
    "steady_state",
    "propagate",
    "evolve_on_grid",
    "two_time_correlation",
]

# Tolerances mirrored by DensityOperator.validate; see class docstring.
TRACE_ATOL = 1e-9
HERM_ATOL = 1e-10
EIG_NEG_TOL = -1e-8


class QcoreError(Exception):
    """Base class for kernel failures."""


class DimensionError(QcoreError):
    pass


class HermiticityError(QcoreError):
    pass


class StateInvariantError(QcoreError):
    """A density operator violated trace/Hermiticity/positivity bounds."""


class DegenerateSteadyStateError(QcoreError):
    """The Liouvillian null space has dimension > 1; no unique steady state."""


class ConvergenceError(QcoreError):
    pass


def hermiticity_defect(a: np.ndarray) -> float:
    """Return ``max|A - A^dag|`` relative to ``max(1, max|A|)``."""
    a = np.asarray(a)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    return float(np.max(np.abs(a - a.conj().T))) / scale


def require_hermitian(a: np.ndarray, tol: float = 1e-12, what: str = "operator") -> None:
    defect = hermiticity_defect(a)
    if defect > tol:
        raise HermiticityError(f"{what} is not Hermitian: relative defect {defect:.3e} > {tol:.1e}")


def _vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).flatten(order="F")


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v, dtype=complex).reshape((n, n), order="F")


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian, unit-trace, positive-semidefinite matrix on a labelled space.

    Parameters
    ----------
    matrix:
        Square complex array.
    dims:
        Subsystem dimensions, in tensor (kron) order.  ``prod(dims)`` must
        equal the matrix dimension.  A bare system uses ``(n,)``.

    Invariants (checked by :meth:`validate`):
      * trace equals 1 within 1e-9,
      * Hermitian within 1e-10 (relative),
      * smallest eigenvalue >= -1e-8.  Small negative eigenvalues from
        conditioning are tolerated and reported, never clipped: silently
        renormalizing the spectrum would bias conditional states.
    """

    matrix: np.ndarray
    dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density operator must be square, got {m.shape}")
        dims = tuple(self.dims) if self.dims else (m.shape[0],)
        if int(np.prod(dims)) != m.shape[0]:
            raise DimensionError(f"dims {dims} inconsistent with matrix dimension {m.shape[0]}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self, trace_atol: float = TRACE_ATOL, herm_atol: float = HERM_ATOL,
                 eig_tol: float = EIG_NEG_TOL) -> "DensityOperator":
        tr = complex(np.trace(self.matrix))
        if abs(tr - 1.0) > trace_atol:
            raise StateInvariantError(f"trace {tr} deviates from 1 by {abs(tr - 1.0):.3e}")
        defect = hermiticity_defect(self.matrix)
        if defect > herm_atol:
            raise StateInvariantError(f"Hermiticity defect {defect:.3e}")
        w = np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))
        if w.min() < eig_tol:
            raise StateInvariantError(f"negative eigenvalue {w.min():.3e} below tolerance {eig_tol:.1e}")
        return self

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(np.asarray(op) @ self.matrix))

    def partial_trace(self, keep: int) -> "DensityOperator":
        """Trace out all subsystems except the one at index ``keep``."""
        dims = self.dims
        if not 0 <= keep < len(dims):
            raise DimensionError(f"subsystem index {keep} out of range for dims {dims}")
        n = len(dims)
        t = self.matrix.reshape(dims + dims)
        # contract every pair of axes except the kept one, highest first
        for i in reversed(range(n)):
            if i == keep:
                continue
            t = np.trace(t, axis1=i, axis2=i + (t.ndim // 2))
        return DensityOperator(t, dims=(dims[keep],))


@dataclass(frozen=True)
class Liouvillian:
    """Generator of Lindblad dynamics on column-vectorized density operators.

    ``matrix`` has shape (N^2, N^2) for Hilbert dimension N.  The
    row-vectorized identity is a left null vector (trace preservation); the
    spectrum has no eigenvalue with real part above ~1e-8 in scaled units.
    """

    matrix: np.ndarray
    hilbert_dim: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n2 = self.hilbert_dim ** 2
        if m.shape != (n2, n2):
            raise DimensionError(
                f"Liouvillian must be {n2}x{n2} for hilbert_dim {self.hilbert_dim}, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def scale(self) -> float:
        """Magnitude used to normalize residuals (max |entry|, at least 1)."""
        return max(1.0, float(np.max(np.abs(self.matrix))))

    def trace_defect(self) -> float:
        """``max|vec(I)^T L|`` relative to the Liouvillian scale."""
        id_vec = _vec(np.eye(self.hilbert_dim))
        return float(np.max(np.abs(id_vec @ self.matrix))) / self.scale

    def check_trace_preserving(self, tol: float = 1e-9) -> None:
        defect = self.trace_defect()
        if defect > tol:
            raise QcoreError(f"Liouvillian is not trace preserving: scaled defect {defect:.3e}")

    def max_real_eigenvalue(self) -> float:
        """Largest real part of the spectrum, in scaled (dimensionless) units.

        O(N^6); intended for tests and small systems, not hot paths.
        """
        ev = np.linalg.eigvals(self.matrix / self.scale)
        return float(ev.real.max())

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return _unvec(self.matrix @ _vec(rho), self.hilbert_dim)


@dataclass(frozen=True)
class CorrelationTrace:
    """Real time series on a strictly monotone delay grid (seconds)."""

    tau: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if tau.ndim != 1 or tau.shape != values.shape:
            raise DimensionError("tau and values must be 1-d arrays of equal length")
        if tau.size > 1 and not np.all(np.diff(tau) > 0):
            raise QcoreError("tau grid must be strictly increasing")
        if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(values))):
            raise QcoreError("trace contains non-finite entries")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", values)


def build_lindblad(hamiltonian: np.ndarray,
                   jump_ops: list[tuple[np.ndarray, float]],
                   herm_tol: float = 1e-12) -> Liouvillian:
    """Assemble ``L rho = -i[H, rho] + sum_k gamma_k D[c_k] rho``.

    ``D[c] rho = c rho c^dag - (c^dag c rho + rho c^dag c)/2``.  Rates must be
    nonnegative and H Hermitian (relative tolerance 1e-12).
    """
    h = np.asarray(hamiltonian, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionError(f"Hamiltonian must be square, got {h.shape}")
    require_hermitian(h, tol=herm_tol, what="Hamiltonian")
    n = h.shape[0]
    eye = np.eye(n)

    lio = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for c, rate in jump_ops:
        c = np.asarray(c, dtype=complex)
        if c.shape != (n, n):
            raise DimensionError(f"jump operator shape {c.shape} != ({n}, {n})")
        if rate < 0:
            raise QcoreError(f"negative rate {rate}")
        cdc = c.conj().T @ c
        lio += rate * (np.kron(c.conj(), c)
                       - 0.5 * np.kron(eye, cdc)
                       - 0.5 * np.kron(cdc.T, eye))

    out = Liouvillian(lio, hilbert_dim=n)
    out.check_trace_preserving()
    return out


def steady_state(lio: Liouvillian, dims: tuple[int, ...] = (),
                 verify_unique: bool = True,
                 residual_tol: float = 1e-9) -> DensityOperator:
    """Unique stationary state of a trace-preserving Liouvillian.

    Solves ``(L/s + P) x = b`` where P pins the trace and s is the Liouvillian
    scale, then checks the scaled residual ``|L rho|/s <= residual_tol``.
    With ``verify_unique`` the two smallest singular values of L are compared;
    a second near-null direction raises :class:`DegenerateSteadyStateError`
    rather than silently picking a state.
    """
    n = lio.hilbert_dim
    s = lio.scale
    m = lio.matrix / s
    id_vec = _vec(np.eye(n))
    # rank-1 trace pin: (L/s + |id><id|/n) rho = id/n  has the steady state
    # with unit trace as its solution when the null space is one-dimensional.
    a = m + np.outer(id_vec, id_vec.conj()) / n
    b = id_vec / n
    try:
        x = scipy.linalg.solve(a, b)
    except scipy.linalg.LinAlgError as exc:
        raise DegenerateSteadyStateError(f"steady-state solve failed: {exc}") from exc

    rho = _unvec(x, n)
    rho = 0.5 * (rho + rho.conj().T)  # discard numerical skew, not spectrum
    tr = np.trace(rho).real
    if abs(tr) < 1e-300:
        raise DegenerateSteadyStateError("steady-state solve returned zero trace")
    rho = rho / tr

    residual = float(np.linalg.norm(m @ _vec(rho)))
    if residual > residual_tol:
        raise ConvergenceError(f"steady-state scaled residual {residual:.3e} > {residual_tol:.1e}")

    if verify_unique:
        sv = scipy.linalg.svdvals(m)
        # one singular value must vanish; a second one near zero means a
        # degenerate null space
        if sv.size >= 2 and sv[-2] < 1e-10:
            raise DegenerateSteadyStateError(
                f"null space dimension > 1 (second smallest singular value {sv[-2]:.3e})")

    out = DensityOperator(rho, dims=dims if dims else (n,))
    out.validate()
    return out


_EXPM_DIM_LIMIT = 40  # dense expm up to this Hilbert dimension, ODE beyond


def _expm_apply(lio: Liouvillian, v: np.ndarray, tau: float, method: str) -> np.ndarray:
    if method == "expm":
        return scipy.linalg.expm(lio.matrix * tau) @ v
    if method == "ode":
        sol = solve_ivp(lambda _t, y: lio.matrix @ y, (0.0, tau), v,
                        method="DOP853", rtol=1e-10, atol=1e-12)
        if not sol.success:
            raise ConvergenceError(f"adaptive propagation failed: {sol.message}")
        return sol.y[:, -1]
    raise ValueError(f"unknown propagation method {method!r}")


def propagate(lio: Liouvillian, rho0: DensityOperator, tau: float,
              method: str = "auto", validate: bool = True) -> DensityOperator:
    """Evolve ``rho0`` for a delay ``tau >= 0`` under ``exp(L tau)``.

    ``method="auto"`` uses the dense matrix exponential for Hilbert dimension
    <= 40 and an adaptive integrator above; both agree to 1e-8 on overlap
    tests.  ``tau = 0`` returns the input unchanged.
    """
    if tau < 0:
        raise QcoreError(f"propagation time must be >= 0, got {tau}")
    if rho0.dim != lio.hilbert_dim:
        raise DimensionError("state dimension does not match Liouvillian")
    if tau == 0:
        return rho0
    if method == "auto":
        method = "expm" if lio.hilbert_dim <= _EXPM_DIM_LIMIT else "ode"
    v = _expm_apply(lio, _vec(rho0.matrix), tau, method)
    rho = _unvec(v, lio.hilbert_dim)
    rho = 0.5 * (rho + rho.conj().T)
    out = DensityOperator(rho, dims=rho0.dims)
    if validate:
        out.validate()
    return out


def evolve_on_grid(lio: Liouvillian, v0: np.ndarray, tau_grid: np.ndarray,
                   method: str = "auto") -> np.ndarray:
    """Return ``exp(L tau_k) v0`` for every grid point.

    ``v0`` is a vectorized operator of shape (N^2,), or a batch of them as
    columns of an (N^2, k) array; the output has shape (len(grid), N^2) or
    (len(grid), N^2, k).  Seeds need not be unit-trace states (conditioned
    states are propagated unnormalized).  Consecutive grid spacings reuse one
    matrix exponential per distinct step, so uniform grids cost a single
    expm regardless of batch size.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size and not np.all(np.diff(tau_grid) > 0):
        raise QcoreError("tau grid must be strictly increasing")
    if tau_grid.size and tau_grid[0] < 0:
        raise QcoreError("tau grid must be nonnegative")
    if method == "auto":
        method = "expm" if lio.hilbert_dim <= _EXPM_DIM_LIMIT else "ode"

    v = np.asarray(v0, dtype=complex)
    out = np.empty((tau_grid.size,) + v.shape, dtype=complex)
    if method != "expm":
        flat = v.reshape(v.shape[0], -1)
        for k, tau in enumerate(tau_grid):
            cols = [_expm_apply(lio, flat[:, j], tau, method) for j in range(flat.shape[1])]
            out[k] = np.stack(cols, axis=1).reshape(v.shape)
        return out

    steps = np.diff(np.concatenate(([0.0], tau_grid)))
    cache: dict[float, np.ndarray] = {}
    for k, dt in enumerate(steps):
        if dt > 0:
            e = cache.get(dt)
            if e is None:
                e = scipy.linalg.expm(lio.matrix * dt)
                cache[dt] = e
            v = e @ v
        out[k] = v
    return out


def two_time_correlation(lio: Liouvillian, rho_ss: DensityOperator,
                         collapse: np.ndarray, observable: np.ndarray,
                         tau_grid: np.ndarray,
                         stationarity_tol: float = 1e-8) -> CorrelationTrace:
    """Quantum-regression two-time correlation on a stationary state.

    Returns ``G(tau) = Tr[observable exp(L tau)(collapse rho_ss collapse^dag)]``
    for ``tau >= 0``.  For a Hermitian positive observable the result is real
    (imaginary parts below 1e-9 of scale are discarded); at long delays G
    factorizes into ``Tr[observable rho_ss] Tr[collapse rho_ss collapse^dag]``.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size and tau_grid[0] < 0:
        raise QcoreError("two_time_correlation requires tau >= 0")
    n = lio.hilbert_dim
    resid = float(np.linalg.norm((lio.matrix / lio.scale) @ _vec(rho_ss.matrix)))
    if resid > stationarity_tol:
        raise QcoreError(f"state is not stationary: scaled |L rho| = {resid:.3e}")

    collapse = np.asarray(collapse, dtype=complex)
    observable = np.asarray(observable, dtype=complex)
    seed = collapse @ rho_ss.matrix @ collapse.conj().T
    vs = evolve_on_grid(lio, _vec(seed), tau_grid)
    obs_row = _vec(observable.conj().T).conj()  # Tr[O M] = vec(O^dag)^dag vec(M)
    g = vs @ obs_row
    scale = max(1.0, float(np.max(np.abs(g))))
    if hermiticity_defect(observable) < 1e-12 and np.max(np.abs(g.imag)) / scale > 1e-9:
        raise QcoreError("correlation of a Hermitian observable has a large imaginary part")
    return CorrelationTrace(tau_grid, g.real)
