"""Adaptive implicit time integration for ``M y' = f(t, y)``.

Two schemes are provided:

* ``'trapezoidal'`` -- the trapezoidal rule for systems with a nonsingular
  mass matrix.  By default the local error ``h^3/12 y'''`` is estimated
  from a divided difference of the stored derivatives of the last two
  steps; the cruder embedded backward Euler estimate
  ``h/2 (y'_{n+1} - y'_n)`` is available as an option and is always used
  for the first step.  Dense output is the cubic Hermite interpolant of
  the step values and derivatives.
* ``'bdf'`` -- variable-step, variable-order backward differentiation
  formulas (orders 1..5) in quasi-constant step-size form, suitable for
  index-1 DAEs with a singular mass matrix.  Dense output is the
  interpolating polynomial held in the backward-difference array.

The system is any object with attributes ``mass`` (dense or sparse
constant matrix), ``rhs(t, y)`` and ``jac(t, y)`` returning ``df/dy``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

__all__ = [
    "IntegratorConfig",
    "ImplicitSystem",
    "Trajectory",
    "IntegrationError",
    "integrate",
    "interpolate",
]

EPS = np.finfo(float).eps
_SAFETY = 0.9
_MAX_FACTOR = 2.0
_MIN_FACTOR = 0.2
_DENSE_LIMIT = 3000


class IntegrationError(RuntimeError):
    """Time integration stopped before reaching the end of the interval.

    Attributes
    ----------
    t_last : float
        Last successfully reached time.
    trajectory : Trajectory or None
        The partial solution up to ``t_last``.
    """

    def __init__(self, message: str, t_last: float, trajectory=None):
        super().__init__(f"{message} (last good time {t_last:.6g})")
        self.t_last = t_last
        self.trajectory = trajectory


@dataclass(frozen=True)
class IntegratorConfig:
    """Settings of the adaptive integrators.

    ``error_norm='max'`` enforces ``|err_i| <= rel_tol |y_i| + abs_tol`` for
    every component; ``'rms'`` uses the root-mean-square of the scaled
    error instead.
    """

    method: str = "trapezoidal"
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    max_order: int = 5
    first_step: float | None = None
    min_step: float = 0.0
    max_step: float = np.inf
    newton_tol: float | None = None
    newton_max_iter: int = 4
    error_norm: str = "max"
    trapezoid_estimator: str = "divided_difference"
    max_steps: int = 500_000

    def __post_init__(self):
        if self.method not in ("trapezoidal", "bdf"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 1 <= int(self.max_order) <= 5:
            raise ValueError("max_order must lie in [1, 5]")
        if self.trapezoid_estimator not in ("divided_difference", "backward_euler"):
            raise ValueError("trapezoid_estimator must be 'divided_difference' or 'backward_euler'")
        if self.error_norm not in ("max", "rms"):
            raise ValueError("error_norm must be 'max' or 'rms'")
        if self.first_step is not None and self.first_step <= 0:
            raise ValueError("first_step must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be positive")

    def with_tolerances(self, rel_tol: float, abs_tol: float) -> "IntegratorConfig":
        return replace(self, rel_tol=rel_tol, abs_tol=abs_tol)

    @property
    def newton_tolerance(self) -> float:
        if self.newton_tol is not None:
            return self.newton_tol
        return max(10 * EPS / self.rel_tol, min(0.03, self.rel_tol**0.5))


@dataclass
class ImplicitSystem:
    """Plain container satisfying the integrator protocol."""

    mass: object
    rhs: object
    jac: object

    @property
    def n(self) -> int:
        return self.mass.shape[0]


@dataclass
class Trajectory:
    """Accepted steps of an integration plus dense output.

    ``times`` and ``states`` hold the accepted step values (initial value
    included), ``states`` with shape ``(len(times), N)``.  If ``t_eval`` was
    requested, ``sample_times``/``sample_states`` hold those values.
    """

    times: np.ndarray
    states: np.ndarray
    method: str
    stats: dict = field(default_factory=dict)
    sample_times: np.ndarray | None = None
    sample_states: np.ndarray | None = None
    _derivs: np.ndarray | None = field(default=None, repr=False)
    _segments: list | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def t_span(self) -> tuple:
        return float(self.times[0]), float(self.times[-1])

    @property
    def has_dense(self) -> bool:
        return self._derivs is not None or self._segments is not None

    def __call__(self, t) -> np.ndarray:
        return interpolate(self, t)

    def to_csv(self, path, samples: bool = False) -> None:
        """Time column followed by one column per state component."""
        times, states = (self.sample_times, self.sample_states) if samples else (self.times, self.states)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"y{i}" for i in range(states.shape[1])])
            for t, row in zip(times, states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def to_npz(self, path) -> None:
        payload = {"times": self.times, "states": self.states}
        if self.sample_times is not None:
            payload["sample_times"] = self.sample_times
            payload["sample_states"] = self.sample_states
        if self._derivs is not None:
            payload["derivs"] = self._derivs
        np.savez_compressed(path, method=np.array(self.method), **payload)

    @classmethod
    def from_npz(cls, path) -> "Trajectory":
        data = np.load(path)
        return cls(
            times=data["times"],
            states=data["states"],
            method=str(data["method"]),
            sample_times=data["sample_times"] if "sample_times" in data else None,
            sample_states=data["sample_states"] if "sample_states" in data else None,
            _derivs=data["derivs"] if "derivs" in data else None,
        )


def interpolate(traj: Trajectory, times) -> np.ndarray:
    """Dense-output values at ``times``; shape ``(len(times), N)``.

    Grid times return the stored step values exactly.

    Raises
    ------
    ValueError
        For times outside the integrated interval.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t0, t1 = traj.times[0], traj.times[-1]
    slack = 1e-12 * max(abs(t0), abs(t1), t1 - t0)
    if np.any(times < t0 - slack) or np.any(times > t1 + slack):
        raise ValueError(f"cannot extrapolate outside [{t0}, {t1}]")
    if not traj.has_dense:
        raise ValueError("trajectory carries no dense output")
    idx = np.clip(np.searchsorted(traj.times, times, side="right") - 1, 0, len(traj.times) - 2)
    out = np.empty((times.size, traj.states.shape[1]))
    if traj._derivs is not None:
        ta, tb = traj.times[idx], traj.times[idx + 1]
        h = (tb - ta)[:, None]
        s = ((times - ta) / (tb - ta))[:, None]
        ya, yb = traj.states[idx], traj.states[idx + 1]
        da, db = traj._derivs[idx], traj._derivs[idx + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out[:] = h00 * ya + h10 * h * da + h01 * yb + h11 * h * db
    else:
        for j, (t, i) in enumerate(zip(times, idx)):
            out[j] = _bdf_dense(traj._segments[i], t)
    exact = np.isin(times, traj.times)
    if np.any(exact):
        pos = np.searchsorted(traj.times, times[exact])
        out[exact] = traj.states[pos]
    return out


# --- linear algebra helpers --------------------------------------------------


def _as_operator(a, n):
    if sp.issparse(a):
        return a.tocsr()
    return np.asarray(a, dtype=float)


class _Factor:
    """LU factors; a singular matrix yields NaN solutions so that the
    Newton iteration fails and the step is retried with a smaller size."""

    def __init__(self, mat):
        if sp.issparse(mat):
            try:
                self._lu = splu(sp.csc_matrix(mat))
                self.solve = self._lu.solve
            except RuntimeError:  # exactly singular
                self.solve = lambda b: np.full(np.shape(b), np.nan)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = lu_factor(mat, check_finite=False)
            if not np.all(np.diag(lu[0])):
                self.solve = lambda b: np.full(np.shape(b), np.nan)
            else:
                self.solve = lambda b: lu_solve(lu, b, check_finite=False)


def _combine(M, c, J):
    """``M - c J`` in a format suitable for factorisation."""
    n = M.shape[0]
    if sp.issparse(J) and sp.issparse(M):
        return (M - c * J).tocsc()
    if n <= _DENSE_LIMIT:
        Md = M.toarray() if sp.issparse(M) else M
        Jd = J.toarray() if sp.issparse(J) else J
        return Md - c * Jd
    Ms = sp.csc_matrix(M)
    Js = sp.csc_matrix(J)
    return (Ms - c * Js).tocsc()


def _is_identity(M) -> bool:
    n = M.shape[0]
    if sp.issparse(M):
        diff = M - sp.identity(n, format="csr")
        return diff.count_nonzero() == 0 if hasattr(diff, "count_nonzero") else abs(diff).max() == 0
    return bool(np.array_equal(M, np.eye(n)))


def _norm(x, kind):
    if x.size == 0:
        return 0.0
    if kind == "max":
        return float(np.max(np.abs(x)))
    return float(np.linalg.norm(x) / np.sqrt(x.size))


def _matvec(M, x):
    return M @ x


class _Counter:
    def __init__(self, system):
        self.system = system
        self.n_rhs = 0
        self.n_jac = 0
        self.n_lu = 0

    def rhs(self, t, y):
        self.n_rhs += 1
        with np.errstate(over="ignore", invalid="ignore"):
            return np.asarray(self.system.rhs(t, y), dtype=float)

    def jac(self, t, y):
        self.n_jac += 1
        with np.errstate(over="ignore", invalid="ignore"):
            J = self.system.jac(t, y)
        return J if sp.issparse(J) else np.asarray(J, dtype=float)

    def factor(self, mat):
        self.n_lu += 1
        return _Factor(mat)


def integrate(
    system,
    t_span,
    y0,
    config: IntegratorConfig | None = None,
    t_eval=None,
    dense: bool = True,
) -> Trajectory:
    """Integrate ``M y' = f(t, y)`` over ``t_span`` from ``y0``.

    Parameters
    ----------
    system
        Object with ``mass``, ``rhs(t, y)`` and ``jac(t, y)``.
    t_span : (float, float)
    y0 : array_like
        Initial value; must be consistent for DAEs.
    config : IntegratorConfig
    t_eval : array_like, optional
        Times at which the dense output is sampled during the run.
    dense : bool
        Keep the dense-output data for later :func:`interpolate` calls.

    Raises
    ------
    IntegrationError
        On step-size underflow, repeated Newton failure or too many steps.
    """
    cfg = config or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y0 = np.array(y0, dtype=float)
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) < 0) or t_eval[0] < t0 or t_eval[-1] > t1:
            raise ValueError("t_eval must be sorted and inside t_span")
    if cfg.method == "trapezoidal":
        return _integrate_trapezoidal(system, t0, t1, y0, cfg, t_eval, dense)
    return _integrate_bdf(system, t0, t1, y0, cfg, t_eval, dense)


class _Sampler:
    """Collects dense-output samples at requested times step by step."""

    def __init__(self, t_eval, n):
        self.t_eval = t_eval
        self.values = None if t_eval is None else np.empty((t_eval.size, n))
        self.pos = 0

    def push(self, t_old, t_new, fn):
        if self.t_eval is None:
            return
        stop = np.searchsorted(self.t_eval, t_new, side="right")
        if stop > self.pos:
            self.values[self.pos : stop] = fn(self.t_eval[self.pos : stop])
            self.pos = stop


def _initial_step_ode(rhs_y, t0, y0, yp0, cfg, span, deriv):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = _norm(y0 / scale, "rms")
    d1 = _norm(yp0 / scale, "rms")
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * yp0
    yp1 = deriv(rhs_y(t0 + h0, y1))
    d2 = _norm((yp1 - yp0) / scale, "rms") / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.5
    return min(100 * h0, h1, span)


# --- trapezoidal rule --------------------------------------------------------


def _integrate_trapezoidal(system, t0, t1, y0, cfg, t_eval, dense):
    ev = _Counter(system)
    n = y0.size
    M = _as_operator(system.mass, n)
    identity = _is_identity(M)
    Mfac = None if identity else ev.factor(M.toarray() if sp.issparse(M) and n <= _DENSE_LIMIT else M)

    def deriv(f):
        return f if identity else Mfac.solve(f)

    span = t1 - t0
    f = ev.rhs(t0, y0)
    if not np.all(np.isfinite(f)):
        raise IntegrationError("non-finite right-hand side at the initial value", t0)
    yp = deriv(f)
    h = cfg.first_step or _initial_step_ode(ev.rhs, t0, y0, yp, cfg, span, deriv)
    h = min(h, cfg.max_step, span)
    min_step = max(cfg.min_step, 10 * EPS * max(abs(t0), abs(t1)))
    newton_tol = cfg.newton_tolerance
    expo = 0.5
    h_prev = yp_prev = None

    times, states, derivs = [t0], [y0.copy()], [yp.copy()]
    sampler = _Sampler(t_eval, n)
    t, y = t0, y0.copy()
    J = ev.jac(t, y)
    current_jac = True
    LU, lu_h = None, None
    n_rejected = 0
    n_newton_fail = 0

    def partial():
        return Trajectory(np.array(times), np.array(states), "trapezoidal", _derivs=np.array(derivs))

    while t < t1:
        if len(times) > cfg.max_steps:
            raise IntegrationError("maximum number of steps exceeded", t, partial())
        h = min(h, cfg.max_step)
        if t + h >= t1 - min_step:
            h = t1 - t
        if h < min_step:
            raise IntegrationError("step size underflow", t, partial())
        t_new = t + h
        c = 0.5 * h
        if LU is None or lu_h != h:
            LU = ev.factor(_combine(M, c, J))
            lu_h = h

        y_new = y + h * yp
        converged = False
        rate = None
        dy_norm_old = None
        for k in range(cfg.newton_max_iter):
            f_new = ev.rhs(t_new, y_new)
            if not np.all(np.isfinite(f_new)):
                break
            G = _matvec(M, y_new - y) - c * (f_new + f)
            dy = LU.solve(-G)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            dy_norm = _norm(dy / scale, cfg.error_norm)
            if dy_norm_old is not None:
                rate = dy_norm / dy_norm_old
                if rate >= 1 or rate ** (cfg.newton_max_iter - k) / (1 - rate) * dy_norm > newton_tol:
                    break
            y_new = y_new + dy
            if dy_norm == 0 or (rate is not None and rate / (1 - rate) * dy_norm < newton_tol) or (
                rate is None and dy_norm < 1e-3 * newton_tol
            ):
                converged = True
                break
            dy_norm_old = dy_norm

        if not converged:
            if not current_jac:
                J = ev.jac(t, y)
                current_jac = True
                LU = None
                continue
            n_newton_fail += 1
            h *= 0.5
            LU = None
            if n_newton_fail > 60:
                raise IntegrationError("Newton iteration failed repeatedly", t, partial())
            continue

        f_new = ev.rhs(t_new, y_new)
        if not np.all(np.isfinite(f_new)):
            h *= 0.5
            LU = None
            continue
        yp_new = deriv(f_new)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        if cfg.trapezoid_estimator == "backward_euler" or h_prev is None:
            # embedded backward Euler: first-order estimate
            err_norm = _norm(c * (yp_new - yp) / scale, cfg.error_norm)
            expo = 0.5
        else:
            # h^3/12 y''' with y''' from divided differences of y'
            d3 = 2.0 * ((yp_new - yp) / h - (yp - yp_prev) / h_prev) / (h + h_prev)
            err_norm = _norm(h**3 / 12.0 * d3 / scale, cfg.error_norm)
            expo = 1.0 / 3.0
        if err_norm > 1.0:
            n_rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err_norm**-expo)
            continue

        sampler_fn = _hermite_segment(t, t_new, y, y_new, yp, yp_new)
        sampler.push(t, t_new, sampler_fn)
        h_prev, yp_prev = h, yp
        t, y, f, yp = t_new, y_new, f_new, yp_new
        times.append(t)
        states.append(y.copy())
        derivs.append(yp.copy())
        n_newton_fail = 0
        if rate is not None and rate > 0.5:
            J = ev.jac(t, y)
            current_jac = True
            LU = None
        else:
            current_jac = False
        factor = _MAX_FACTOR if err_norm == 0 else min(_MAX_FACTOR, _SAFETY * err_norm**-expo)
        if not 1.0 <= factor <= 1.2:
            h *= max(_MIN_FACTOR, factor)

    stats = {"n_steps": len(times) - 1, "n_rejected": n_rejected, "n_rhs": ev.n_rhs, "n_jac": ev.n_jac, "n_lu": ev.n_lu}
    return Trajectory(
        np.array(times),
        np.array(states),
        "trapezoidal",
        stats,
        sample_times=t_eval,
        sample_states=sampler.values,
        _derivs=np.array(derivs) if dense else None,
    )


def _hermite_segment(ta, tb, ya, yb, da, db):
    def fn(ts):
        h = tb - ta
        s = ((np.asarray(ts) - ta) / h)[:, None]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * ya + h10 * h * da + h01 * yb + h11 * h * db

    return fn


# --- BDF ---------------------------------------------------------------------

_MAX_ORDER = 5
_GAMMA = np.hstack((0.0, np.cumsum(1.0 / np.arange(1, _MAX_ORDER + 1))))
_ALPHA = _GAMMA.copy()
_ERROR_CONST = 1.0 / np.arange(1, _MAX_ORDER + 2)
_BDF_MAX_FACTOR = 10.0


def _compute_R(order, factor):
    I = np.arange(1, order + 1)[:, None]
    J = np.arange(1, order + 1)
    M = np.zeros((order + 1, order + 1))
    M[1:, 1:] = (I - 1 - factor * J) / I
    M[0] = 1
    return np.cumprod(M, axis=0)


def _change_D(D, order, factor):
    R = _compute_R(order, factor)
    U = _compute_R(order, 1)
    RU = R.dot(U)
    D[: order + 1] = np.dot(RU.T, D[: order + 1])


def _bdf_dense(segment, t):
    t_new, h, order, D = segment
    t_shift = t_new - h * np.arange(order)
    denom = h * (1 + np.arange(order))
    x = (t - t_shift) / denom
    p = np.cumprod(x)
    return D[0] + np.dot(D[1:].T, p)


def _consistent_derivative(ev, M, t, y, f):
    """Solve ``M y' = f`` together with the differentiated constraints."""
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    U, s, Vt = np.linalg.svd(Md)
    rank = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
    if rank == Md.shape[0]:
        return np.linalg.solve(Md, f)
    W = U[:, rank:]
    J = ev.jac(t, y)
    Jd = J.toarray() if sp.issparse(J) else J
    dt = 1e-7 * max(1.0, abs(t))
    ft = (ev.rhs(t + dt, y) - f) / dt
    lhs = np.vstack([Md, W.T @ Jd])
    rhs = np.concatenate([f, -W.T @ ft])
    return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def _integrate_bdf(system, t0, t1, y0, cfg, t_eval, dense):
    ev = _Counter(system)
    n = y0.size
    M = _as_operator(system.mass, n)
    max_order = int(cfg.max_order)
    span = t1 - t0
    f0 = ev.rhs(t0, y0)
    if not np.all(np.isfinite(f0)):
        raise IntegrationError("non-finite right-hand side at the initial value", t0)
    singular = True
    if n <= _DENSE_LIMIT:
        yp0 = _consistent_derivative(ev, M, t0, y0, f0)
        Md = M.toarray() if sp.issparse(M) else M
        singular = np.linalg.matrix_rank(Md) < n
    else:
        try:
            yp0 = splu(sp.csc_matrix(M)).solve(f0)
            singular = False
        except RuntimeError:
            yp0 = np.zeros(n)
    if cfg.first_step is not None:
        h = cfg.first_step
    elif not singular:
        h = _initial_step_ode(ev.rhs, t0, y0, yp0, cfg, span, lambda f: np.linalg.solve(Md, f) if n <= _DENSE_LIMIT else splu(sp.csc_matrix(M)).solve(f))
    else:
        scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
        d1 = _norm(yp0 / scale, "rms")
        h = 1e-3 * span if d1 == 0 else min(1e-3 * span, 0.01 / d1 * 0.1)
    h = min(h, cfg.max_step, span)
    min_step_floor = max(cfg.min_step, 10 * EPS * max(abs(t0), abs(t1)))
    newton_tol = cfg.newton_tolerance

    D = np.zeros((_MAX_ORDER + 3, n))
    D[0] = y0
    D[1] = yp0 * h
    order = 1
    n_equal_steps = 0
    t, y = t0, y0.copy()
    J = ev.jac(t, y)
    current_jac = True
    LU = None
    n_rejected = 0

    times, states, segments = [t0], [y0.copy()], []
    sampler = _Sampler(t_eval, n)
    if t_eval is not None:
        sampler.push(t0 - 1.0, t0, lambda ts: np.tile(y0, (len(ts), 1)))

    def partial():
        return Trajectory(np.array(times), np.array(states), "bdf", _segments=list(segments) if dense else None)

    while t < t1:
        if len(times) > cfg.max_steps:
            raise IntegrationError("maximum number of steps exceeded", t, partial())
        if h > cfg.max_step:
            _change_D(D, order, cfg.max_step / h)
            h = cfg.max_step
            n_equal_steps = 0
            LU = None

        step_accepted = False
        newton_failures = 0
        while not step_accepted:
            if h < min_step_floor:
                raise IntegrationError("step size underflow", t, partial())
            t_new = t + h
            if t_new > t1 or t1 - t_new < min_step_floor:
                t_new = t1
                _change_D(D, order, (t_new - t) / h)
                n_equal_steps = 0
                LU = None
            h = t_new - t
            y_predict = np.sum(D[: order + 1], axis=0)
            scale = cfg.abs_tol + cfg.rel_tol * np.abs(y_predict)
            psi = np.dot(D[1 : order + 1].T, _GAMMA[1 : order + 1]) / _ALPHA[order]
            c = h / _ALPHA[order]

            converged = False
            while not converged:
                if LU is None:
                    LU = ev.factor(_combine(M, c, J))
                converged, n_iter, y_new, d = _solve_bdf_system(
                    ev, M, t_new, y_predict, c, psi, LU, scale, newton_tol, cfg.newton_max_iter, cfg.error_norm
                )
                if not converged:
                    if current_jac:
                        break
                    J = ev.jac(t_new, y_predict)
                    LU = None
                    current_jac = True

            if not converged:
                newton_failures += 1
                if newton_failures > 60:
                    raise IntegrationError("Newton iteration failed repeatedly", t, partial())
                factor = 0.5
                h *= factor
                _change_D(D, order, factor)
                n_equal_steps = 0
                LU = None
                continue

            safety = 0.9 * (2 * cfg.newton_max_iter + 1) / (2 * cfg.newton_max_iter + n_iter)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            error = _ERROR_CONST[order] * d
            error_norm = _norm(error / scale, cfg.error_norm)
            if error_norm > 1:
                n_rejected += 1
                factor = max(_MIN_FACTOR, safety * error_norm ** (-1 / (order + 1)))
                h *= factor
                _change_D(D, order, factor)
                n_equal_steps = 0
            else:
                step_accepted = True

        n_equal_steps += 1
        t_old = t
        t, y = t_new, y_new
        current_jac = False
        D[order + 2] = d - D[order + 1]
        D[order + 1] = d
        for i in reversed(range(order + 1)):
            D[i] += D[i + 1]

        segment = (t, h, order, D[: order + 1].copy())
        if dense:
            segments.append(segment)
        sampler.push(t_old, t, lambda ts, seg=segment: np.array([_bdf_dense(seg, s) for s in ts]))
        times.append(t)
        states.append(y.copy())

        if n_equal_steps < order + 1:
            continue
        if order > 1:
            error_m_norm = _norm(_ERROR_CONST[order - 1] * D[order] / scale, cfg.error_norm)
        else:
            error_m_norm = np.inf
        if order < max_order:
            error_p_norm = _norm(_ERROR_CONST[order + 1] * D[order + 2] / scale, cfg.error_norm)
        else:
            error_p_norm = np.inf
        error_norms = np.array([error_m_norm, error_norm, error_p_norm])
        with np.errstate(divide="ignore"):
            factors = error_norms ** (-1 / np.arange(order, order + 3))
        delta_order = int(np.argmax(factors)) - 1
        order += delta_order
        factor = min(_BDF_MAX_FACTOR, safety * np.max(factors))
        h *= factor
        _change_D(D, order, factor)
        n_equal_steps = 0
        LU = None

    stats = {"n_steps": len(times) - 1, "n_rejected": n_rejected, "n_rhs": ev.n_rhs, "n_jac": ev.n_jac, "n_lu": ev.n_lu}
    return Trajectory(
        np.array(times),
        np.array(states),
        "bdf",
        stats,
        sample_times=t_eval,
        sample_states=sampler.values,
        _segments=segments if dense else None,
    )


def _solve_bdf_system(ev, M, t_new, y_predict, c, psi, LU, scale, tol, max_iter, norm_kind):
    d = np.zeros_like(y_predict)
    y = y_predict.copy()
    dy_norm_old = None
    converged = False
    k = 0
    for k in range(max_iter):
        f = ev.rhs(t_new, y)
        if not np.all(np.isfinite(f)):
            break
        dy = LU.solve(c * f - _matvec(M, psi + d))
        dy_norm = _norm(dy / scale, norm_kind)
        rate = None if dy_norm_old is None else dy_norm / dy_norm_old
        if rate is not None and (rate >= 1 or rate ** (max_iter - k) / (1 - rate) * dy_norm > tol):
            break
        y += dy
        d += dy
        if dy_norm == 0 or (rate is not None and rate / (1 - rate) * dy_norm < tol):
            converged = True
            break
        dy_norm_old = dy_norm
    return converged, k + 1, y, d
