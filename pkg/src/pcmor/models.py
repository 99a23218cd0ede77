"""Parametric descriptor systems and the two benchmark models.

A system has the form::

    E(p) x'(t, p) = A(p) x + F(x, p) + B(p) u(t),    y = C(p) x,
    x(t0, p) = x0(p).

Matrix-valued coefficients are callables that accept a single parameter
vector ``(q,)`` or a stack ``(k, q)`` and return ``(n_rows, n_cols)`` or
``(k, n_rows, n_cols)``.  Coefficients that are affine in ``p`` should be
given as :class:`AffineMatrix` so Galerkin assembly can be done exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import yaml

from .pcbasis import ParameterBox

__all__ = [
    "AffineMatrix",
    "ParametricSystem",
    "ModelEvaluationError",
    "ConsistencyError",
    "eval_rhs",
    "consistent_init",
    "algebraic_subspaces",
    "scrapie",
    "transistor_amplifier",
    "get_model",
    "load_model",
    "MODELS",
    "SCRAPIE_NOMINAL",
    "AMPLIFIER_CONSTANTS",
]


class ModelEvaluationError(FloatingPointError):
    """The right-hand side produced non-finite values."""


class ConsistencyError(RuntimeError):
    """Newton iteration for consistent initial values failed."""


class AffineMatrix:
    """Matrix function ``M(p) = M0 + sum_j p_j M_j``.

    Parameters
    ----------
    const : array_like, shape (r, c)
    terms : dict, optional
        Maps a zero-based parameter index ``j`` to the matrix ``M_j``.
    q : int
        Number of parameters.
    """

    is_affine = True

    def __init__(self, const, terms: dict | None = None, q: int = 0):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.q = int(q)
        self.terms = {}
        for j, mat in (terms or {}).items():
            j = int(j)
            if not 0 <= j < self.q:
                raise ValueError(f"parameter index {j} out of range for q={q}")
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            if mat.shape != self.const.shape:
                raise ValueError("affine term has wrong shape")
            self.terms[j] = mat
        self.const.setflags(write=False)

    @property
    def shape(self):
        return self.const.shape

    def coefficient_stack(self) -> np.ndarray:
        """Array ``(q, r, c)`` with the linear coefficients (zeros if absent)."""
        out = np.zeros((self.q,) + self.const.shape)
        for j, mat in self.terms.items():
            out[j] = mat
        return out

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        stack = self.coefficient_stack()
        return self.const + np.tensordot(p, stack, axes=(-1, 0))


def _broadcast_matrix(fn, p, shape) -> np.ndarray:
    val = np.asarray(fn(p), dtype=float)
    p = np.asarray(p)
    target = p.shape[:-1] + shape
    return np.broadcast_to(val, target)


@dataclass(frozen=True)
class ParametricSystem:
    """Descriptor system with parameter-dependent coefficients.

    ``F`` and ``jac_F`` are vectorised: ``x`` has shape ``(..., n)`` and
    ``p`` has shape ``(..., q)`` with broadcast-compatible leading
    dimensions.  They return ``(..., n)`` and ``(..., n, n)``.  Overflow
    inside ``F`` yields non-finite values rather than exceptions so that
    integrators can reject the step.
    """

    name: str
    n: int
    n_in: int
    n_out: int
    box: ParameterBox
    E: Callable
    A: Callable
    B: Callable
    C: Callable
    x0: Callable
    u: Callable
    F: Callable | None = None
    jac_F: Callable | None = None
    is_dae: bool = False
    t_span: tuple = (0.0, 1.0)
    output_names: tuple = ()
    metadata: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.box.q

    def E_at(self, p):
        return _broadcast_matrix(self.E, p, (self.n, self.n))

    def A_at(self, p):
        return _broadcast_matrix(self.A, p, (self.n, self.n))

    def B_at(self, p):
        return _broadcast_matrix(self.B, p, (self.n, self.n_in))

    def C_at(self, p):
        return _broadcast_matrix(self.C, p, (self.n_out, self.n))

    def x0_at(self, p):
        return np.broadcast_to(np.asarray(self.x0(p), dtype=float), np.asarray(p).shape[:-1] + (self.n,))

    def input(self, t) -> np.ndarray:
        return np.asarray(self.u(t), dtype=float).reshape(self.n_in)

    def F_at(self, x, p) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.F is None:
            return np.zeros(np.broadcast_shapes(x.shape, np.asarray(p).shape[:-1] + (self.n,)))
        return np.asarray(self.F(x, p), dtype=float)

    def jac_F_at(self, x, p, eps: float = 1e-7) -> np.ndarray:
        """Jacobian of ``F`` w.r.t. ``x``; forward differences if none given."""
        x = np.asarray(x, dtype=float)
        if self.F is None:
            shape = np.broadcast_shapes(x.shape, np.asarray(p).shape[:-1] + (self.n,))
            return np.zeros(shape + (self.n,))
        if self.jac_F is not None:
            return np.asarray(self.jac_F(x, p), dtype=float)
        f0 = self.F_at(x, p)
        jac = np.empty(f0.shape + (self.n,))
        for j in range(self.n):
            step = eps * np.maximum(1.0, np.abs(x[..., j]))
            xp = np.array(np.broadcast_to(x, f0.shape), dtype=float)
            xp[..., j] += step
            jac[..., j] = (self.F_at(xp, p) - f0) / step[..., None]
        return jac


def eval_rhs(sys: ParametricSystem, t: float, x, p) -> np.ndarray:
    """``A(p) x + F(x, p) + B(p) u(t)``.

    Raises
    ------
    ModelEvaluationError
        If the result is not finite (e.g. exponential overflow).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        rhs = (
            np.einsum("...ij,...j->...i", sys.A_at(p), x)
            + sys.F_at(x, p)
            + sys.B_at(p) @ sys.input(t)
        )
    if not np.all(np.isfinite(rhs)):
        raise ModelEvaluationError(f"{sys.name}: non-finite right-hand side at t={t}, x={x}, p={p}")
    return rhs


def algebraic_subspaces(E: np.ndarray, rtol: float = 1e-10):
    """Orthonormal bases ``(W, Z)`` of the left and right null spaces of ``E``."""
    U, s, Vt = np.linalg.svd(E)
    rank = int(np.sum(s > rtol * max(s[0], np.finfo(float).tiny)))
    return U[:, rank:], Vt[rank:].T


def consistent_init(
    sys: ParametricSystem,
    p,
    t0: float | None = None,
    tol: float = 1e-13,
    max_iter: int = 50,
) -> np.ndarray:
    """Initial values satisfying the algebraic constraints of the DAE.

    The differential part ``E(p) x`` of the stored initial guess ``x0(p)``
    is kept fixed and the null-space components are corrected by a damped
    Newton iteration on ``W^T (A x + F(x, p) + B u(t0)) = 0``.  For ODE
    systems ``x0(p)`` is returned unchanged.

    Raises
    ------
    ConsistencyError
        If Newton fails to reach ``tol`` within ``max_iter`` iterations.
    """
    p = np.asarray(p, dtype=float)
    x = np.array(sys.x0_at(p), dtype=float)
    if not sys.is_dae:
        return x
    t0 = sys.t_span[0] if t0 is None else t0
    E = sys.E_at(p)
    W, Z = algebraic_subspaces(E)
    if W.shape[1] == 0:
        return x
    A, B, u = sys.A_at(p), sys.B_at(p), sys.input(t0)

    def residual(xv):
        with np.errstate(over="ignore", invalid="ignore"):
            return W.T @ (A @ xv + sys.F_at(xv, p) + B @ u)

    res = residual(x)
    scale = max(1.0, np.abs(W.T @ (B @ u)).max(initial=0.0))
    for _ in range(max_iter):
        if np.all(np.isfinite(res)) and np.linalg.norm(res) <= tol * scale:
            return x
        J = W.T @ (A + sys.jac_F_at(x, p)) @ Z
        dz = np.linalg.solve(J, -res)
        lam = 1.0
        norm0 = np.linalg.norm(res)
        while lam > 1e-6:
            trial = x + lam * (Z @ dz)
            new = residual(trial)
            if np.all(np.isfinite(new)) and np.linalg.norm(new) < (1 - 1e-4 * lam) * norm0:
                break
            lam *= 0.5
        x, res = trial, new
    if np.all(np.isfinite(res)) and np.linalg.norm(res) <= tol * scale:
        return x
    raise ConsistencyError(f"{sys.name}: no consistent initial value at p={p} (residual {np.linalg.norm(res):.3e})")


# --- scrapie model ---------------------------------------------------------

SCRAPIE_NOMINAL = np.array([1e-5, 0.1, 1.0, 1e-4, 0.1])


def _scrapie_F(x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    p3, p5 = p[..., 2], p[..., 4]
    r1 = p5 * x1 * x3
    r2 = p3 * x2 * x2
    return np.stack([-r1, r1 - 2.0 * r2, r2], axis=-1)


def _scrapie_jac(x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    p3, p5 = p[..., 2], p[..., 4]
    shape = np.broadcast_shapes(x1.shape, p3.shape)
    J = np.zeros(shape + (3, 3))
    J[..., 0, 0] = -p5 * x3
    J[..., 0, 2] = -p5 * x1
    J[..., 1, 0] = p5 * x3
    J[..., 1, 1] = -4.0 * p3 * x2
    J[..., 1, 2] = p5 * x1
    J[..., 2, 1] = 2.0 * p3 * x2
    return J


def scrapie(variation: float = 0.1, nominal=None, t_end: float = 500.0) -> ParametricSystem:
    """Scrapie reaction-kinetics ODE with five uniform random rate constants.

    Linear terms (rates ``p1, p2, p4``) form ``A(p)``; the bilinear
    ``p5 x1 x3`` and quadratic ``p3 x2^2`` reactions form ``F``.  All
    three concentrations are outputs.
    """
    nominal = SCRAPIE_NOMINAL if nominal is None else np.asarray(nominal, dtype=float)
    box = ParameterBox.around(nominal, variation)
    A = AffineMatrix(
        np.zeros((3, 3)),
        {
            0: [[-1, 0, 0], [1, 0, 0], [0, 0, 0]],
            1: [[0, 1, 0], [0, -1, 0], [0, 0, 0]],
            3: [[0, 0, 0], [0, 0, 2], [0, 0, -1]],
        },
        q=5,
    )
    x0 = np.array([1.0, 0.0, 0.1])
    return ParametricSystem(
        name="scrapie",
        n=3,
        n_in=1,
        n_out=3,
        box=box,
        E=AffineMatrix(np.eye(3), q=5),
        A=A,
        B=AffineMatrix(np.zeros((3, 1)), q=5),
        C=AffineMatrix(np.eye(3), q=5),
        x0=lambda p: x0,
        u=lambda t: np.zeros(1),
        F=_scrapie_F,
        jac_F=_scrapie_jac,
        is_dae=False,
        t_span=(0.0, float(t_end)),
        output_names=("x1", "x2", "x3"),
        metadata={"variation": variation},
    )


# --- transistor amplifier --------------------------------------------------

# C1, C2, C3, R0, R1, R2, R3, R4, R5, Ub
AMPLIFIER_CONSTANTS = {
    "C1": 1e-6,
    "C2": 2e-6,
    "C3": 3e-6,
    "R0": 1000.0,
    "R1": 9000.0,
    "R2": 9000.0,
    "R3": 9000.0,
    "R4": 9000.0,
    "R5": 9000.0,
    "Ub": 6.0,
    "alpha": 0.99,
    "beta": 1e-6,
    "UF": 0.026,
    "amplitude": 0.4,
    "period": 0.01,
}
_AMP_PARAMS = ("C1", "C2", "C3", "R0", "R1", "R2", "R3", "R4", "R5", "Ub")


def transistor_amplifier(variation: float = 0.01, periods: float = 1.0, constants: dict | None = None) -> ParametricSystem:
    """One-transistor amplifier, an index-1 DAE in the five node voltages.

    Uncertain parameters (in order): the capacitances ``C1..C3``, the
    resistances ``R0..R5`` and the operating voltage ``Ub``.  The operating
    voltage sits in ``B`` with a constant second input ``1``; the first
    input is ``0.4 sin(2 pi t / T)``.  The output is the fifth node voltage.
    Constants follow Hairer & Wanner, *Solving ODEs II*, one-transistor
    amplifier: ``alpha = 0.99``, ``beta = 1e-6``, ``U_F = 0.026``.
    """
    c = dict(AMPLIFIER_CONSTANTS)
    c.update(constants or {})
    nominal = np.array([c[k] for k in _AMP_PARAMS])
    box = ParameterBox.around(nominal, variation)
    alpha, beta, UF = c["alpha"], c["beta"], c["UF"]
    amp, period = c["amplitude"], c["period"]

    E_terms = {
        0: [[-1, 1, 0, 0, 0], [1, -1, 0, 0, 0], [0] * 5, [0] * 5, [0] * 5],
        1: [[0] * 5, [0] * 5, [0, 0, -1, 0, 0], [0] * 5, [0] * 5],
        2: [[0] * 5, [0] * 5, [0] * 5, [0, 0, 0, -1, 1], [0, 0, 0, 1, -1]],
    }
    E = AffineMatrix(np.zeros((5, 5)), E_terms, q=10)

    def A(p):
        p = np.asarray(p, dtype=float)
        R0, R1, R2, R3, R4, R5 = (p[..., j] for j in range(3, 9))
        out = np.zeros(p.shape[:-1] + (5, 5))
        out[..., 0, 0] = 1.0 / R0
        out[..., 1, 1] = 1.0 / R1 + 1.0 / R2
        out[..., 2, 2] = 1.0 / R3
        out[..., 3, 3] = 1.0 / R4
        out[..., 4, 4] = 1.0 / R5
        return out

    def B(p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (5, 2))
        out[..., 0, 0] = -1.0 / p[..., 3]
        out[..., 1, 1] = -p[..., 9] / p[..., 5]
        out[..., 3, 1] = -p[..., 9] / p[..., 7]
        return out

    def g(U):
        with np.errstate(over="ignore"):
            return beta * (np.exp(U / UF) - 1.0)

    def dg(U):
        with np.errstate(over="ignore"):
            return beta / UF * np.exp(U / UF)

    def F(x, p):
        x = np.asarray(x, dtype=float)
        gv = g(x[..., 1] - x[..., 2])
        z = np.zeros_like(gv)
        return np.stack([z, (1.0 - alpha) * gv, -gv, alpha * gv, z], axis=-1)

    def jac_F(x, p):
        x = np.asarray(x, dtype=float)
        d = dg(x[..., 1] - x[..., 2])
        J = np.zeros(d.shape + (5, 5))
        for row, fac in ((1, 1.0 - alpha), (2, -1.0), (3, alpha)):
            J[..., row, 1] = fac * d
            J[..., row, 2] = -fac * d
        return J

    def x0(p):
        p = np.asarray(p, dtype=float)
        R1, R2, Ub = p[..., 4], p[..., 5], p[..., 9]
        base = Ub * R1 / (R1 + R2)
        z = np.zeros_like(base)
        return np.stack([z, base, base, Ub, z], axis=-1)

    def u(t):
        return np.array([amp * np.sin(2.0 * np.pi * t / period), 1.0])

    return ParametricSystem(
        name="transistor_amplifier",
        n=5,
        n_in=2,
        n_out=1,
        box=box,
        E=E,
        A=A,
        B=B,
        C=AffineMatrix([[0, 0, 0, 0, 1]], q=10),
        x0=x0,
        u=u,
        F=F,
        jac_F=jac_F,
        is_dae=True,
        t_span=(0.0, float(periods) * period),
        output_names=("U_out",),
        metadata={"variation": variation, "parameters": _AMP_PARAMS, "period": period},
    )


MODELS = {
    "scrapie": scrapie,
    "transistor_amplifier": transistor_amplifier,
}


def get_model(name: str, **overrides) -> ParametricSystem:
    """Instantiate a registered model, or load one from a YAML file path."""
    if name in MODELS:
        return MODELS[name](**overrides)
    if name.endswith((".yaml", ".yml")):
        return load_model(name, **overrides)
    raise KeyError(f"unknown model {name!r}; known: {sorted(MODELS)}")


# --- declarative models ----------------------------------------------------


def _affine_from_spec(spec, shape, q) -> AffineMatrix:
    if spec is None:
        return AffineMatrix(np.zeros(shape), q=q)
    if isinstance(spec, dict):
        const = spec.get("const", np.zeros(shape))
        terms = {int(k) - 1: v for k, v in (spec.get("terms") or {}).items()}
        mat = AffineMatrix(const, terms, q=q)
    else:
        mat = AffineMatrix(spec, q=q)
    if mat.shape != shape:
        raise ValueError(f"matrix has shape {mat.shape}, expected {shape}")
    return mat


def _polynomial_terms(terms, n, q):
    rows, coefs, params, powers = [], [], [], []
    for t in terms:
        rows.append(int(t["row"]) - 1)
        coefs.append(float(t["coef"]))
        params.append(-1 if t.get("param") is None else int(t["param"]) - 1)
        pw = np.asarray(t["powers"], dtype=int)
        if pw.shape != (n,) or np.any(pw < 0):
            raise ValueError("polynomial term needs n nonnegative powers")
        powers.append(pw)
    rows, coefs, params = np.array(rows), np.array(coefs), np.array(params)
    powers = np.array(powers).reshape(len(rows), n)
    if np.any((rows < 0) | (rows >= n)) or np.any(params >= q):
        raise ValueError("polynomial term index out of range")

    def term_values(x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        mono = np.prod(x[..., None, :] ** powers, axis=-1)
        pf = np.where(params >= 0, p[..., np.maximum(params, 0)], 1.0)
        return coefs * pf * mono

    def F(x, p):
        vals = term_values(x, p)
        out = np.zeros(vals.shape[:-1] + (n,))
        for j, r in enumerate(rows):
            out[..., r] += vals[..., j]
        return out

    def jac(x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        pf = np.where(params >= 0, p[..., np.maximum(params, 0)], 1.0)
        shape = np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
        J = np.zeros(shape + (n, n))
        for j, r in enumerate(rows):
            for c in range(n):
                if powers[j, c] == 0:
                    continue
                pw = powers[j].copy()
                pw[c] -= 1
                d = powers[j, c] * np.prod(x ** pw, axis=-1)
                J[..., r, c] += coefs[j] * pf[..., j] * d
        return J

    return F, jac


def load_model(path, **overrides) -> ParametricSystem:
    """Build a :class:`ParametricSystem` from a YAML description.

    Recognised keys: ``name``, ``n``, ``n_in``, ``n_out``, ``parameters``
    (``nominal`` with ``variation``, or ``lower``/``upper``), ``E``, ``A``,
    ``B``, ``C`` (dense lists or ``{const, terms}`` with one-based
    parameter keys), ``x0``, ``input`` (``zero``/``constant``/``sine``),
    ``F`` (``none``, ``builtin`` or ``polynomial`` term list), ``t_span``
    and ``is_dae``.
    """
    with open(path) as fh:
        spec = yaml.safe_load(fh)
    spec.update(overrides)
    n = int(spec["n"])
    n_in = int(spec.get("n_in", 1))
    n_out = int(spec.get("n_out", 1))
    par = spec["parameters"]
    if "nominal" in par and "variation" in par:
        box = ParameterBox.around(par["nominal"], float(par["variation"]))
    else:
        box = ParameterBox(par["lower"], par["upper"], par.get("nominal"))
    q = box.q
    E = _affine_from_spec(spec.get("E", np.eye(n).tolist()), (n, n), q)
    A = _affine_from_spec(spec.get("A"), (n, n), q)
    B = _affine_from_spec(spec.get("B"), (n, n_in), q)
    C = _affine_from_spec(spec.get("C"), (n_out, n), q)
    x0v = np.asarray(spec.get("x0", np.zeros(n)), dtype=float)

    inp = spec.get("input", {"kind": "zero"})
    kind = inp.get("kind", "zero")
    if kind == "zero":
        u = lambda t: np.zeros(n_in)  # noqa: E731
    elif kind == "constant":
        val = np.asarray(inp["value"], dtype=float).reshape(n_in)
        u = lambda t: val  # noqa: E731
    elif kind == "sine":
        a, per = float(inp["amplitude"]), float(inp["period"])
        u = lambda t: np.full(n_in, a * np.sin(2 * np.pi * t / per))  # noqa: E731
    else:
        raise ValueError(f"unknown input kind {kind!r}")

    fspec = spec.get("F", {"kind": "none"})
    fkind = fspec.get("kind", "none")
    if fkind == "none":
        F = jac = None
    elif fkind == "polynomial":
        F, jac = _polynomial_terms(fspec["terms"], n, q)
    elif fkind == "builtin":
        builtins = {"scrapie": (_scrapie_F, _scrapie_jac)}
        F, jac = builtins[fspec["name"]]
    else:
        raise ValueError(f"unknown nonlinearity kind {fkind!r}")

    is_dae = bool(spec.get("is_dae", np.linalg.matrix_rank(E(box.nominal)) < n))
    return ParametricSystem(
        name=str(spec.get("name", "custom")),
        n=n,
        n_in=n_in,
        n_out=n_out,
        box=box,
        E=E,
        A=A,
        B=B,
        C=C,
        x0=lambda p: x0v,
        u=u,
        F=F,
        jac_F=jac,
        is_dae=is_dae,
        t_span=tuple(float(v) for v in spec.get("t_span", (0.0, 1.0))),
        output_names=tuple(spec.get("output_names", [f"y{i + 1}" for i in range(n_out)])),
    )


def is_index_one(sys: ParametricSystem, p, x=None, t: float | None = None) -> bool:
    """Check nonsingularity of the algebraic block ``W^T (A + J_F) Z``."""
    p = np.asarray(p, dtype=float)
    x = consistent_init(sys, p) if x is None else np.asarray(x, dtype=float)
    W, Z = algebraic_subspaces(sys.E_at(p))
    if W.shape[1] == 0:
        return True
    J = W.T @ (sys.A_at(p) + sys.jac_F_at(x, p)) @ Z
    s = sla.svdvals(J)
    return bool(s[-1] > 1e-12 * s[0])
