"""Error measures, statistics and the a-priori bound for best approximations.

Because the basis is orthonormal, the ``L2(Pi, rho)`` distance of two
expansions is the Euclidean distance of their ``Phi``-coefficients, and
mean and standard deviation follow from the coefficients directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .lowdim import Representation
from .mor import PodResult

__all__ = [
    "ErrorReport",
    "BoundReport",
    "l2_error",
    "truncation_error",
    "statistics",
    "spectral_norm",
    "theorem_bound",
    "write_error_table",
    "write_statistics",
    "plot_singular_values",
    "plot_error_curves",
    "plot_errors_in_time",
    "plot_statistics",
]


@dataclass(frozen=True)
class ErrorReport:
    """Pointwise-in-time ``L2(Pi, rho)`` errors of one representation."""

    times: np.ndarray
    l2_errors: np.ndarray
    r: int | None = None
    kind: str = "mor"

    @property
    def max_error(self) -> float:
        return float(np.max(self.l2_errors))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "l2_error"])
            for t, e in zip(self.times, self.l2_errors):
                writer.writerow([repr(float(t)), repr(float(e))])


@dataclass(frozen=True)
class BoundReport:
    """Computable version of the best-approximation error bound.

    ``deriv_inf`` is a finite-difference estimate of the maximal time
    derivative of the full-order state, so ``bound_value`` is an estimate.
    """

    r: int
    sigma_next: float
    c_norm: float
    dt_max: float
    deriv_inf: float
    state_dim: int

    @property
    def bound_value(self) -> float:
        return self.c_norm * (self.sigma_next + math.sqrt(self.state_dim) * self.dt_max * self.deriv_inf)

    def as_row(self) -> dict:
        return {
            "r": self.r,
            "sigma_next": self.sigma_next,
            "c_norm": self.c_norm,
            "dt_max": self.dt_max,
            "deriv_inf_estimate": self.deriv_inf,
            "bound_estimate": self.bound_value,
        }


def _phi(rep) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(rep, Representation):
        return rep.times, rep.phi_coefficients()
    times, coeffs = rep
    return np.asarray(times, dtype=float), np.atleast_2d(coeffs)


def l2_error(rep_a, rep_b, r: int | None = None, kind: str = "mor") -> ErrorReport:
    """``||y_a(t) - y_b(t)||_{L2}`` as the 2-norm of the coefficient difference.

    Both inputs must live on the same time grid; coefficient vectors of
    different length are padded with zeros (a truncated expansion).

    Raises
    ------
    ValueError
        If the time grids differ.
    """
    ta, ca = _phi(rep_a)
    tb, cb = _phi(rep_b)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=1e-12, atol=0.0):
        raise ValueError("representations are given on different time grids")
    width = max(ca.shape[1], cb.shape[1])
    ca = np.pad(ca, ((0, 0), (0, width - ca.shape[1])))
    cb = np.pad(cb, ((0, 0), (0, width - cb.shape[1])))
    return ErrorReport(ta, np.linalg.norm(ca - cb, axis=1), r, kind)


def truncation_error(rep, m_prime: int) -> np.ndarray:
    """Error of dropping all but the first ``m_prime`` coefficients."""
    _, c = _phi(rep)
    return np.linalg.norm(c[:, m_prime:], axis=1)


def statistics(rep) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``w_1(t)`` and standard deviation ``sqrt(sum_{i>=2} w_i(t)^2)``."""
    _, c = _phi(rep)
    return c[:, 0].copy(), np.linalg.norm(c[:, 1:], axis=1)


def spectral_norm(C) -> float:
    """Largest singular value of ``C``, from the smaller Gram matrix."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    G = C @ C.T if C.shape[0] <= C.shape[1] else C.T @ C
    return float(math.sqrt(max(np.linalg.eigvalsh(G)[-1], 0.0)))


def theorem_bound(pod_result: PodResult, C_hat, snapshots, times, r: int) -> BoundReport:
    """``||C_hat||_2 (sigma_{r+1} + sqrt(N) dt max ||v'||_inf)`` with an estimated derivative.

    The derivative is approximated by second-order differences of the
    snapshots (central inside, one-sided at both ends).

    Raises
    ------
    ValueError
        Unless there are more snapshots than ``r``.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    times = np.asarray(times, dtype=float)
    if snapshots.shape[1] != times.size:
        raise ValueError("one snapshot per time point required")
    if snapshots.shape[1] <= r:
        raise ValueError("the bound needs more snapshots than the reduced dimension")
    s = pod_result.singular_values
    sigma_next = float(s[r]) if r < s.size else 0.0
    if times.size >= 3:
        deriv = np.gradient(snapshots, times, axis=1, edge_order=2)
    else:
        deriv = np.diff(snapshots, axis=1) / np.diff(times)
    return BoundReport(
        r=int(r),
        sigma_next=sigma_next,
        c_norm=spectral_norm(C_hat),
        dt_max=float(np.max(np.diff(times))),
        deriv_inf=float(np.max(np.abs(deriv))),
        state_dim=snapshots.shape[0],
    )


def write_error_table(path, reports_by_r: dict) -> None:
    """One row per ``r``: maximal MOR and best-approximation errors.

    ``reports_by_r`` maps ``r`` to a dict with optional keys ``'mor'``,
    ``'best'`` (ErrorReports), ``'bound'`` (BoundReport) and ``'status'``.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "status", "max_error_mor", "max_error_best", "bound_estimate"])
        for r in sorted(reports_by_r):
            entry = reports_by_r[r]
            mor = entry.get("mor")
            best = entry.get("best")
            bound = entry.get("bound")
            writer.writerow(
                [
                    r,
                    entry.get("status", "ok"),
                    "" if mor is None else repr(mor.max_error),
                    "" if best is None else repr(best.max_error),
                    "" if bound is None else repr(bound.bound_value),
                ]
            )


def write_statistics(path, times, means, stds, names) -> None:
    """Time column then ``mean_<name>`` and ``std_<name>`` columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"]
        for name in names:
            header += [f"mean_{name}", f"std_{name}"]
        writer.writerow(header)
        for i, t in enumerate(times):
            row = [repr(float(t))]
            for mu, sd in zip(means, stds):
                row += [repr(float(mu[i])), repr(float(sd[i]))]
            writer.writerow(row)


# --- plotting (optional dependency) -----------------------------------------


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("plotting needs matplotlib (pip install 'pcmor[plot]')") from exc
    return plt


def plot_singular_values(path, singular_values, title: str = "singular values") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    s = np.asarray(singular_values)
    ax.semilogy(np.arange(1, s.size + 1), np.maximum(s, np.finfo(float).tiny), "o", ms=3)
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_error_curves(path, curves: dict, title: str = "maximal L2 error") -> None:
    """``curves`` maps a label to ``(r_values, max_errors)``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (rs, errs) in curves.items():
        ax.semilogy(rs, errs, "o-", ms=3, label=label)
    ax.set_xlabel("reduced dimension r")
    ax.set_ylabel("max L2 error")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_errors_in_time(path, reports, title: str = "L2 error") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for rep in reports:
        ax.semilogy(rep.times, np.maximum(rep.l2_errors, 1e-300), label=f"{rep.kind} r={rep.r}")
    ax.set_xlabel("t")
    ax.set_ylabel("L2 error")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_statistics(path, times, means, stds, names, title: str = "") -> None:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for mu, sd, name in zip(means, stds, names):
        ax1.plot(times, mu, label=name)
        ax2.plot(times, sd, label=name)
    ax1.set_title("expected value")
    ax2.set_title("standard deviation")
    for ax in (ax1, ax2):
        ax.set_xlabel("t")
        ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
