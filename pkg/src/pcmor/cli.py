"""Batch pipelines driven by YAML run configurations.

A run assembles the full-order model (Galerkin or collocation), computes
snapshots and their POD, integrates the full-order model and reduced
models of several dimensions, and writes error tables, statistics,
bounds, plots and a manifest into an artifact directory.

Exit codes of the command line front-end::

    0  success
    1  success with warnings (e.g. reduced models that failed to integrate)
    2  invalid configuration
    3  numerical failure of a pipeline stage
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    l2_error,
    statistics,
    theorem_bound,
    write_error_table,
    write_statistics,
)
from .collocation import assemble_collocation, solve_coupled, solve_nodes
from .galerkin import assemble_galerkin
from .lowdim import best_approximation, mor_representation, phi_representation
from .models import get_model
from .mor import pod, reduce
from .pcbasis import BasisSpec
from .quadrature import GROWTH_RULES, sparse_grid, tensor_rule
from .timeint import IntegratorConfig, integrate

__all__ = [
    "ConfigError",
    "PipelineError",
    "RunConfig",
    "load_config",
    "bundled_configs",
    "run_pipeline",
    "reuse_rom",
    "main",
    "EXIT_OK",
    "EXIT_WARNINGS",
    "EXIT_CONFIG",
    "EXIT_NUMERIC",
]

EXIT_OK, EXIT_WARNINGS, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "PCMOR_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid run configuration."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException, directory=None):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.directory = directory


# --- configuration -----------------------------------------------------------


@dataclass
class ModelSection:
    name: str = "scrapie"
    overrides: dict = field(default_factory=dict)


@dataclass
class UQSection:
    degree: int = 3


@dataclass
class QuadratureSection:
    kind: str = "tensor"
    per_axis: int = 3
    level: int = 2
    growth: str = "linear"


@dataclass
class IntegratorSection:
    method: str = "trapezoidal"
    snapshot_tolerances: list = field(default_factory=lambda: [1e-4, 1e-6])
    tolerances: list = field(default_factory=lambda: [1e-3, 1e-6])
    t_end: float | None = None
    grid_points: int = 200
    max_order: int = 5


@dataclass
class MorSection:
    r: list = field(default_factory=lambda: list(range(2, 31, 2)))
    snapshots: str = "steps"
    snapshot_points: int = 200
    reuse_multiplier: float = 1.0
    workers: int = 1
    cache_dir: str | None = None


@dataclass
class OutputsSection:
    directory: str = "pcmor-output"
    plots: bool = True
    save_snapshots: bool = True


_SECTIONS = {
    "model": ModelSection,
    "uq": UQSection,
    "quadrature": QuadratureSection,
    "integrator": IntegratorSection,
    "mor": MorSection,
    "outputs": OutputsSection,
}


def _parse_section(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    return cls(**data)


def _parse_r(value):
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "step"}
        if extra:
            raise ConfigError(f"unknown key(s) in 'mor.r': {', '.join(sorted(extra))}")
        return list(range(int(value["start"]), int(value["stop"]) + 1, int(value.get("step", 1))))
    if isinstance(value, int):
        return [value]
    return [int(v) for v in value]


@dataclass
class RunConfig:
    """Validated run configuration (see the bundled YAML files)."""

    name: str = "run"
    method: str = "galerkin"
    model: ModelSection = field(default_factory=ModelSection)
    uq: UQSection = field(default_factory=UQSection)
    quadrature: QuadratureSection = field(default_factory=QuadratureSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    mor: MorSection = field(default_factory=MorSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        allowed = {"name", "method"} | set(_SECTIONS)
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        try:
            kwargs = {key: _parse_section(cls_, data.get(key), key) for key, cls_ in _SECTIONS.items()}
            kwargs["mor"].r = _parse_r(kwargs["mor"].r)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(name=str(data.get("name", "run")), method=str(data.get("method", "galerkin")), **kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.method in ("galerkin", "collocation"), "method must be 'galerkin' or 'collocation'")
        need(isinstance(self.uq.degree, int) and self.uq.degree >= 0, "uq.degree must be a nonnegative integer")
        q = self.quadrature
        need(q.kind in ("tensor", "sparse"), "quadrature.kind must be 'tensor' or 'sparse'")
        need(isinstance(q.per_axis, int) and q.per_axis >= 1, "quadrature.per_axis must be a positive integer")
        need(isinstance(q.level, int) and q.level >= 1, "quadrature.level must be a positive integer")
        need(q.growth in GROWTH_RULES, f"quadrature.growth must be one of {sorted(GROWTH_RULES)}")
        it = self.integrator
        need(it.method in ("trapezoidal", "bdf"), "integrator.method must be 'trapezoidal' or 'bdf'")
        for key in ("snapshot_tolerances", "tolerances"):
            tol = getattr(it, key)
            need(
                isinstance(tol, (list, tuple)) and len(tol) == 2 and all(float(v) > 0 for v in tol),
                f"integrator.{key} must be [rel_tol, abs_tol] with positive entries",
            )
            setattr(it, key, [float(v) for v in tol])
        need(it.t_end is None or float(it.t_end) > 0, "integrator.t_end must be positive")
        need(isinstance(it.grid_points, int) and it.grid_points >= 2, "integrator.grid_points must be >= 2")
        need(1 <= it.max_order <= 5, "integrator.max_order must be in 1..5")
        m = self.mor
        need(len(m.r) > 0 and all(v >= 1 for v in m.r), "mor.r must contain positive integers")
        need(m.snapshots in ("steps", "grid"), "mor.snapshots must be 'steps' or 'grid'")
        need(isinstance(m.snapshot_points, int) and m.snapshot_points >= 2, "mor.snapshot_points must be >= 2")
        need(float(m.reuse_multiplier) >= 1.0, "mor.reuse_multiplier must be >= 1")
        need(isinstance(m.workers, int) and m.workers >= 1, "mor.workers must be a positive integer")
        need(isinstance(self.model.overrides, dict), "model.overrides must be a mapping")


def bundled_configs() -> dict:
    """Names and paths of the configurations shipped with the package."""
    root = resources.files("pcmor") / "configs"
    return {p.name.rsplit(".", 1)[0]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def load_config(source) -> RunConfig:
    """Parse a YAML file, a bundled configuration name or a mapping."""
    if isinstance(source, dict):
        return RunConfig.from_dict(source)
    path = Path(source)
    if not path.exists():
        bundled = bundled_configs()
        if str(source) not in bundled:
            raise ConfigError(f"no config file {source!r} and no bundled config of that name ({sorted(bundled)})")
        path = bundled[str(source)]
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(data)


# --- pipeline ----------------------------------------------------------------


def _output_dir(cfg: RunConfig, output_root=None) -> Path:
    out = Path(cfg.outputs.directory)
    root = output_root if output_root is not None else os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _integrator(cfg: RunConfig, tolerances) -> IntegratorConfig:
    it = cfg.integrator
    return IntegratorConfig(method=it.method, rel_tol=tolerances[0], abs_tol=tolerances[1], max_order=it.max_order)


def build_system(cfg: RunConfig):
    """Model, basis, quadrature rule and assembled full-order model."""
    try:
        system = get_model(cfg.model.name, **cfg.model.overrides)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    if cfg.integrator.t_end is not None:
        system = dataclasses.replace(system, t_span=(system.t_span[0], float(cfg.integrator.t_end)))
    basis = BasisSpec.total_degree(system.box, cfg.uq.degree)
    qc = cfg.quadrature
    if qc.kind == "tensor":
        rule = tensor_rule(system.box, qc.per_axis)
    else:
        rule = sparse_grid(system.box, qc.level, qc.growth)
    if cfg.method == "galerkin":
        fom = assemble_galerkin(system, basis, rule)
    else:
        fom = assemble_collocation(system, basis, rule)
    return system, basis, rule, fom


def reuse_rom(fom, rom, integrator: IntegratorConfig, t_span, times, fom_outputs=None):
    """Integrate FOM and ROM on ``t_span`` and compare on ``times``.

    Returns a dict mapping each output index to ``(mor_report, best_report)``
    plus the raw coefficient arrays.  The horizon may exceed the snapshot
    interval; then the reduced model extrapolates.
    """
    times = np.asarray(times, dtype=float)
    if fom_outputs is None:
        traj = integrate(fom, t_span, fom.x0, integrator, t_eval=times)
        fom_outputs = fom.outputs(traj.sample_states)
    rtraj = integrate(rom, t_span, rom.v0, integrator, t_eval=times)
    reports = {}
    for o in range(fom.n_out):
        ref = phi_representation(times, fom_outputs[:, o])
        mor_rep = mor_representation(times, rtraj.sample_states, rom.C_bar[o])
        best = best_approximation(times, fom_outputs[:, o], rom.C_bar[o], orthonormalize=True)
        reports[o] = (
            l2_error(ref, mor_rep, r=rom.r, kind="mor"),
            l2_error(ref, best, r=rom.r, kind="best_approx"),
        )
    return reports, rtraj


class _Stages:
    def __init__(self):
        self.records = []

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except ConfigError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded and re-raised typed
            self.records.append({"stage": name, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
            raise PipelineError(name, exc) from exc
        self.records.append({"stage": name, "status": "ok", "seconds": round(time.perf_counter() - start, 3)})
        return out


def _hash_outputs(directory: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(directory.rglob("*.csv")):
        h.update(str(path.relative_to(directory)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _versions() -> dict:
    import scipy

    return {"pcmor": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def run_pipeline(cfg: RunConfig, output_root=None, r_values=None, reuse_multiplier=None) -> dict:
    """Run the full pipeline and return the manifest (also written to disk).

    Parameters
    ----------
    r_values : list of int, optional
        Override ``mor.r``.
    reuse_multiplier : float, optional
        Override ``mor.reuse_multiplier``: the comparison horizon is this
        multiple of the snapshot interval.

    Raises
    ------
    PipelineError
        When a stage fails; the manifest written so far names the stage.
    """
    out = _output_dir(cfg, output_root)
    out.mkdir(parents=True, exist_ok=True)
    (out / "errors").mkdir(exist_ok=True)
    r_values = list(cfg.mor.r if r_values is None else r_values)
    mult = float(cfg.mor.reuse_multiplier if reuse_multiplier is None else reuse_multiplier)
    stages = _Stages()
    manifest = {
        "name": cfg.name,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "versions": _versions(),
        "stages": stages.records,
        "rom_failures": {},
        "warnings": [],
    }

    def dump():
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))

    try:
        system, basis, rule, fom = stages.run("assemble", build_system, cfg)
        (out / "config.yaml").write_text(cfg.to_yaml())
        summary = fom.summary() | {"k": rule.k, "rule": rule.label, "t_span": list(system.t_span)}
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        rule.to_csv(out / "quadrature.csv")

        t0, t1 = system.t_span
        snap_cfg = _integrator(cfg, cfg.integrator.snapshot_tolerances)
        grid_snap = np.linspace(t0, t1, cfg.mor.snapshot_points)

        def snapshots():
            if cfg.method == "collocation":
                states = solve_nodes(fom, snap_cfg, grid_snap, workers=cfg.mor.workers, cache_dir=cfg.mor.cache_dir)
                return grid_snap, states
            if cfg.mor.snapshots == "grid":
                traj = integrate(fom, system.t_span, fom.x0, snap_cfg, t_eval=grid_snap)
                return grid_snap, traj.sample_states
            traj = integrate(fom, system.t_span, fom.x0, snap_cfg, dense=False)
            return traj.times, traj.states

        snap_times, snap_states = stages.run("snapshots", snapshots)
        summary["snapshots"] = int(snap_times.size)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        if cfg.outputs.save_snapshots:
            np.savez_compressed(out / "snapshots.npz", times=snap_times, states=snap_states)
        pres = stages.run("pod", pod, snap_states.T)
        pres.to_csv(out / "singular_values.csv")

        t_end = t0 + mult * (t1 - t0)
        times = np.linspace(t0, t_end, cfg.integrator.grid_points)
        run_cfg = _integrator(cfg, cfg.integrator.tolerances)

        def fom_run():
            if cfg.method == "collocation":
                return solve_coupled(fom, run_cfg, t_eval=times, t_span=(t0, t_end))
            return integrate(fom, (t0, t_end), fom.x0, run_cfg, t_eval=times)

        fom_traj = stages.run("fom", fom_run)
        w_hat = fom.outputs(fom_traj.sample_states)  # (T, n_out, m)
        names = list(system.output_names) or [f"y{o + 1}" for o in range(fom.n_out)]
        means, stds = zip(*(statistics((times, w_hat[:, o])) for o in range(fom.n_out)))
        write_statistics(out / "statistics.csv", times, means, stds, names)
        summary["fom_steps"] = fom_traj.n_steps
        (out / "summary.json").write_text(json.dumps(summary, indent=2))

        def sweep():
            tables = {o: {} for o in range(fom.n_out)}
            bounds = []
            for r in r_values:
                if r > pres.available:
                    manifest["warnings"].append(f"r={r} exceeds the {pres.available} POD vectors; skipped")
                    continue
                rom = reduce(fom, pres, r)
                try:
                    reports, rtraj = reuse_rom(fom, rom, run_cfg, (t0, t_end), times, fom_outputs=w_hat)
                    status = "ok"
                except Exception as exc:  # noqa: BLE001 - ROM failures are data
                    manifest["rom_failures"][str(r)] = f"{type(exc).__name__}: {exc}"
                    status = "failed"
                    reports = None
                for o in range(fom.n_out):
                    entry = {"status": status}
                    best = best_approximation(times, w_hat[:, o], rom.C_bar[o], orthonormalize=True)
                    entry["best"] = l2_error(phi_representation(times, w_hat[:, o]), best, r=r, kind="best_approx")
                    if reports is not None:
                        entry["mor"] = reports[o][0]
                        entry["mor"].to_csv(out / "errors" / f"{names[o]}_r{r}_mor.csv")
                    entry["best"].to_csv(out / "errors" / f"{names[o]}_r{r}_best.csv")
                    if snap_times.size > r:
                        entry["bound"] = theorem_bound(pres, fom.C_hat[o], snap_states.T, snap_times, r)
                        bounds.append({"output": names[o]} | entry["bound"].as_row())
                    tables[o][r] = entry
                if reports is not None:
                    rom_w = rom.outputs(rtraj.sample_states)
                    rm, rs = zip(*(statistics((times, rom_w[:, o])) for o in range(fom.n_out)))
                    write_statistics(out / "errors" / f"rom_statistics_r{r}.csv", times, rm, rs, names)
            for o in range(fom.n_out):
                write_error_table(out / f"error_table_{names[o]}.csv", tables[o])
            if bounds:
                import csv

                with open(out / "bounds.csv", "w", newline="") as fh:
                    writer = csv.DictWriter(fh, fieldnames=list(bounds[0]))
                    writer.writeheader()
                    for row in bounds:
                        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
            return tables

        stages.run("rom_sweep", sweep)
        if manifest["rom_failures"]:
            manifest["warnings"].append(f"{len(manifest['rom_failures'])} reduced model(s) failed to integrate")
        if cfg.outputs.plots:
            try:
                stages.run("plots", render_plots, out)
            except PipelineError as exc:
                manifest["warnings"].append(f"plots skipped: {exc.cause}")
        manifest["numeric_hash"] = _hash_outputs(out)
    except PipelineError as exc:
        exc.directory = out
        dump()
        raise
    dump()
    manifest["directory"] = str(out)
    return manifest


# --- plots from artifact CSVs ------------------------------------------------


def _read_csv(path):
    import csv

    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def render_plots(directory) -> list:
    """Render all figures of an artifact directory from its CSV files."""
    from .analysis import plot_error_curves, plot_errors_in_time, plot_singular_values, plot_statistics

    directory = Path(directory)
    plots = directory / "plots"
    plots.mkdir(exist_ok=True)
    made = []
    sv = directory / "singular_values.csv"
    if sv.exists():
        _, rows = _read_csv(sv)
        plot_singular_values(plots / "singular_values.png", [float(r[1]) for r in rows])
        made.append("singular_values.png")
    stats = directory / "statistics.csv"
    names = []
    if stats.exists():
        header, rows = _read_csv(stats)
        data = np.array(rows, dtype=float)
        names = [h[5:] for h in header[1::2]]
        plot_statistics(plots / "statistics.png", data[:, 0], data[:, 1::2].T, data[:, 2::2].T, names)
        made.append("statistics.png")
    from .analysis import ErrorReport

    for name in names:
        table = directory / f"error_table_{name}.csv"
        if not table.exists():
            continue
        _, rows = _read_csv(table)
        curves = {}
        mor = [(int(r[0]), float(r[2])) for r in rows if r[2]]
        best = [(int(r[0]), float(r[3])) for r in rows if r[3]]
        if mor:
            curves["MOR"] = tuple(zip(*mor))
        if best:
            curves["best approximation"] = tuple(zip(*best))
        if curves:
            plot_error_curves(plots / f"error_curve_{name}.png", curves, title=f"max L2 error ({name})")
            made.append(f"error_curve_{name}.png")
        reports = []
        for r, _ in (mor or best)[-1:]:
            for kind in ("mor", "best"):
                f = directory / "errors" / f"{name}_r{r}_{kind}.csv"
                if f.exists():
                    _, erows = _read_csv(f)
                    arr = np.array(erows, dtype=float)
                    reports.append(ErrorReport(arr[:, 0], arr[:, 1], r, kind))
        if reports:
            plot_errors_in_time(plots / f"errors_in_time_{name}.png", reports, title=name)
            made.append(f"errors_in_time_{name}.png")
    return made


# --- command line ------------------------------------------------------------


def _parse_r_arg(text: str) -> list:
    if ":" in text:
        parts = [int(v) for v in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return [int(v) for v in text.split(",")]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcmor", description="Polynomial chaos, POD reduction and best approximation pipelines.")
    parser.add_argument("--output-root", help=f"base directory for outputs (default: ${OUTPUT_ROOT_ENV} or cwd)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full pipeline")
    p.add_argument("config", help="YAML file or bundled config name")

    p = sub.add_parser("sweep", help="run a pipeline for a list of reduced dimensions")
    p.add_argument("config")
    p.add_argument("--r", required=True, help="e.g. '2:30:2' or '5,10,25'")

    p = sub.add_parser("reuse", help="compare FOM and ROMs on a longer horizon")
    p.add_argument("config")
    p.add_argument("--multiplier", type=float, required=True, help="horizon as a multiple of the snapshot interval")
    p.add_argument("--r", help="reduced dimensions (default from config)")

    p = sub.add_parser("plot", help="render plots from an artifact directory")
    p.add_argument("directory")

    p = sub.add_parser("validate-config", help="check a configuration and print it normalised")
    p.add_argument("config")

    sub.add_parser("list-configs", help="list bundled configurations")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list-configs":
            for name, path in sorted(bundled_configs().items()):
                print(f"{name}\t{path}")
            return EXIT_OK
        if args.command == "plot":
            made = render_plots(args.directory)
            print("\n".join(made))
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "validate-config":
            print(cfg.to_yaml(), end="")
            return EXIT_OK
        r_values = _parse_r_arg(args.r) if getattr(args, "r", None) else None
        mult = args.multiplier if args.command == "reuse" else None
        manifest = run_pipeline(cfg, output_root=args.output_root, r_values=r_values, reuse_multiplier=mult)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"artifacts written to {manifest['directory']}")
    for warning in manifest["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_WARNINGS if manifest["warnings"] else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
