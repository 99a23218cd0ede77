"""Transistor amplifier: run the bundled desk-scale pipeline from Python.

Run with ``python3 demos/amplifier_pipeline.py [galerkin|collocation]``.
The artifacts (CSV tables, manifest, plots) land in ``demo-output/``.
The same run is available on the command line as
``pcmor --output-root demo-output run amplifier-galerkin``.
"""

import sys
from pathlib import Path

import numpy as np

from pcmor.cli import load_config, run_pipeline


def main(method="galerkin"):
    cfg = load_config(f"amplifier-{method}")
    cfg.mor.r = [10, 20, 30]
    manifest = run_pipeline(cfg, output_root="demo-output")
    out = manifest["directory"]
    print(f"artifacts in {out}")
    for stage in manifest["stages"]:
        print(f"  {stage['stage']:<10} {stage['status']:<6} {stage.get('seconds', float('nan')):.1f} s")
    for r, reason in manifest["rom_failures"].items():
        print(f"  reduced model r={r} failed: {reason}")

    data = np.loadtxt(f"{out}/statistics.csv", delimiter=",", skiprows=1)
    t, std = data[:, 0], data[:, 2]
    period = 0.01
    early = (t <= 0.1 * period)
    later = (t >= 0.2 * period) & (t <= 0.5 * period)
    i = np.argmax(np.where(early, std, -np.inf))
    print(f"early std peak {std[i]:.3e} at t = {t[i]:.2e} s; largest std on [0.2T, 0.5T]: {std[later].max():.3e}")
    for table in sorted(Path(out).glob("error_table_*.csv")):
        print(table.name)
        print(table.read_text())


if __name__ == "__main__":
    main(*sys.argv[1:])
