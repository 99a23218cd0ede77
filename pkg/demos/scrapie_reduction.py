"""Scrapie model: stochastic Galerkin system, POD reduction, best approximation.

Run with ``python3 demos/scrapie_reduction.py``.  Prints the size of the
full Galerkin system, the decay of the singular values and, for a range of
reduced dimensions, the maximum L2 error of the reduced model next to the
error of the best approximation in the same low-dimensional space.
"""

import numpy as np

from pcmor import (
    BasisSpec,
    IntegratorConfig,
    assemble_galerkin,
    best_approximation,
    integrate,
    l2_error,
    pod,
    reduce,
    scrapie,
    statistics,
    tensor_rule,
)
from pcmor.lowdim import mor_representation, phi_representation


def main():
    system = scrapie()
    basis = BasisSpec.total_degree(system.box, 3)
    # the quadratic nonlinearity needs a rule exact to degree 10 per axis
    fom = assemble_galerkin(system, basis, tensor_rule(system.box, 6))
    print(f"basis functions m = {basis.m}, Galerkin states N = {fom.N}")

    snap = integrate(fom, system.t_span, fom.v0, IntegratorConfig(rel_tol=1e-4, abs_tol=1e-6), dense=False)
    print(f"snapshots from accepted steps: {snap.times.size}")
    result = pod(snap.states.T)
    s = result.singular_values
    print("relative singular values:", " ".join(f"{v:.1e}" for v in s[:20:3] / s[0]))

    times = np.linspace(*system.t_span, 200)
    run_cfg = IntegratorConfig(rel_tol=1e-6, abs_tol=1e-9)
    w_hat = fom.outputs(integrate(fom, system.t_span, fom.v0, run_cfg, t_eval=times).sample_states)
    mean, std = statistics((times, w_hat[:, 0]))
    print(f"x1 at t = 500: mean {mean[-1]:.4f}, std {std[-1]:.4f}")

    print(f"{'r':>3} {'MOR error':>12} {'best error':>12}   (output x1)")
    for r in (2, 4, 8, 12, 16, 20):
        rom = reduce(fom, result, r)
        v = rom.simulate(run_cfg, t_eval=times).sample_states
        exact = phi_representation(times, w_hat[:, 0])
        mor = l2_error(exact, mor_representation(times, v, rom.C_bar[0]))
        best = l2_error(exact, best_approximation(times, w_hat[:, 0], rom.C_bar[0], orthonormalize=True))
        print(f"{r:>3} {mor.max_error:12.3e} {best.max_error:12.3e}")


if __name__ == "__main__":
    main()
