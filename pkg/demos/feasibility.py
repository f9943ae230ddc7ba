"""Sufficient conditions on the nudging strength and observation spacing.

The convergence theory asks for mu above a forcing-dependent minimum and for
mu c0^2 h^2 <= 1. This script prints the constants for the default forcing
and, for a range of h, whether the heuristic mu satisfies both conditions.

    python demos/feasibility.py
"""

import math

from pgnudge.assimilate import theorem_constants
from pgnudge.config import load_config
from pgnudge.observe import InterpolantSpec
from pgnudge.runner import prepare


def main():
    setup = prepare(load_config(None))
    c = theorem_constants(setup.params, setup.forcing, setup.spec, setup.domain,
                          lambda1=setup.lambda1)
    print(f"K_tilde {c.K_tilde:.3f}  R_a_tilde {c.R_a_tilde:.4f}  R_a {c.R_a:.4f}  "
          f"mu_min {c.mu_min:.3f}  mu {c.mu:.3f}")
    c0 = setup.spec.c0
    h_star = 1 / (c0 * math.sqrt(c.mu))
    print(f"measured c0 {c0:.4f}; mu c0^2 h^2 <= 1 holds for h <= {h_star:.4f}")
    print(f"{'h':>6} {'mu c0^2 h^2':>12} {'feasible':>9}")
    for h in (1 / 8, 1 / 4, 1 / 2, 0.8, 0.85, 1.0):
        ch = theorem_constants(setup.params, setup.forcing, InterpolantSpec("modal", h, c0),
                               setup.domain, lambda1=setup.lambda1)
        print(f"{h:6.3f} {ch.smallness:12.4f} {str(ch.feasible):>9}")


if __name__ == "__main__":
    main()
