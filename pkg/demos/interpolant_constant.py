"""How the observation error scales with the observation spacing h.

For each interpolant kind the measured constant c0 is the worst ratio
|f - I_h f|^2 / (h^2 ||f||_H1^2) over seeded smooth random fields. A
scale-stable c0 means the approximation error shrinks like h^2.

    python demos/interpolant_constant.py
"""

import argparse

from pgnudge.field import DomainSpec, PhysParams
from pgnudge.observe import InterpolantSpec, build_modal_basis, measure_c0


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=32, help="horizontal cells (nz = n/2)")
    parser.add_argument("--samples", type=int, default=100)
    args = parser.parse_args()

    d = DomainSpec(args.n, args.n, args.n // 2)
    p = PhysParams()
    print(f"{'h':>7} {'modes':>6} {'c0 modal':>10} {'c0 volume':>10}")
    for h in (1.0, 1 / 2, 1 / 4, 1 / 8):
        row = [measure_c0(InterpolantSpec(kind, h), d, p, n_samples=args.samples)
               for kind in ("modal", "volume")]
        m_h = build_modal_basis(d, p, h).m_h
        print(f"{h:7.4f} {m_h:6d} {row[0]:10.4f} {row[1]:10.4f}")


if __name__ == "__main__":
    main()
