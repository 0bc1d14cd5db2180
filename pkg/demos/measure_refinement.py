#!/usr/bin/env python3
"""Two-stage measure refinement with dimension estimates.

Starting from the uniform density on a 512-cell grid, each stage builds
an avoiding configuration inside the current support, mollifies it at
that stage's ball radius, and multiplies the mollified density into the
running measure.  The stage radii decay geometrically, so the limiting
support is a Cantor-like set adapted to the pattern.

Afterwards the two complementary dimension estimates are computed:

  * box dimension of the final stage's point cloud (thickened counts,
    least-squares slope over the dyadic scales near r), and
  * Fourier dimension of the final grid measure (worst dyadic-annulus
    decay exponent of |mu-hat|).

With avoidance exponent lam, the point of the construction is that both
sit near lam rather than collapsing to 0.

Run:  python3 demos/measure_refinement.py [out_dir]
"""

import os
import sys

from salemkit.dimension import box_dimension, fourier_dimension
from salemkit.harness import ap3_pattern
from salemkit.measures import geometric_schedule, salem_iterate
from salemkit.sampler import ConstructionParams


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "out/refine"
    lam = 0.45
    params0 = ConstructionParams(M=512, lam=lam, seed=7)
    schedule = geometric_schedule(params0, stages=2, factor=4.0)
    pattern = ap3_pattern(m=16)

    print(f"iterating {len(schedule)} stages at lam={lam}, G=512 ...")
    trajectory = salem_iterate(pattern, schedule, G=512, gamma=lam)
    for rec in trajectory:
        print(
            f"  stage {rec['stage']}: radius {rec['radius']:.4e}, "
            f"N={rec['config'].N}, sweep violations {rec['sweep'].n_violations}, "
            f"seminorm step {rec['seminorm_step']['value']:.4e}"
        )

    final = trajectory[-1]
    os.makedirs(out_dir, exist_ok=True)
    final["measure"].save(f"{out_dir}/final.sfgm")

    config = final["config"]
    r = config.radius_r
    box = box_dimension(
        config.points, scales=[16 * r, 8 * r, 4 * r, 2 * r, r], thicken=r
    )
    four = fourier_dimension(final["measure"])
    print(f"box dimension (point cloud)    : {box.value:.3f}")
    print(f"fourier dimension (grid measure): {four.value:.3f}")
    print(f"target exponent lam             : {lam}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
