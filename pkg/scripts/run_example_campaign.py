"""Rotation example: design once, check the reduced input polygon against
the exact disc, then run a closed-loop campaign with direction checks.

    python3 scripts/run_example_campaign.py --reps 50 --rollouts 400
"""

import argparse
import json

import numpy as np

from offline_smpc import designer, geometry, plants
from offline_smpc.geometry import Polytope
from offline_smpc.simulator import Campaign, run_campaign


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--rollouts", type=int, default=400)
    ap.add_argument("--steps", type=int, default=10)
    args = ap.parse_args()

    model, spec = plants.rotation_example(eps=args.eps, delta=args.delta)
    radius = plants.disc_radius(args.eps)
    norms = []
    for seed in range(args.reps):
        D = designer.reduce(designer.build_sampled_sets(model, spec, Polytope.whole_space(2), seed=seed))
        V = geometry.vertices(Polytope(D.lhs[:, 2:], D.rhs))
        norms.append(float(np.linalg.norm(V, axis=1).max()))
    norms = np.array(norms)
    print(f"disc radius {radius:.5f}; largest polygon vertex norm: median {np.median(norms):.5f}, "
          f"max {norms.max():.5f}; outside in {int((norms > radius).sum())}/{args.reps}")

    res = designer.design(model, spec, seed=0, mc_samples=10, terminal_draws=10, run_certificate=False)
    x0 = np.array([[8.0, -6.0], [-5.0, 9.0], [10.0, 10.0]])
    s = run_campaign(Campaign(res.artifact, model, n_rollouts=args.rollouts, steps=args.steps, seed=0, x0=x0)).summary
    fam = s["direction_chance_constraints"]["families"][0]
    print(json.dumps({"infeasible_solves": s["infeasible_solves"], "max_rate": fam["max_rate"],
                      "max_exact_probability": fam["max_exact_probability"], "eps": fam["eps"]}, indent=1))


if __name__ == "__main__":
    main()
