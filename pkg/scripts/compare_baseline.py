"""Rows per online solve: offline artifact against the online scenario
baseline that redraws its scenarios at every step.

    python3 scripts/compare_baseline.py --rollouts 20
"""

import argparse

import numpy as np

from offline_smpc import plants
from offline_smpc.designer import design
from offline_smpc.simulator import Campaign, run_campaign, run_online_scenario_baseline


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rollouts", type=int, default=20)
    ap.add_argument("--steps", type=int, default=50)
    args = ap.parse_args()

    model, spec = plants.test_plant()
    art = design(model, spec, seed=1).artifact
    c = Campaign(art, model, n_rollouts=args.rollouts, steps=args.steps, seed=7)
    off = run_campaign(c)
    base = run_online_scenario_baseline(c)
    b = base.summary["baseline"]
    print(f"artifact rows:          {b['artifact_rows']}")
    print(f"baseline rows/solve:    {b['rows_per_solve']} ({b['n_scenarios']} scenarios)")
    print(f"ratio:                  {b['rows_per_solve'] / b['artifact_rows']:.2f}")
    print(f"seconds per solve:      offline {off.timing['seconds_per_solve']:.2e}, "
          f"baseline {base.timing['seconds_per_solve']:.2e}")
    print(f"infeasible solves:      offline {off.summary['infeasible_solves']}, "
          f"baseline {base.summary['infeasible_solves']}")
    stopped = [r for r, rec in enumerate(base.records) if rec.infeasible]
    if stopped:
        print(f"baseline rollouts ended by infeasibility: {stopped}")
    final = np.median([np.linalg.norm(rec.states[-1]) for rec in base.records])
    print(f"baseline median final |x|: {final:.2e}")


if __name__ == "__main__":
    main()
