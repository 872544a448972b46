"""Timing experiment: matched-statistics S', light-cone audit, retardation check."""
import argparse

from eprlab import presets
from eprlab.timing import (
    lightcone_audit,
    qm_no_retardation_check,
    retardation_conditions,
    run_timing_experiment,
    timing_campaign,
    timing_s_prime_qm,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--duration", type=float, default=presets.TIMING_MATCHED_DURATION, help="switched-run seconds")
    ap.add_argument("--retardation-duration", type=float, default=20.0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    plan = presets.timing_plan(seed=args.seed)
    a = timing_campaign(plan, args.duration, workers=args.workers)
    sp = a.s_prime
    print(f"S' = {sp.s_prime:.4f} +- {sp.sigma:.4f}  ({sp.significance:.1f} sigma), prediction {timing_s_prime_qm(plan):.4f}")
    for name, est in a.normalized.items():
        print(f"  n({name}) = {est.value:.4f} +- {est.sigma:.4f}")

    audit = lightcone_audit(*run_timing_experiment(presets.timing_plan(seed=args.seed)))
    print(f"audit: {audit.spacelike}/{audit.detections} space-like, margin {audit.min_margin_ps}..{audit.max_margin_ps} ps"
          f" (L/c = {audit.light_time_ps} ps)")

    conds = retardation_conditions(plan, duration=args.retardation_duration, workers=args.workers)
    rep = qm_no_retardation_check(conds)
    print(f"retardation: chi2 = {rep.chi2:.2f} / {rep.dof}, p = {rep.p_value:.3f}, {'pass' if rep.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
