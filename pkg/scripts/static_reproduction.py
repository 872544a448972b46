"""Static experiments at the reference statistics: two-channel S and one-channel S'."""
import argparse

from eprlab import presets
from eprlab.montecarlo import run_one_channel, run_two_channel
from eprlab.qm import chsh_qm, s_prime_qm


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply the preset durations")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    two = presets.static_plan("orsay-static-two-channel", seed=args.seed)
    two = presets.static_plan("orsay-static-two-channel", seed=args.seed, duration=two.duration * args.scale)
    r = run_two_channel(two, args.workers).chsh
    print(f"two-channel: S  = {r.s_value:.4f} +- {r.sigma:.4f}  ({r.significance:.1f} sigma past the bound)"
          f"  prediction {chsh_qm(two.orientations, two.apparatus).s_value:.4f}")

    one = presets.static_plan("orsay-static-one-channel", seed=args.seed)
    one = presets.static_plan("orsay-static-one-channel", seed=args.seed, duration=one.duration * args.scale)
    s = run_one_channel(one, args.workers).s_prime
    print(f"one-channel: S' = {s.s_prime:.4f} +- {s.sigma:.4f}  ({s.significance:.1f} sigma past the bound)"
          f"  prediction {s_prime_qm(one.orientations, one.apparatus):.4f}")


if __name__ == "__main__":
    main()
