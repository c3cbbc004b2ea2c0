"""Simulation checks: sampled IQC slack on the Ers loop and peak-vs-bound dominance."""

import argparse

from iqcrobust.experiments import bound_dominance, iqc_monte_carlo


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--runs", type=int, default=200, help="disturbances per dominance point")
    parser.add_argument("--deltas", type=int, default=50)
    parser.add_argument("--inputs", type=int, default=20)
    args = parser.parse_args()

    iqc = iqc_monte_carlo(seed=args.seed, deltas=args.deltas, inputs=args.inputs)
    print(f"iqc: {iqc.runs} runs, {iqc.violations} violations, worst slack/energy "
          f"{iqc.worst_relative_slack:.2e}, control violations {iqc.control_violations}, {iqc.seconds:.1f}s")

    print("example  alpha  column            bound      peak  ratio")
    for p in bound_dominance(seed=args.seed, runs=args.runs):
        print(f"{p.example:7s} {p.alpha:6g}  {p.column:16s} {p.bound:9.4f} {p.peak:9.4f} {p.ratio:6.3f}")


if __name__ == "__main__":
    main()
