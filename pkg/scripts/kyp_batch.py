"""Compare the frequency-domain and LMI answers on random bounded-real instances."""

import argparse

from iqcrobust.experiments import kyp_batch


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--count", type=int, default=100)
    args = parser.parse_args()

    summary = kyp_batch(seed=args.seed, count=args.count)
    for i, r in enumerate(summary.reports):
        if r.borderline or not r.agree:
            print(f"instance {i}: agree={r.agree} borderline={r.borderline}")
    print(f"agreement {summary.agreement:.3f} over {len(summary.decided)} decided instances, "
          f"{summary.seconds:.1f}s")


if __name__ == "__main__":
    main()
