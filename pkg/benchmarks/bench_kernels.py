"""Time the gain formulas and the compiled kernels against their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--points 1500] [--trials 20]
"""
import argparse

from lioekf.bench import (TABLE_M, benchmark_gain, benchmark_kernels, format_gain_table,
                          format_kernel_table)
from lioekf.kernels import BACKEND


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=1500)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--gain-trials", type=int, default=5)
    args = ap.parse_args()

    print("Kalman gain, standard vs information form")
    print(format_gain_table(benchmark_gain(TABLE_M, args.gain_trials)))
    print()
    print(f"kernels (active backend: {BACKEND})")
    print(format_kernel_table(benchmark_kernels(args.points, trials=args.trials)))


if __name__ == "__main__":
    main()
