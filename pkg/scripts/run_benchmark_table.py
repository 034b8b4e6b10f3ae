"""Replicated desk-scale simulation study; prints the metrics table and optionally saves JSON.

    python scripts/run_benchmark_table.py --replicates 10 --threads 4 --out bench.json
"""

import argparse
import time

from stagegrn.benchmark import BenchConfig, run_benchmark
from stagegrn.io import dumps_json, metrics_table, write_text


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--out", help="write the full result as JSON")
    args = p.parse_args()

    cfg = BenchConfig(replicates=args.replicates, G=5, R=5, T=4, n_t=20, density=0.3, seed=args.seed,
                      threads=args.threads)
    start = time.perf_counter()
    result = run_benchmark(cfg)
    print(metrics_table(result.aggregate))
    print(f"elapsed {(time.perf_counter() - start) / 60:.1f} min")
    if args.out:
        write_text(dumps_json(result.to_dict()), args.out)


if __name__ == "__main__":
    main()
