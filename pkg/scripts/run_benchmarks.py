"""Run the benchmark suites and save a CSV plus a printed table.

    python scripts/run_benchmarks.py --suite all --csv results/bench.csv
    python scripts/run_benchmarks.py --suite sha --quick
"""

import argparse
from pathlib import Path

from sinclave import bench


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--suite", default="all", choices=[*bench.SUITES, "all"])
    p.add_argument("--csv", type=Path, default=Path("results/bench.csv"))
    p.add_argument("--quick", action="store_true", help="short warmup and sampling, for smoke runs")
    args = p.parse_args()

    opts = dict(warmup=0.1, samples=5, measurement=0.2) if args.quick else {}
    results = bench.run(args.suite, **opts)
    print(bench.format_table(results))

    by = {(r.name, r.param): r for r in results}
    sign, verify = by.get(("sign_sigstruct", 3072)), by.get(("verify_correct", 3072))
    if sign and verify:
        print(f"\nsign/verify mean ratio: {sign.mean_s / verify.mean_s:.1f}")
    small, large = by.get(("finalize_base", 2048)), by.get(("finalize_base", 64 << 20))
    if small and large:
        print(f"finalize_base 64 MiB / 2 KiB: {large.mean_s / small.mean_s:.2f}")

    args.csv.parent.mkdir(parents=True, exist_ok=True)
    args.csv.write_text(bench.to_csv(results))
    print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
