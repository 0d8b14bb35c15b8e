"""Run the reuse attack against a naive and a singleton verifier and tabulate the outcomes.

Each scenario gets a fresh deployment. With --seed the whole table is
reproducible, including the stolen values.
"""

import argparse
import sys

from sinclave import rng
from sinclave.adversary import EXPECTED_CODES, demo


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", default=None)
    p.add_argument("--show-secrets", action="store_true")
    args = p.parse_args()

    scenarios = [("naive", None)] + [("singleton", s) for s in sorted(EXPECTED_CODES)]
    failures = 0
    print(f"{'verifier':<10} {'strategy':<9} {'expected':<22} {'observed':<22} ok")
    for mode, strategy in scenarios:
        if args.seed is not None:
            rng.reseed(f"{args.seed}:{mode}:{strategy}")
        out = demo(mode, strategy)
        failures += not out.ok
        print(f"{mode:<10} {strategy or '-':<9} {out.expected:<22} {out.observed:<22} {'yes' if out.ok else 'NO'}")
        if args.show_secrets and out.secrets is not None:
            for k, v in sorted(out.secrets.entries.items()):
                print(f"    stolen {k} = {v}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
