"""Sweep random blueprints and compare spliced and fully rebuilt MRENCLAVE values.

Prints one row per enclave size with the count checked and the time per
check for both paths, which shows that the splice cost stays flat while a
full rebuild grows with the enclave contents.
"""

import argparse
import random
import time

from sinclave.enclave import (
    PAGE_SIZE,
    EnclaveBlueprint,
    InstancePage,
    Page,
    base_hash_of,
    build_and_measure,
    extend_with_instance_page,
    make_attributes,
)


def blueprint(r: random.Random, pages: int) -> EnclaveBlueprint:
    size = 1 << (pages + 1).bit_length()
    content = tuple(Page(i * PAGE_SIZE, r.randbytes(PAGE_SIZE)) for i in range(pages))
    return EnclaveBlueprint(size * PAGE_SIZE, make_attributes(), content)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    r = random.Random(args.seed)
    print(f"{'pages':>6} {'trials':>7} {'splice_ms':>10} {'rebuild_ms':>11} equal")
    for pages in (1, 4, 16, 64, 256):
        bp = blueprint(r, pages)
        base = base_hash_of(bp)
        t_splice = t_full = 0.0
        equal = True
        for _ in range(args.trials):
            ip = InstancePage(r.randbytes(32), r.randbytes(32))
            t0 = time.perf_counter()
            a = extend_with_instance_page(base, ip, bp.instance_page_offset)
            t1 = time.perf_counter()
            b = build_and_measure(bp.with_instance_page(ip))[1]
            t2 = time.perf_counter()
            t_splice += t1 - t0
            t_full += t2 - t1
            equal &= a == b
        n = args.trials
        print(f"{pages:>6} {n:>7} {1e3 * t_splice / n:>10.3f} {1e3 * t_full / n:>11.3f} {equal}")


if __name__ == "__main__":
    main()
