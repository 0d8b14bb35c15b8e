"""Write the demo enclave manifest, a signer key and a secrets file into a directory.

    python scripts/make_demo_blueprint.py out/ --seed demo

Follow with ``sinclave measure out/app.json --key out/signer.pem ...``.
"""

import argparse
import json
from pathlib import Path

from sinclave import rng
from sinclave.scenario import demo_blueprint, demo_secrets
from sinclave.sigstruct import generate_signer_key


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("outdir", type=Path)
    p.add_argument("--seed", help="replay the same enclave contents, key and secrets")
    p.add_argument("--pages", type=int, default=16, help="enclave size in pages (power of two)")
    args = p.parse_args()

    if args.seed:
        rng.reseed(args.seed)
    args.outdir.mkdir(parents=True, exist_ok=True)
    bp = demo_blueprint(args.pages * 4096)
    bp.dump(args.outdir / "app.json")
    (args.outdir / "signer.pem").write_bytes(generate_signer_key().to_pem())
    (args.outdir / "secrets.json").write_text(json.dumps(demo_secrets().entries, indent=2))
    print(f"wrote app.json ({len(bp.pages)} pages, {bp.enclave_size} bytes), signer.pem, secrets.json")


if __name__ == "__main__":
    main()
