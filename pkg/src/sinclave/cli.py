"""Command line entry point: keygen, measure, verifier, starter, attack, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attestation import PlatformKeys, generate_platform, load_public_key
from .enclave import EnclaveBlueprint, InstancePage, base_hash_of, build_and_measure
from .errors import SinclaveError
from .scenario import common_sigstruct_for, make_policy
from .sigstruct import SignerKey, SigStruct, generate_signer_key
from .verifier import Mode, SecretsBundle, Verifier

log = logging.getLogger("sinclave")


def save_platform(platform: PlatformKeys, path: Path) -> None:
    path.write_text(
        json.dumps(
            {
                "platform_id": platform.platform_id,
                "report_mac_key": platform.report_mac_key.hex(),
                "quoting_key_pem": platform.quoting_key.to_pem().decode(),
            },
            indent=2,
        )
    )


def load_platform(path: Path) -> PlatformKeys:
    data = json.loads(path.read_text())
    return PlatformKeys(
        bytes.fromhex(data["report_mac_key"]),
        SignerKey.from_pem(data["quoting_key_pem"].encode()),
        data.get("platform_id", "platform-0"),
    )


def cmd_keygen(args) -> int:
    if args.platform:
        platform = generate_platform(args.platform_id)
        save_platform(platform, Path(args.out))
        Path(args.out).with_suffix(".pub.pem").write_bytes(platform.public_pem())
        print(f"platform {platform.platform_id} written to {args.out}")
        return 0
    key = generate_signer_key(args.seed)
    Path(args.out).write_bytes(key.to_pem())
    print(f"mrsigner {key.mrsigner.hex()}")
    return 0


def cmd_build(args) -> int:
    """Measure a manifest in full, optionally with an instance page in the last slot."""
    bp = EnclaveBlueprint.load(args.blueprint)
    if args.token or args.verifier_identity:
        page = InstancePage(bytes.fromhex(args.token or "00" * 32), bytes.fromhex(args.verifier_identity or "00" * 32))
        bp = bp.with_instance_page(page)
    elif args.common:
        bp = bp.with_instance_page(InstancePage.common())
    measurement, mrenclave = build_and_measure(bp)
    print(f"pages     {len(bp.pages)}")
    print(f"records   {len(measurement.records)}")
    print(f"mrenclave {mrenclave.hex()}")
    return 0


def cmd_measure(args) -> int:
    bp = EnclaveBlueprint.load(args.blueprint)
    key = SignerKey.from_pem(Path(args.key).read_bytes())
    base = base_hash_of(bp)
    common = common_sigstruct_for(bp, key, args.isvprodid, args.isvsvn)
    sig_out = Path(args.sigstruct_out or Path(args.blueprint).with_suffix(".sigstruct"))
    sig_out.write_text(common.b64() + "\n")
    print(f"base_hash        {base.hex()}")
    print(f"common_mrenclave {common.mrenclave.hex()}")
    print(f"mrsigner         {common.mrsigner.hex()}")
    print(f"sigstruct        {sig_out}")
    if args.policy_out:
        secrets = json.loads(Path(args.secrets).read_text()) if args.secrets else {}
        policy = make_policy(args.name, bp, key, SecretsBundle(secrets), Mode(args.mode), common)
        policy.check()
        out = Path(args.policy_out)
        out.write_text(json.dumps(policy.to_json(key_path=str(Path(args.key).resolve())), indent=2))
        print(f"policy           {out}")
    return 0


def cmd_verifier_serve(args) -> int:
    from .transport import serve

    identity = SignerKey.from_pem(Path(args.identity_key).read_bytes()) if args.identity_key else None
    verifier = Verifier(identity, journal=args.journal)
    for path in args.platform or []:
        path = Path(path)
        if path.suffix == ".json":
            verifier.register_platform(load_platform(path).public_key())
        else:
            verifier.register_platform(load_public_key(path.read_bytes()))
    n = verifier.load_policies(args.policies)
    log.info("loaded %d policies; verifier identity %s", n, verifier.identity.hex())
    serve(args.listen, verifier)
    return 0


def cmd_starter_run(args) -> int:
    from .starter import StartRequest, start

    bp = EnclaveBlueprint.load(args.blueprint)
    sig_path = Path(args.sigstruct or Path(args.blueprint).with_suffix(".sigstruct"))
    common = SigStruct.from_b64(sig_path.read_text().strip())
    req = StartRequest(args.policy, bp, common, args.verifier, load_platform(Path(args.platform)))
    result = start(req, common=args.common)
    print(f"mrenclave {result.enclave.mrenclave.hex()}")
    if result.secrets is None:
        print("common enclave started; no configuration requested")
        return 0
    for key, value in sorted(result.secrets.entries.items()):
        print(f"  {key} = {value if args.show_secrets else '<redacted>'}")
    return 0


def cmd_attack_demo(args) -> int:
    from .adversary import demo

    outcome = demo(args.mode, args.strategy)
    if args.mode == "naive":
        print(f"naive verifier: attack {'succeeded' if outcome.ok else 'FAILED'}")
        if outcome.secrets is not None:
            for key, value in sorted(outcome.secrets.entries.items()):
                print(f"  stolen {key} = {value}")
    else:
        print(f"singleton verifier, strategy {outcome.strategy}: {outcome.observed} (expected {outcome.expected})")
    return 0 if outcome.ok else 1


def cmd_bench(args) -> int:
    from . import bench

    results = bench.run(args.suite, warmup=args.warmup, samples=args.samples, measurement=args.measurement)
    print(bench.format_table(results))
    if args.csv:
        Path(args.csv).write_text(bench.to_csv(results))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sinclave", description="singleton enclave measurement and attestation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate an RSA-3072 signer key or a platform key file")
    k.add_argument("--out", required=True)
    k.add_argument("--seed")
    k.add_argument("--platform", action="store_true", help="write platform keys (JSON) instead")
    k.add_argument("--platform-id", default="platform-0")
    k.set_defaults(func=cmd_keygen)

    bd = sub.add_parser("build", help="measure a blueprint manifest and print MRENCLAVE")
    bd.add_argument("blueprint")
    bd.add_argument("--common", action="store_true", help="append the zeroed instance page")
    bd.add_argument("--token", help="append an instance page with this token (hex)")
    bd.add_argument("--verifier-identity", help="verifier identity for the instance page (hex)")
    bd.set_defaults(func=cmd_build)

    m = sub.add_parser("measure", help="emit base enclave hash and common SIGSTRUCT")
    m.add_argument("blueprint")
    m.add_argument("--key", required=True, help="signer private key (PEM)")
    m.add_argument("--isvprodid", type=int, default=1)
    m.add_argument("--isvsvn", type=int, default=1)
    m.add_argument("--sigstruct-out")
    m.add_argument("--policy-out", help="also write a verifier policy file")
    m.add_argument("--name", default="app")
    m.add_argument("--mode", choices=[x.value for x in Mode], default="singleton")
    m.add_argument("--secrets", help="JSON object of configuration entries")
    m.set_defaults(func=cmd_measure)

    v = sub.add_parser("verifier").add_subparsers(dest="action", required=True)
    vs = v.add_parser("serve")
    vs.add_argument("--listen", default="127.0.0.1:7777")
    vs.add_argument("--policies", required=True)
    vs.add_argument("--journal", required=True)
    vs.add_argument("--identity-key")
    vs.add_argument("--platform", action="append", help="platform JSON or quoting public key PEM")
    vs.set_defaults(func=cmd_verifier_serve)

    s = sub.add_parser("starter").add_subparsers(dest="action", required=True)
    sr = s.add_parser("run")
    sr.add_argument("--policy", required=True)
    sr.add_argument("--blueprint", required=True)
    sr.add_argument("--verifier", required=True)
    sr.add_argument("--platform", required=True, help="platform key file from keygen --platform")
    sr.add_argument("--sigstruct")
    sr.add_argument("--common", action="store_true")
    sr.add_argument("--show-secrets", action="store_true")
    sr.set_defaults(func=cmd_starter_run)

    a = sub.add_parser("attack").add_subparsers(dest="action", required=True)
    ad = a.add_parser("demo")
    ad.add_argument("--mode", choices=["naive", "singleton"], required=True)
    ad.add_argument("--strategy", choices=["a", "b", "c"], default="a")
    ad.set_defaults(func=cmd_attack_demo)

    b = sub.add_parser("bench")
    b.add_argument("suite", choices=["sha", "sign", "verify", "retrieval", "all"])
    b.add_argument("--csv")
    b.add_argument("--warmup", type=float, default=3.0)
    b.add_argument("--samples", type=int, default=20)
    b.add_argument("--measurement", type=float, default=2.0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except SinclaveError as exc:
        print(f"error {exc.code}: {exc.detail or exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
