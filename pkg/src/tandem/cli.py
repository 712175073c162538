"""Command-line interface: share server, user agent, demo verifier, bench.

Configuration is a JSON file (path from --config or the TANDEM_CONFIG
environment variable).  Commands exit 0 on success and with a distinct
nonzero code per error class: 2 usage/config, 3 network, 4 protocol abort,
5 blocked key detected (the wallet destroys its tokens), 6 no tokens left.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import adversary, client
from .client import (
    EXIT_OK,
    EXIT_PROTOCOL,
    EXIT_USAGE,
    ClientError,
    Connection,
    ServerEnv,
    SpServer,
    SpService,
    Wallet,
)
from .state import TandemParams, setup

DEFAULT_CONFIG = {
    "listen": "127.0.0.1:7710",
    "data_dir": "./tandem-data",
    "group": "bls12_381",
    "ell": 128,
    "k": 20,
    "rate_limit": 16,
    "epoch_len": 86400,
    "modulus_bits": 2048,
    "beta": 394,
    "aux_modulus": "",  # hex; empty selects the built-in deployment group
    "aux_order": "",
    "session_timeout": 60,
    "cooldown": 0,
}


def load_config(path: str | None) -> dict:
    path = path or os.environ.get("TANDEM_CONFIG")
    cfg = dict(DEFAULT_CONFIG)
    if path:
        try:
            with open(path) as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ClientError(f"cannot read config {path}: {exc}", EXIT_USAGE) from None
    return cfg


def config_params(cfg: dict) -> TandemParams:
    return TandemParams(
        group_name=cfg["group"],
        ell=cfg["ell"],
        k=cfg["k"],
        rate_limit=cfg["rate_limit"],
        epoch_len=cfg["epoch_len"],
        modulus_bits=cfg["modulus_bits"],
        beta=cfg["beta"],
        aux_modulus=int(cfg["aux_modulus"], 16) if cfg["aux_modulus"] else 0,
        aux_order=int(cfg["aux_order"], 16) if cfg["aux_order"] else 0,
    )


def _addr(spec: str) -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    if not host or not port.isdigit():
        raise ClientError(f"bad address {spec!r} (need host:port)", EXIT_USAGE)
    return host, int(port)


def _connect(args) -> Connection:
    host, port = _addr(args.ts)
    proxy = _addr(args.proxy) if args.proxy else None
    return Connection(host, port, proxy=proxy)


# ---------------------------------------------------------------------------

def cmd_server(args) -> int:
    from .service import Persister, TandemServer, TandemService

    cfg = load_config(args.config)
    persister = Persister(cfg["data_dir"])
    snap = os.path.join(cfg["data_dir"], "state.cbor")
    if os.path.exists(snap):
        try:
            state = persister.restore()
        except (ValueError, FileNotFoundError) as exc:
            print(f"refusing to start: {exc}", file=sys.stderr)
            return 1
    else:
        params = config_params(cfg)
        print(f"generating keys for k={params.k} (one-time)…", file=sys.stderr)
        state = setup(params)
        persister.save_secrets(state)
        persister.snapshot(state)
    state.wal = persister.wal_append
    host, port = _addr(cfg["listen"])
    service = TandemService(state, persister=persister, timeout=cfg["session_timeout"])
    server = TandemServer((host, port), service)
    print(f"tandem server on {server.server_address[0]}:{server.server_address[1]} "
          f"(k={state.params.k}, q={state.params.rate_limit}, epoch={state.params.epoch_len}s)",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        persister.snapshot(state)
    return EXIT_OK


def cmd_register(args) -> int:
    with _connect(args) as conn:
        env = ServerEnv.fetch(conn)
        client.do_register(conn, env, args.user, args.passphrase, args.wallet)
    print(f"registered {args.user!r}; wallet at {args.wallet}")
    return EXIT_OK


def cmd_obtain(args) -> int:
    wallet = Wallet.load(args.wallet)
    with _connect(args) as conn:
        env = ServerEnv.fetch(conn)
        tokens = client.do_obtain(conn, env, wallet, count=args.count)
    print(f"obtained {len(tokens)} token(s); "
          f"{len(wallet.user.unspent_tokens())} unspent in wallet")
    return EXIT_OK


def cmd_spend(args) -> int:
    cfg = load_config(args.config)
    wallet = Wallet.load(args.wallet)
    token = client.pick_token(wallet, cooldown=float(cfg["cooldown"]), force=args.force)
    sp_host, sp_port = _addr(args.sp)
    with _connect(args) as ts_conn, Connection(sp_host, sp_port) as sp_conn:
        env = ServerEnv.fetch(ts_conn)
        sid, x_tilde_u = client.do_genshares(ts_conn, env, wallet, token)
        ok = client.SPEND_FLOWS[args.tcp](ts_conn, sp_conn, env, wallet, sid, x_tilde_u)
    print(f"{args.tcp}: {'ACCEPT' if ok else 'REJECT'}")
    return EXIT_OK if ok else EXIT_PROTOCOL


def cmd_block(args) -> int:
    wallet = Wallet.load(args.wallet)
    with _connect(args) as conn:
        client.do_block(conn, wallet.user.user_id, args.passphrase)
    print(f"blocked {wallet.user.user_id!r}; unspent tokens are now unusable")
    return EXIT_OK


def cmd_rlist(args) -> int:
    with _connect(args) as conn:
        version, entries = client.fetch_rlist(conn)
    print(f"revocation list version {version}, {len(entries)} entries")
    for e in entries:
        print(e.hex())
    return EXIT_OK


def cmd_sp_verify(args) -> int:
    from .groups import get_group

    group = get_group(args.group)
    signal_pk = group.decode_g1(bytes.fromhex(args.require_signal)) if args.require_signal else None
    service = SpService(group, signal_pk=signal_pk)
    host, port = _addr(args.listen)
    server = SpServer(host, port, service).start()
    print(f"sp verifier on {host}:{server.port} (issuer ready; "
          f"signal policy {'on' if signal_pk else 'off'})")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def cmd_bench(args) -> int:
    k_list = [int(k) for k in args.k_list.split(",")]
    lines: list[str] = []

    def log(line):
        lines.append(str(line))
        print(line)

    client.bench(k_list, runs=args.runs, group_name=args.group,
                 include_revocation=args.revocation, log=log)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_attack(args) -> int:
    kwargs = {"seed": args.seed}
    if args.id == "cheating-obtain":
        kwargs.update(k=args.k, bad_slots=args.bad_slots,
                      exhaustive=args.exhaustive)
        if args.trials:
            kwargs["trials"] = args.trials
    elif args.id == "spend-substitution":
        kwargs.update(k=args.k, trials=args.trials or 100)
    elif args.id == "malicious-ts":
        kwargs.update(k=args.k, offset=args.offset, mode=args.mode)
    elif args.id == "register-enum":
        kwargs.update(k=args.k)
    else:
        raise ClientError(f"unknown attack {args.id!r}", EXIT_USAGE)
    result = adversary.ATTACKS[args.id](**kwargs)
    print(json.dumps(result))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tandem", description=__doc__)
    parser.add_argument("--config", help="config file (or TANDEM_CONFIG)")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("server", help="run the share server")
    p.set_defaults(fn=cmd_server)

    def client_args(p):
        p.add_argument("--ts", default="127.0.0.1:7710", help="share server address")
        p.add_argument("--wallet", default="./wallet.cbor")
        p.add_argument("--proxy", help="SOCKS5 proxy host:port")

    p = sub.add_parser("register", help="register with the share server")
    client_args(p)
    p.add_argument("--user", required=True)
    p.add_argument("--passphrase", required=True, help="blocking credential")
    p.set_defaults(fn=cmd_register)

    p = sub.add_parser("obtain", help="obtain key-share tokens")
    client_args(p)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(fn=cmd_obtain)

    p = sub.add_parser("spend", help="use a token to run a threshold protocol")
    client_args(p)
    p.add_argument("--tcp", required=True, choices=sorted(client.SPEND_FLOWS))
    p.add_argument("--sp", default="127.0.0.1:7711", help="verifier address")
    p.add_argument("--force", action="store_true", help="ignore the obtain/spend cool-down")
    p.set_defaults(fn=cmd_spend)

    p = sub.add_parser("block", help="block this key; invalidates unspent tokens")
    client_args(p)
    p.add_argument("--passphrase", required=True)
    p.set_defaults(fn=cmd_block)

    p = sub.add_parser("rlist", help="fetch the revocation list")
    client_args(p)
    p.set_defaults(fn=cmd_rlist)

    p = sub.add_parser("sp-verify", help="run the demo verifier/issuer")
    p.add_argument("--listen", default="127.0.0.1:7711")
    p.add_argument("--group", default="bls12_381")
    p.add_argument("--require-signal", help="hex signal public key; enables the issuance-signal policy")
    p.set_defaults(fn=cmd_sp_verify)

    p = sub.add_parser("bench", help="measure obtain/genshares cost per difficulty")
    p.add_argument("--k-list", default="4,8,16,32")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--group", default="bls12_381")
    p.add_argument("--revocation", type=int, default=0,
                   help="synthetic revocation-list size (0 = excluded, as in the reference numbers)")
    p.add_argument("--out", help="also write the CSV report here")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("attack", help="run an adversary harness script")
    p.add_argument("--id", required=True, choices=sorted(adversary.ATTACKS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--bad-slots", type=int, default=2)
    p.add_argument("--trials", type=int)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--mode", default="embed", choices=["embed", "oversized"])
    p.set_defaults(fn=cmd_attack)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
