import socket
import threading

import pytest

from tandem import cli
from tandem import client as cl
from tandem.adversary import SeededRng, field_length_profile
from tandem.service import serve
from tandem.state import setup


@pytest.fixture(scope="module")
def stack(toy_params_k2_module):
    from tests.conftest import mid_epoch_clock

    params = toy_params_k2_module
    state = setup(params, rng=SeededRng(70), now_fn=mid_epoch_clock(params))
    server = serve(state, "127.0.0.1", 0)
    sp_service = cl.SpService(params.group, rng=SeededRng(71))
    sp_server = cl.SpServer("127.0.0.1", 0, sp_service).start()
    yield state, server, sp_server
    server.shutdown()
    server.server_close()
    sp_server.shutdown()


@pytest.fixture(scope="module")
def toy_params_k2_module():
    from tandem.commitments import generate_aux_group
    from tandem.state import TandemParams

    aux = generate_aux_group(512, 128, rng=SeededRng(7))
    return TandemParams(
        group_name="toy61", ell=16, k=2, rate_limit=64, epoch_len=86400,
        modulus_bits=512, beta=96, aux_modulus=aux.modulus, aux_order=aux.order,
    )


def ts_addr(server):
    return f"{server.server_address[0]}:{server.server_address[1]}"


def test_cli_end_to_end_all_flows(stack, tmp_path):
    state, server, sp_server = stack
    wallet_path = str(tmp_path / "wallet.cbor")
    base = ["--ts", ts_addr(server), "--wallet", wallet_path]
    assert cli.main(["register", *base, "--user", "cli-user", "--passphrase", "pp"]) == 0
    assert cli.main(["obtain", *base, "--count", "5"]) == 0
    sp = f"127.0.0.1:{sp_server.port}"
    for flow in ("schnorr", "elgamal", "bbs-issue", "bbs-show"):
        assert cli.main(["spend", *base, "--tcp", flow, "--sp", sp]) == 0, flow
    assert sp_server.service.results and all(ok for _, ok in sp_server.service.results)
    assert cli.main(["rlist", *base]) == 0


def test_cli_spend_without_tokens(stack, tmp_path):
    state, server, sp_server = stack
    wallet_path = str(tmp_path / "w-empty.cbor")
    base = ["--ts", ts_addr(server), "--wallet", wallet_path]
    assert cli.main(["register", *base, "--user", "cli-user-2", "--passphrase", "pp"]) == 0
    code = cli.main(["spend", *base, "--tcp", "schnorr", "--sp", f"127.0.0.1:{sp_server.port}"])
    assert code == cl.EXIT_NO_TOKENS


def test_cli_block_then_spend(stack, tmp_path):
    state, server, sp_server = stack
    wallet_path = str(tmp_path / "w-block.cbor")
    base = ["--ts", ts_addr(server), "--wallet", wallet_path]
    assert cli.main(["register", *base, "--user", "cli-user-3", "--passphrase", "pp3"]) == 0
    assert cli.main(["obtain", *base, "--count", "2"]) == 0
    assert cli.main(["block", *base, "--passphrase", "pp3"]) == 0
    code = cli.main(["spend", *base, "--tcp", "schnorr", "--sp", f"127.0.0.1:{sp_server.port}"])
    assert code == cl.EXIT_BLOCKED
    wallet = cl.Wallet.load(wallet_path)
    assert wallet.user.tokens == []  # token store emptied
    assert cli.main(["obtain", *base, "--count", "1"]) == cl.EXIT_PROTOCOL


def test_cli_network_error_code(tmp_path):
    code = cli.main(["rlist", "--ts", "127.0.0.1:1", "--wallet", str(tmp_path / "x")])
    assert code == cl.EXIT_NETWORK


def test_cooldown_refusal(stack, tmp_path):
    state, server, sp_server = stack
    import json

    cfg = {"cooldown": 3600}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    wallet_path = str(tmp_path / "w-cd.cbor")
    base = ["--ts", ts_addr(server), "--wallet", wallet_path]
    assert cli.main(["register", *base, "--user", "cli-user-4", "--passphrase", "pp"]) == 0
    assert cli.main(["obtain", *base, "--count", "1"]) == 0
    sp = f"127.0.0.1:{sp_server.port}"
    code = cli.main(["--config", str(cfg_path), "spend", *base, "--tcp", "schnorr", "--sp", sp])
    assert code == cl.EXIT_PROTOCOL  # inside the cool-down
    code = cli.main(["--config", str(cfg_path), "spend", *base, "--tcp", "schnorr", "--sp", sp, "--force"])
    assert code == 0


def test_wallet_spent_before_send(stack, tmp_path):
    """If the device dies right after the spend message is built, the
    persisted wallet already marks the token spent."""
    state, server, sp_server = stack
    conn = cl.Connection(*server.server_address)
    env = cl.ServerEnv.fetch(conn)
    wallet = cl.do_register(conn, env, "crash-user", "pw", str(tmp_path / "w-crash.cbor"), rng=SeededRng(72))
    token = cl.do_obtain(conn, env, wallet, count=1, rng=SeededRng(73))[0]
    from tandem.protocol import UserGenSharesSession

    sess = UserGenSharesSession(wallet.user, env.hpk, env.bs_pk, token,
                                sid=cl.new_sid(), rng=SeededRng(74), on_spent=wallet.save)
    _, r1 = conn.call("genshares.1", sess.sid, sess.msg1())
    sess.msg2(r1)  # message built; crash before sending
    reloaded = cl.Wallet.load(str(tmp_path / "w-crash.cbor"))
    assert all(t.spent for t in reloaded.user.tokens)
    conn.close()


def test_socks5_proxy_pass_through(stack, tmp_path):
    state, server, sp_server = stack
    proxy_port = _start_mini_socks5()
    conn = cl.Connection(*server.server_address, proxy=("127.0.0.1", proxy_port))
    env = cl.ServerEnv.fetch(conn)
    assert env.params.k == state.params.k
    conn.close()


def _start_mini_socks5() -> int:
    """A tiny in-test SOCKS5 server that forwards one CONNECT."""
    lsock = socket.socket()
    lsock.bind(("127.0.0.1", 0))
    lsock.listen(4)
    port = lsock.getsockname()[1]

    def pump(a, b):
        try:
            while True:
                data = a.recv(4096)
                if not data:
                    break
                b.sendall(data)
        except OSError:
            pass
        finally:
            a.close()
            b.close()

    def serve_proxy():
        while True:
            try:
                sock, _ = lsock.accept()
            except OSError:
                return
            if sock.recv(2) != b"\x05\x01":
                sock.close()
                continue
            sock.recv(1)
            sock.sendall(b"\x05\x00")
            req = sock.recv(4)
            if req[3] == 0x01:
                host = socket.inet_ntoa(sock.recv(4))
            else:
                n = sock.recv(1)[0]
                host = sock.recv(n).decode()
            port_ = int.from_bytes(sock.recv(2), "big")
            upstream = socket.create_connection((host, port_))
            sock.sendall(b"\x05\x00\x00\x01" + socket.inet_aton("127.0.0.1") + (0).to_bytes(2, "big"))
            threading.Thread(target=pump, args=(sock, upstream), daemon=True).start()
            threading.Thread(target=pump, args=(upstream, sock), daemon=True).start()

    threading.Thread(target=serve_proxy, daemon=True).start()
    return port


def test_spend_field_length_profiles_match(stack, tmp_path):
    """Two different users' spend transcripts have identical field-length
    profiles (all wire fields fixed width)."""
    state, server, sp_server = stack
    profiles = []
    for name, seed in (("prof-a", 800), ("prof-b", 900)):
        conn = cl.Connection(*server.server_address)
        env = cl.ServerEnv.fetch(conn)
        wallet = cl.do_register(conn, env, name, "pw", str(tmp_path / f"{name}.cbor"), rng=SeededRng(seed))
        token = cl.do_obtain(conn, env, wallet, count=1, rng=SeededRng(seed + 1))[0]
        from tandem.protocol import UserGenSharesSession

        sess = UserGenSharesSession(wallet.user, env.hpk, env.bs_pk, token,
                                    sid=cl.new_sid(), rng=SeededRng(seed + 2), on_spent=wallet.save)
        _, r = conn.call("genshares.1", sess.sid, sess.msg1())
        _, r = conn.call("genshares.2", sess.sid, sess.msg2(r))
        _, r = conn.call("genshares.3", sess.sid, sess.msg3(r))
        _, r = conn.call("genshares.4", sess.sid, sess.msg4(r))
        profiles.append(field_length_profile(sess.transcript))
        conn.close()
    assert profiles[0] == profiles[1]


def test_bench_affine_byte_growth(toy_params_k2_module):
    import dataclasses

    def factory(k):
        return dataclasses.replace(toy_params_k2_module, k=k, rate_limit=64)

    rows = cl.bench([2, 3, 4], runs=2, group_name="toy61", rng=SeededRng(90),
                    log=lambda *_: None, params_factory=factory)
    ks = [2, 3, 4]
    for phase in ("obtain", "genshares"):
        ys = [next(r.bytes_up for r in rows if r.k == k and r.phase == phase and r.side == "user") for k in ks]
        b0, b1, r2 = cl.affine_fit(ks, ys)
        assert r2 > 0.99
        assert b1 > 0


def test_affine_fit_exact_line():
    b0, b1, r2 = cl.affine_fit([1, 2, 4, 8], [7 + 3 * x for x in (1, 2, 4, 8)])
    assert b0 == pytest.approx(7) and b1 == pytest.approx(3) and r2 == pytest.approx(1.0)


def test_config_env_var(tmp_path, monkeypatch):
    import json

    cfg_path = tmp_path / "env-cfg.json"
    cfg_path.write_text(json.dumps({"cooldown": 123, "k": 4}))
    monkeypatch.setenv("TANDEM_CONFIG", str(cfg_path))
    cfg = cli.load_config(None)
    assert cfg["cooldown"] == 123 and cfg["k"] == 4
    monkeypatch.delenv("TANDEM_CONFIG")
    assert cli.load_config(None)["k"] == 20


def test_bench_with_synthetic_revocation(toy_params_k2_module):
    import dataclasses

    def factory(k):
        return dataclasses.replace(toy_params_k2_module, k=k, rate_limit=64)

    rows = cl.bench([2], runs=1, group_name="toy61", rng=SeededRng(91),
                    log=lambda *_: None, params_factory=factory, include_revocation=10)
    gs_up = next(r.bytes_up for r in rows if r.phase == "genshares")
    rows0 = cl.bench([2], runs=1, group_name="toy61", rng=SeededRng(92),
                     log=lambda *_: None, params_factory=factory)
    gs_up0 = next(r.bytes_up for r in rows0 if r.phase == "genshares")
    assert gs_up > gs_up0  # non-revocation proof material included
