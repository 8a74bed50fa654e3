import math
import os
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from encsynth.he import CipherValue, EMULATOR, EXACT, ExpApproxConfig, HeProfile, exact_factor
from encsynth.he.keys import EmulatorBackend, ExactBackend, make_backend
from encsynth.mdp import GridWorldSpec, build_grid_world
from encsynth.re_rl import (LearningRateSchedule, ReProblem, build_linear_system,
                            boltzmann_policy, lsvi_solve, z_learning_run)
from encsynth.service import (ABS, FACTOR_ID, Ack, Checkpoint, Error, FinalTable,
                              InProcessTransport, ProtocolError, RefreshRequest,
                              RefreshResponse, SessionAborted, SessionConfig, SessionFailed,
                              SessionInit, SocketServer, SocketTransport, SynthClient,
                              SynthServer, TableRequest, Transcript, Transition,
                              TransportError, clamp_desirability, deserialize_message,
                              extract_policy_at_client, frame, predict_refreshes,
                              run_session, serialize_message, session_transitions, unframe)
from encsynth.service.messages import (E_HE, E_MALFORMED, E_SEQUENCE, E_STATE, E_UNEXPECTED,
                                       E_UNKNOWN_STATE)

from conftest import chain_mdp

RLWE_PROFILE = HeProfile(2**12)


def rt(m):
    b = serialize_message(m)
    m2 = deserialize_message(unframe(frame(b)))
    assert type(m2) is type(m)
    assert serialize_message(m2) == b
    return m2


# ---- messages ------------------------------------------------------------

def test_every_variant_round_trips_with_empty_payloads():
    c = CipherValue(0.0, 40.0, 4, EMULATOR)
    for m in (SessionInit(), Transition(enc_cost=c), RefreshRequest(), RefreshResponse(),
              TableRequest(), FinalTable(), Error(), Ack()):
        rt(m)


def test_populated_variants_round_trip():
    b = ExactBackend()
    ent = [(3, b.encrypt(0.5)), (FACTOR_ID, b.encrypt(0.25))]
    m = rt(SessionInit(7, 0, EXACT, HeProfile(), ExpApproxConfig(), 1000.0, 2.0**16, b"k",
                       ent, [0, 5]))
    assert m.counts == [0, 5] and m.table[1][0] == FACTOR_ID
    assert rt(FinalTable(1, 9, ent, b'{"a": 1}')).metrics_dict() == {"a": 1}
    assert rt(Error(1, 2, E_HE, "boom é")).detail == "boom é"
    assert rt(RefreshResponse(1, 3, ent)).entries[0][1].payload == 0.5


def test_rlwe_messages_round_trip():
    rl = make_backend("rlwe", RLWE_PROFILE, seed=1)
    m = SessionInit(1, 0, rl.tag, rl.profile, ExpApproxConfig(), 1000.0, 2.0**16,
                    rl.eval_key(), [(0, rl.encrypt(1.0))], [0])
    rt(m)
    rt(Transition(1, 1, 0, 0, 0, ABS, rl.encrypt(0.1)))


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(sid=st.integers(0, 2**64 - 1), seq=st.integers(0, 2**64 - 1),
       ep=st.integers(0, 2**32 - 1), step=st.integers(0, 2**32 - 1),
       x=st.integers(0, 2**32 - 1), xn=st.integers(0, 2**32 - 1),
       v=st.floats(-2.0**20, 2.0**20), level=st.integers(0, 2**32 - 1),
       exact=st.booleans())
def test_random_transitions_round_trip(sid, seq, ep, step, x, xn, v, level, exact):
    c = CipherValue(v, 40.0, level, EXACT if exact else EMULATOR)
    m = rt(Transition(sid, seq, ep, step, x, xn, c))
    assert (m.session_id, m.seq, m.episode, m.step, m.x, m.x_next) == (sid, seq, ep, step, x, xn)


def test_truncated_frames_raise_protocol_errors():
    body = serialize_message(Transition(1, 2, 3, 4, 5, 6, CipherValue(1.0, 40.0, 4, EMULATOR)))
    for cut in range(len(body)):
        with pytest.raises(ProtocolError):
            deserialize_message(body[:cut])
    with pytest.raises(ProtocolError):
        unframe(frame(body)[:-1])
    with pytest.raises(ProtocolError):
        deserialize_message(body + b"\x00")
    with pytest.raises(ProtocolError) as info:
        deserialize_message(bytes([99]) + body[1:])
    assert info.value.offset >= 0


def reply_of(server, data):
    msg = deserialize_message(unframe(server.handle_frame(data)))
    return msg


@settings(max_examples=300, deadline=None)
@given(data=st.data())
def test_corrupted_frames_get_structured_replies(data):
    b = ExactBackend()
    server = SynthServer()
    init = SessionInit(1, 0, EXACT, b.profile, ExpApproxConfig(), 1000.0, 1.0, b"",
                       [(0, b.encrypt(1.0)), (1, b.encrypt(1.0))], [0, 0])
    assert isinstance(reply_of(server, frame(serialize_message(init))), Ack)
    good = frame(serialize_message(Transition(1, 1, 1, 0, 0, 1, b.encrypt(0.1))))
    raw = bytearray(good)
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(raw) - 1))
        raw[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(raw)))
    reply = reply_of(server, bytes(raw[:cut]))  # never raises
    assert isinstance(reply, (Ack, Error, RefreshRequest))


def test_truncated_frame_reply_is_malformed_error():
    server = SynthServer()
    reply = reply_of(server, b"\x00\x00")
    assert isinstance(reply, Error) and reply.code == E_MALFORMED


# ---- server ----------------------------------------------------------------

def server_session(backend, values, counts=None, kappa=1000.0, cfg=None):
    server = SynthServer()
    table = [(i, backend.encrypt(v)) for i, v in enumerate(values)]
    init = SessionInit(1, 0, backend.tag, backend.profile, cfg or ExpApproxConfig(), kappa,
                       1.0, backend.eval_key(), table, counts or [0] * len(values))
    assert isinstance(server.handle(init), Ack)
    return server


def test_first_transition_has_unit_step_size():
    b = EmulatorBackend(seed=0)
    server = server_session(b, [1.0, 0.6])
    reply = server.handle(Transition(1, 1, 1, 0, 0, 1, b.encrypt(0.1)))
    assert isinstance(reply, RefreshRequest)  # depth-4 factor needs a refresh
    entries = [(i, b.refresh(c)) for i, c in reply.entries]
    assert isinstance(server.handle(RefreshResponse(1, 2, entries)), Ack)
    got = b.decrypt(server.state.table[0])
    assert got == pytest.approx(math.exp(-0.1 / 0.15) * 0.6, abs=1e-5)
    assert server.state.counts[0] == 1


def test_absorbing_zero_cost_unit_step_gives_one():
    b = ExactBackend()
    server = server_session(b, [0.3])
    assert isinstance(server.handle(Transition(1, 1, 1, 0, 0, ABS, b.encrypt(0.0))), Ack)
    assert b.decrypt(server.state.table[0]) == 1.0


def test_server_error_codes():
    b = ExactBackend()
    assert reply_of(SynthServer(), frame(serialize_message(TableRequest(1, 1)))).code == E_STATE
    server = server_session(b, [1.0])
    fr = lambda m: frame(serialize_message(m))
    assert reply_of(server, fr(Transition(1, 1, 0, 0, 5, ABS, b.encrypt(0.1)))).code == \
        E_UNKNOWN_STATE
    assert reply_of(server, fr(Transition(1, 1, 0, 0, 0, 9, b.encrypt(0.1)))).code == \
        E_SEQUENCE  # seq 1 already used
    assert reply_of(server, fr(RefreshResponse(1, 5, []))).code == E_UNEXPECTED
    assert reply_of(server, fr(TableRequest(2, 6))).code == E_STATE
    em = EmulatorBackend()
    assert reply_of(server, fr(Transition(1, 7, 0, 0, 0, ABS, em.encrypt(0.1)))).code == E_HE
    assert isinstance(reply_of(server, fr(TableRequest(1, 8))), FinalTable)


def test_init_rejects_insufficient_profile():
    b = EmulatorBackend(HeProfile(2**14, (60, 40, 40, 60), 40))
    server = SynthServer()
    init = SessionInit(1, 0, b.tag, b.profile, ExpApproxConfig(), 1000.0, 1.0, b.eval_key(),
                       [(0, b.encrypt(1.0))], [0])
    reply = reply_of(server, frame(serialize_message(init)))
    assert isinstance(reply, Error) and reply.code == E_HE


# ---- client refresh ----------------------------------------------------------

@pytest.mark.parametrize("name", ["emulator", "rlwe"])
def test_refresh_preserves_value_and_restores_level(name):
    b = make_backend(name, RLWE_PROFILE if name == "rlwe" else HeProfile(), seed=2)
    c = b.encrypt(0.8)
    assert abs(b.decrypt(b.refresh(c)) - 0.8) < 1e-5
    low = b.evaluator.rescale(b.evaluator.mul(c, c))
    r = b.refresh(low)
    assert r.level == b.profile.usable_levels and abs(b.decrypt(r) - 0.64) < 1e-4


# ---- sessions ------------------------------------------------------------------

def session(problem, backend, episodes, seed, transport=None, **kw):
    cfg = SessionConfig(episodes, kw.pop("max_steps", 200),
                        exp_config=kw.pop("exp_config", ExpApproxConfig(lam=problem.lam)), **kw)
    server = SynthServer()
    tr = transport or InProcessTransport(server)
    res = run_session(problem, backend, tr, cfg, np.random.default_rng(seed),
                      transcript=Transcript().keep_log())
    return res, server


def test_one_state_problem_matches_plaintext():
    prob = ReProblem.uniform(chain_mdp(1, cost=0.1), 0.15)
    res, _ = session(prob, EmulatorBackend(seed=1), 100, 5)
    ref = z_learning_run(prob, LearningRateSchedule(1000.0), 100, 200, np.random.default_rng(5))
    assert abs(res.z[1] - ref.z[1]) <= 1e-4


def test_seeded_episode_replay_matches_plaintext(grid9):
    prob = ReProblem.uniform(grid9.mdp)
    res, _ = session(prob, EmulatorBackend(seed=2), 1, 8)
    ref = z_learning_run(prob, LearningRateSchedule(1000.0), 1, 200, np.random.default_rng(8))
    assert np.max(np.abs(res.z - ref.z)) <= 1e-4
    assert res.metrics["transitions"] == ref.steps


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_backend_bit_identical_to_plaintext(grid3, seed):
    prob = ReProblem.uniform(grid3.mdp)
    cfg = ExpApproxConfig()
    res, _ = session(prob, ExactBackend(), 60, seed, checkpoints=(0, 10, 60))
    ref = z_learning_run(prob, LearningRateSchedule(1000.0), 60, 200,
                         np.random.default_rng(seed), checkpoints=(0, 10, 60),
                         factor=exact_factor(cfg))
    assert np.array_equal(res.z, ref.z)
    for k in (0, 10, 60):
        assert np.array_equal(res.snapshots[k], ref.snapshots[k])


def count_pairs(log):
    """Refresh request/response pairs in a transcript, checking their adjacency."""
    msgs = [(d, deserialize_message(unframe(b))) for d, b in log]
    pairs = 0
    for k, (d, m) in enumerate(msgs):
        assert not isinstance(m, Error)
        if isinstance(m, RefreshRequest):
            assert d == b"<"
            assert isinstance(msgs[k + 1][1], RefreshResponse)
            assert isinstance(msgs[k + 2][1], Ack)
            pairs += 1
    return pairs


@pytest.mark.parametrize("cfg", [ExpApproxConfig(), ExpApproxConfig(degree=2)],
                         ids=["depth4", "depth2"])
def test_refresh_count_matches_depth_prediction(grid3, cfg):
    prob = ReProblem.uniform(grid3.mdp)
    be = EmulatorBackend(seed=3)
    res, server = session(prob, be, 100, 13, exp_config=cfg)
    pred = predict_refreshes(session_transitions(prob, 100, 200, np.random.default_rng(13)),
                             be.profile.usable_levels, cfg)
    assert res.metrics["refresh_rounds"] == pred["refresh_rounds"]
    assert res.metrics["refreshed_entries"] == pred["refreshed_entries"]
    assert res.metrics["client_refresh_rounds"] == pred["refresh_rounds"]
    assert count_pairs(res.transcript.log) == pred["refresh_rounds"]
    assert sum(server.state.counts.values()) == res.metrics["transitions"]


def test_rlwe_session_refreshes_match_prediction(grid3):
    prob = ReProblem.uniform(grid3.mdp)
    be = make_backend("rlwe", RLWE_PROFILE, seed=4)
    res, _ = session(prob, be, 4, 21, max_steps=20)
    pred = predict_refreshes(session_transitions(prob, 4, 20, np.random.default_rng(21)),
                             be.profile.usable_levels, ExpApproxConfig())
    assert res.metrics["refresh_rounds"] == pred["refresh_rounds"]
    ref = z_learning_run(prob, LearningRateSchedule(1000.0), 4, 20, np.random.default_rng(21))
    assert np.max(np.abs(res.z - ref.z)) <= 1e-3


def test_transcripts_identical_across_transports(grid3):
    prob = ReProblem.uniform(grid3.mdp)
    a, _ = session(prob, EmulatorBackend(seed=6), 20, 3)
    with SocketServer(SynthServer()) as srv:
        with SocketTransport(srv.host, srv.port) as tr:
            b, _ = session(prob, EmulatorBackend(seed=6), 20, 3, transport=tr)
    assert a.transcript.log == b.transcript.log
    assert a.metrics["transcript_sha256"] == b.metrics["transcript_sha256"]
    c, _ = session(prob, EmulatorBackend(seed=6), 20, 3)
    assert c.transcript.hexdigest() == a.transcript.hexdigest()


class FlakyTransport(InProcessTransport):
    def __init__(self, server, fail_after):
        super().__init__(server)
        self.left = fail_after

    def exchange(self, data):
        self.left -= 1
        if self.left < 0:
            raise TransportError("link down")
        return super().exchange(data)


def test_transport_loss_aborts_with_resumable_checkpoint(grid3, tmp_path):
    prob = ReProblem.uniform(grid3.mdp)
    cfg = SessionConfig(30, exp_config=ExpApproxConfig(), checkpoints=(5, 30))
    full = run_session(prob, ExactBackend(), InProcessTransport(SynthServer()), cfg,
                       np.random.default_rng(1))
    with pytest.raises(SessionAborted) as info:
        run_session(prob, ExactBackend(), FlakyTransport(SynthServer(), 150), cfg,
                    np.random.default_rng(1))
    ck = info.value.checkpoint
    assert ck is not None and 0 < ck.episode < 30
    ck.save(tmp_path / "ck.json")
    ck = Checkpoint.load(tmp_path / "ck.json")
    resumed = run_session(prob, ExactBackend(), InProcessTransport(SynthServer()), cfg,
                          np.random.default_rng(999), resume=ck)
    assert np.array_equal(resumed.z, full.z)
    assert np.array_equal(resumed.snapshots[30], full.snapshots[30])


def test_unreachable_server_aborts():
    with pytest.raises(TransportError):
        SocketTransport("127.0.0.1", 1, timeout=1.0)


def test_server_error_surfaces_as_session_failure(grid3):
    prob = ReProblem.uniform(grid3.mdp)
    bad = ExpApproxConfig(degree=8, c_max=1.0, lam=0.15, squarings=3)  # depth 7 > 4
    with pytest.raises(SessionFailed) as info:
        session(prob, EmulatorBackend(), 1, 0, exp_config=bad)
    assert info.value.code == E_HE


# ---- policy extraction -------------------------------------------------------

def test_clamp_and_uniform_policy(grid3):
    prob = ReProblem.uniform(grid3.mdp)
    z = np.ones(grid3.mdp.num_states)
    assert np.allclose(extract_policy_at_client(z, prob), prob.behavior)
    z[0] = -1e-9
    assert clamp_desirability(z)[0] == 1e-12
    pi = extract_policy_at_client(z, prob)
    assert np.allclose(pi.sum(axis=1), 1.0)


def test_extracted_policy_moves_goalward(grid9):
    from test_generic_rl import bfs_distance
    prob = ReProblem.uniform(grid9.mdp)
    res, _ = session(prob, ExactBackend(), 1500, 0)
    pi = extract_policy_at_client(res.z, prob)
    d = bfs_distance(grid9)
    for x in grid9.mdp.nonabsorbing:
        u = int(np.argmax(pi[x]))
        assert d[grid9.mdp.next_state[x, u]] <= d[x]


# ---- privacy boundary ----------------------------------------------------------

BLOCKER = textwrap.dedent("""
    import sys
    class Block:
        def find_spec(self, name, path=None, target=None):
            if name in ("encsynth.he.keys", "encsynth.rlwe.secret"):
                raise ImportError("blocked secret-key module " + name)
    sys.meta_path.insert(0, Block())
""")


def test_server_imports_without_secret_key_modules():
    code = BLOCKER + textwrap.dedent("""
        import encsynth.service, encsynth.service.server, encsynth.service.transport
        import encsynth.rlwe, encsynth.rlwe.evaluator, encsynth.he
        from encsynth.service import SynthServer
        SynthServer()
        assert "encsynth.he.keys" not in sys.modules
        assert "encsynth.rlwe.secret" not in sys.modules
        try:
            encsynth.service.run_session
        except ImportError:
            pass
        else:
            raise SystemExit("client names reachable")
    """)
    subprocess.run([sys.executable, "-c", code], check=True)


def test_rlwe_session_against_key_free_server_process(grid3):
    code = BLOCKER + textwrap.dedent("""
        import time
        from encsynth.service.server import SynthServer
        from encsynth.service.transport import SocketServer
        srv = SocketServer(SynthServer()).start()
        print(srv.port, flush=True)
        time.sleep(120)
    """)
    proc = subprocess.Popen([sys.executable, "-c", code], stdout=subprocess.PIPE, text=True)
    try:
        port = int(proc.stdout.readline())
        prob = ReProblem.uniform(grid3.mdp)
        with SocketTransport("127.0.0.1", port) as tr:
            res, _ = session(prob, make_backend("rlwe", RLWE_PROFILE, seed=9), 2, 4,
                             transport=tr, max_steps=10)
        ref = z_learning_run(prob, LearningRateSchedule(1000.0), 2, 10, np.random.default_rng(4))
        assert np.max(np.abs(res.z - ref.z)) <= 1e-3
    finally:
        proc.kill()
        proc.wait()
