from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmec import names
from fedmec.cellular import attach
from fedmec.errors import (
    AudienceMismatch,
    BadSignature,
    Expired,
    NoSession,
    NotEntitled,
    StaleWatch,
    SubjectIpMismatch,
    SubscriptionPending,
    UnknownSourceIP,
)
from fedmec.harness.config import PREFETCH, default_config, load_config
from fedmec.harness.scenarios import auth_outcome, interruption_config, resume_outcome, run_prelude
from fedmec.harness.topology import build_federation
from fedmec.mecsys import Datastore, MecManager, OidcModule
from fedmec.mecsys import tokens
from fedmec.mecsys.datastore import HOME_MEC, LOCAL_HSS
from fedmec.netsim import Network
from fedmec.wire import (
    InitialContextSetupRequest,
    InitialUEMessage,
    MobilityAdvertise,
    SubscriptionRecord,
    UEContextModification,
    UEContextRelease,
    decode_frame,
)

IMSI = "001010000000001"
OTHER = "001010000000002"
APP = "game"
KEY = bytes(range(32))
FEDERATION = {"00101": "A", "00102": "B"}


def visited_oidc(*ues, entitled=True, lifetime=300_000):
    """OIDC module of network B with the given (imsi, ip) pairs attached and provisioned."""
    ds = Datastore("B", "00102")
    for teid, (imsi, ip) in enumerate(ues, 1):
        ds.activate(imsi, teid, ip, "00101", 0.0)
        ds.store_subscription(SubscriptionRecord(imsi, "00101", entitled, {}), 0.0)
    return OidcModule("B", ds, {APP: KEY}, lifetime)


def home_token(now=0.0, lifetime=300_000, audience=APP, subject=IMSI):
    return tokens.sign(KEY, "A", subject, audience, now, lifetime, bytes(16)).encode()


def flip_bit(token: str) -> str:
    tok = tokens.parse(token)
    sig = bytearray(tok.signature)
    sig[0] ^= 0x01
    return tokens.AccessToken(**{**tok.__dict__, "signature": bytes(sig)}).encode()


# -- S1 tap


def test_tap_s1_builds_context():
    net = Network()
    ds = Datastore("B", "00102")
    mgr = MecManager("B", ds, FEDERATION)
    assert mgr.tap_s1(net, "enb.B#1", InitialUEMessage(IMSI)) == []
    assert mgr.tap_s1(net, "enb.B#1", InitialContextSetupRequest(7, "10.0.2.9")) == []
    ctx = ds.active(IMSI)
    assert (ctx.imsi, ctx.teid, ctx.ue_ip, ctx.home_plmn) == (IMSI, 7, "10.0.2.9", "00101")
    mgr.tap_s1(net, "enb.B#1", UEContextModification("10.0.2.10"))
    assert ds.context_for_ip("10.0.2.10").imsi == IMSI
    assert ds.context_for_ip("10.0.2.9") is None
    mgr.tap_s1(net, "enb.B#1", UEContextRelease("detach"))
    assert ds.active(IMSI) is None


def test_tap_s1_release_of_unknown_ue_is_noop():
    ds = Datastore("B", "00102")
    mgr = MecManager("B", ds, FEDERATION)
    before = ds.snapshot()
    assert mgr.tap_s1(Network(), "enb.B#9", UEContextRelease("detach")) == []
    assert ds.snapshot() == before


def test_tap_s1_orphan_context_logged_and_ignored(caplog):
    ds = Datastore("B", "00102")
    mgr = MecManager("B", ds, FEDERATION)
    mgr.tap_s1(Network(), "enb.B#3", InitialContextSetupRequest(7, "10.0.2.9"))
    assert mgr.orphans == ["enb.B#3"]
    assert not ds.contexts
    assert "enb.B#3" in caplog.text


def test_prefetch_fires_at_context_setup():
    cfg = interruption_config(3, default_config())
    out = resume_outcome(cfg, "prefetch")
    trace = out.report.trace
    (tap,) = [r for r in trace if r.msg == "InitialContextSetupRequest" and r.dst.startswith("mecmgr.B")]
    t = tap.deliver_ms
    (sub,) = [r for r in trace if r.msg == "SubscriptionFetchReq" and r.src.startswith("mecmgr.B")
              and r.dst.startswith("proxy.B")]
    assert sub.sent_ms == t
    # the state request first walks manager -> AMS -> AMC inside the platform
    hops = [r for r in trace if r.sent_ms >= t and (r.msg, r.src.split("#")[0]) in
            {("UEArrivalNotice", "mecmgr.B"), ("StateFetchReq", "ams.B")}]
    assert [r.msg for r in hops] == ["UEArrivalNotice", "StateFetchReq"]
    lc = cfg.links["mec_internal"]
    expected = t + sum(lc.latency_ms + r.size * 8 / (lc.bandwidth_mbps * 1000) for r in hops)
    (state,) = [r for r in trace if r.msg == "StateFetchReq" and r.src.startswith("amc.B")
                and r.dst.startswith("proxy.B")]
    assert state.sent_ms == pytest.approx(expected, abs=1e-9)


# -- OIDC authentication


def test_token_subject_is_the_attached_imsi():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    tok = tokens.parse(oidc.oidc_authenticate(APP, "10.0.2.2", 1000.0))
    assert (tok.issuer, tok.subject, tok.audience) == ("B", IMSI, APP)
    assert tok.expires_at_ms - tok.issued_at_ms == 300_000
    assert oidc.ds.issued == [(1000.0, IMSI, APP, "10.0.2.2")]


def test_spoofed_source_ip_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    with pytest.raises(UnknownSourceIP):
        oidc.oidc_authenticate(APP, "10.0.2.77", 0.0)
    assert not oidc.ds.issued


def test_inactive_context_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    oidc.ds.deactivate(IMSI)
    with pytest.raises(UnknownSourceIP):
        oidc.oidc_authenticate(APP, "10.0.2.2", 0.0)


def test_not_entitled():
    oidc = visited_oidc((IMSI, "10.0.2.2"), entitled=False)
    with pytest.raises(NotEntitled):
        oidc.oidc_authenticate(APP, "10.0.2.2", 0.0)


def test_subscription_pending_before_fetch():
    ds = Datastore("B", "00102")
    ds.activate(IMSI, 1, "10.0.2.2", "00101", 0.0)
    oidc = OidcModule("B", ds, {APP: KEY})
    with pytest.raises(SubscriptionPending):
        oidc.oidc_authenticate(APP, "10.0.2.2", 0.0)


# -- token validation


def test_home_token_accepted_abroad():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    assert oidc.validate_token(APP, home_token(), "10.0.2.2", 1.0) == IMSI


def test_flipped_signature_bit_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    with pytest.raises(BadSignature):
        oidc.validate_token(APP, flip_bit(home_token()), "10.0.2.2", 1.0)


@given(pos=st.integers(0, 10_000), bit=st.integers(0, 7))
def test_any_flipped_bit_in_token_text_rejected(pos, bit):
    token = home_token()
    pos %= len(token)
    mutated = token[:pos] + chr(ord(token[pos]) ^ (1 << bit)) + token[pos + 1:]
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    with pytest.raises((BadSignature, AudienceMismatch, Expired, SubjectIpMismatch)):
        oidc.validate_token(APP, mutated, "10.0.2.2", 1.0)


def test_expired_token_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    token = home_token(now=0.0, lifetime=100)
    assert oidc.validate_token(APP, token, "10.0.2.2", 99.0) == IMSI
    with pytest.raises(Expired):
        oidc.validate_token(APP, token, "10.0.2.2", 100.0)


def test_audience_mismatch_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    oidc.app_keys["chat"] = KEY
    with pytest.raises(AudienceMismatch):
        oidc.validate_token("chat", home_token(), "10.0.2.2", 1.0)


def test_unknown_app_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"))
    with pytest.raises(NotEntitled):
        oidc.validate_token("chat", home_token(), "10.0.2.2", 1.0)


def test_token_from_another_ues_ip_rejected():
    oidc = visited_oidc((IMSI, "10.0.2.2"), (OTHER, "10.0.2.3"))
    with pytest.raises(SubjectIpMismatch):
        oidc.validate_token(APP, home_token(subject=IMSI), "10.0.2.3", 1.0)
    with pytest.raises(SubjectIpMismatch):
        oidc.validate_token(APP, home_token(subject=OTHER), "10.0.2.2", 1.0)


def test_cross_presented_tokens_in_a_live_federation():
    fed = build_federation(default_config())
    net = fed.net
    token = run_prelude(fed)
    ue1, ue2 = fed.ues[IMSI], fed.ues[OTHER]
    attach(net, ue1, "B")
    attach(net, ue2, "B")
    oidc = fed.systems["B"].oidc
    with pytest.raises(SubjectIpMismatch):
        oidc.validate_token(APP, token, ue2.ip, net.now_ms)


def test_ip_rotation_tracked():
    fed = build_federation(default_config())
    net, ue = fed.net, fed.ue
    attach(net, ue, "A")
    old = ue.ip
    fed.systems["A"].manager.fetch_subscription(net, IMSI, PREFETCH)
    new = fed.cores["A"].mme.rotate_ip(net, IMSI)
    net.run_until_idle()
    assert ue.ip == new != old
    oidc = fed.systems["A"].oidc
    token = oidc.oidc_authenticate(APP, new, net.now_ms)
    assert oidc.validate_token(APP, token, new, net.now_ms) == IMSI
    with pytest.raises(UnknownSourceIP):
        oidc.oidc_authenticate(APP, old, net.now_ms)
    with pytest.raises(SubjectIpMismatch):
        oidc.validate_token(APP, token, old, net.now_ms)


# -- subscription fetch


def test_concurrent_fetches_coalesce():
    fed = build_federation(default_config())
    net = fed.net
    attach(net, fed.ue, "B")
    mgr = fed.systems["B"].manager
    first = len(net.trace)
    mgr.fetch_subscription(net, IMSI, PREFETCH)
    mgr.fetch_subscription(net, IMSI, PREFETCH)
    net.run_until_idle()
    sent = [r for r in net.trace[first:] if r.msg == "SubscriptionFetchReq" and r.dst.startswith("proxy.B")]
    assert len(sent) == 1
    assert fed.systems["B"].datastore.subscription(IMSI).source == HOME_MEC


def test_local_subscriber_never_touches_the_proxy():
    fed = build_federation(default_config())
    net = fed.net
    attach(net, fed.ue, "A")
    fed.systems["A"].manager.fetch_subscription(net, IMSI, PREFETCH)
    net.run_until_idle()
    assert fed.systems["A"].datastore.subscription(IMSI).source == LOCAL_HSS
    assert not any(r.dst.startswith("proxy.") or r.src.startswith("proxy.") for r in net.trace)


def test_prefetched_entry_ready_before_identification():
    # with default links the proxy round trip (24 ms) outlasts the radio leg
    # to the app (~5 ms); the ordering holds once links are calibrated
    rep = auth_outcome("MPT", load_config("paper-calibrated")).report
    assert rep.marks["M1.end"] <= rep.marks["M1.need"]
    default = auth_outcome("MPT", default_config()).report
    assert default.marks["M1.start"] < default.marks["M1.need"] < default.marks["M1.end"]


# -- mobility watches


def relayed(proxy):
    return Counter((d, type(decode_frame(inner)[0]).__name__) for d, _, inner in proxy.relayed)


def test_exactly_one_advertise_crosses_the_proxy():
    fed = build_federation(default_config())
    run_prelude(fed)
    assert relayed(fed.proxies["A"])[("out", "MobilityAdvertise")] == 1
    assert relayed(fed.proxies["B"])[("in", "MobilityAdvertise")] == 1
    watch = fed.systems["B"].ams.watches[(IMSI, APP)]
    assert (watch.source_network, watch.source_platform) == ("A", names.platform("A"))


def test_readvertise_replaces_watch():
    fed = build_federation(default_config())
    net = fed.net
    run_prelude(fed)
    ams = fed.systems["B"].ams
    first = ams.watches[(IMSI, APP)].created_at_ms
    net.advance(500.0)
    assert fed.systems["A"].amc.advertise(net, MobilityAdvertise("A", "A", IMSI, APP, names.platform("A"))) == 1
    net.run_until_idle()
    assert list(ams.watches) == [(IMSI, APP)]
    assert ams.watches[(IMSI, APP)].created_at_ms > first


def test_watches_expire_after_ttl():
    cfg = default_config().with_(watch_ttl_ms=60_000)
    fed = build_federation(cfg)
    net = fed.net
    run_prelude(fed)
    ams = fed.systems["B"].ams
    net.advance(59_000.0)
    assert ams.expire(net.now_ms) == 0
    net.advance(1_000.0)
    with pytest.raises(StaleWatch):
        ams.handover_state(net, IMSI, APP)
    assert not ams.watches


def test_handover_without_watch_is_stale():
    fed = build_federation(default_config())
    with pytest.raises(StaleWatch):
        fed.systems["B"].ams.handover_state(fed.net, IMSI, APP)


def test_evicted_source_state_reported():
    fed = build_federation(default_config())
    net, ue = fed.net, fed.ue
    run_prelude(fed)
    fed.app("A").evict(IMSI)
    ue.login_mode, ue.resume = "reauth", True
    ue.attach(net, "B")
    net.run_until_idle()
    assert ue.last_error == "SourceStateGone"
    assert not ue.received


# -- application state


def test_two_updates_hand_over_version_two():
    out = resume_outcome(default_config(), "v2", updates=[b"first", b"second"])
    fed = out.federation
    state = fed.app("B").states[IMSI]
    assert (state.version, state.blob) == (2, b"second")
    assert fed.ue.received[-1] == b"second"


def test_empty_blob_still_bumps_version():
    fed = build_federation(default_config())
    net, ue = fed.net, fed.ue
    ue.login_mode, ue.app_id = "reauth", APP
    attach(net, ue, "A")
    app = fed.app("A")
    session = ue.sessions[APP]
    assert app.app_update_state(net, session, b"x").version == 1
    assert app.app_update_state(net, session, b"").version == 2
    assert app.states[IMSI].blob == b""


def test_update_after_detach_has_no_session():
    fed = build_federation(default_config())
    run_prelude(fed)
    session = fed.ue.sessions[APP]
    with pytest.raises(NoSession):
        fed.app("A").app_update_state(fed.net, session, b"late")


# -- token reuse


def oidc_frames(rep):
    return (rep.count("OidcAuthRequest", dst_prefix="oidc.B"), rep.count("OidcAuthResponse", src_prefix="oidc.B"))


def test_token_reuse_skips_oidc():
    cfg = default_config()
    assert oidc_frames(auth_outcome("MUA", cfg).report) == (1, 1)
    assert oidc_frames(auth_outcome("MUT", cfg).report) == (0, 0)


def test_token_reuse_session_equivalent():
    cfg = default_config()
    fresh = auth_outcome("MUA", cfg).federation.app("B").session_for(IMSI)
    reused = auth_outcome("MUT", cfg).federation.app("B").session_for(IMSI)
    assert fresh.comparable() == reused.comparable()
    assert fresh.token_nonce != reused.token_nonce


@settings(max_examples=5, deadline=None)
@given(blobs=st.lists(st.binary(max_size=64), min_size=1, max_size=4))
def test_handover_delivers_latest_blob(blobs):
    out = resume_outcome(default_config(), "blobs", updates=blobs)
    assert out.federation.ue.received[-1] == blobs[-1]
    assert out.federation.app("B").states[IMSI].version == len(blobs)
