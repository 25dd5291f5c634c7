import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmec.errors import LivelockGuard, NoRoute
from fedmec.netsim import Link, LoopbackNetwork, Network, transfer_time
from fedmec.wire import Data, InitialUEMessage, encode_frame


class Recorder:
    def __init__(self, name):
        self.name = name
        self.got = []

    def on_frame(self, net, src, dst, frame):
        self.got.append((net.now_ms, src, dst, frame))


class Echo(Recorder):
    """Bounces every frame back to its sender -- an endless ping-pong."""

    def on_frame(self, net, src, dst, frame):
        super().on_frame(net, src, dst, frame)
        net.send(self.name, src, frame)


FRAME = encode_frame(InitialUEMessage("001010000000001"))


def test_transfer_time_cloud_example():
    # 10 MB over 20 Mbps at 40 ms, warm: 40 + 10e6*8/(20*1000)
    link = Link("a", "b", 40.0, 20.0, True)
    assert transfer_time(link, 10_000_000, first_use=False) == pytest.approx(4040.0)


def test_transfer_time_zero_payload_is_latency():
    assert transfer_time(Link("a", "b", 3.25, 100.0), 0, first_use=False) == 3.25


def test_transfer_time_first_use_surcharge():
    # 1 MB over 100 Mbps at 10 ms on first use: 10 + 80 + 20
    assert transfer_time(Link("a", "b", 10.0, 100.0), 1_000_000, first_use=True) == pytest.approx(110.0)


@given(lat=st.floats(0, 1e3), bw=st.floats(0.01, 1e5), n=st.integers(0, 10**8))
def test_transfer_time_matches_formula(lat, bw, n):
    expected = lat + n * 8 / (bw * 1000)
    assert transfer_time(Link("a", "b", lat, bw), n, False) == pytest.approx(expected)
    assert transfer_time(Link("a", "b", lat, bw), n, True) == pytest.approx(expected + 2 * lat)


@given(lat=st.floats(0, 100), bw=st.floats(0.1, 1e4), a=st.integers(0, 10**7), b=st.integers(0, 10**7))
def test_transfer_time_monotone_in_size(lat, bw, a, b):
    lo, hi = sorted((a, b))
    link = Link("x", "y", lat, bw)
    assert transfer_time(link, lo, False) <= transfer_time(link, hi, False)


def test_invalid_links_rejected():
    with pytest.raises(ValueError):
        Link("a", "b", -1.0, 10.0)
    with pytest.raises(ValueError):
        Link("a", "b", 1.0, 0.0)
    with pytest.raises(ValueError):
        transfer_time(Link("a", "b", 1.0, 1.0), -1, False)


def _pair(established):
    net = Network()
    a, b = Recorder("a"), Recorder("b")
    net.add_endpoint(a)
    net.add_endpoint(b)
    net.add_link("a", "b", 5.0, 100.0, established=established)
    return net, a, b


def test_cold_link_charges_setup_once():
    net, _, b = _pair(established=False)
    serial = len(FRAME) * 8 / (100.0 * 1000)
    net.send("a", "b", FRAME)
    net.run_until_idle()
    net.send("a", "b", FRAME)
    net.run_until_idle()
    first, second = b.got[0][0], b.got[1][0] - b.got[0][0]
    assert first == pytest.approx(15.0 + serial)
    assert second == pytest.approx(5.0 + serial)


def test_warm_link_no_surcharge():
    net, _, b = _pair(established=True)
    net.send("a", "b", FRAME)
    net.run_until_idle()
    assert b.got[0][0] == pytest.approx(5.0 + len(FRAME) * 8 / 100_000)


def test_fifo_for_equal_delivery_times():
    net, _, b = _pair(established=True)
    frames = [encode_frame(InitialUEMessage(f"00101000000000{i}")) for i in range(5)]
    for f in frames:
        net.send("a", "b", f)
    net.run_until_idle()
    assert [g[3] for g in b.got] == frames


def test_smaller_frame_overtakes_larger_one():
    net, _, b = _pair(established=True)
    big = encode_frame(Data(bytes(100_000)))
    net.send("a", "b", big)
    net.send("a", "b", FRAME)
    net.run_until_idle()
    assert [g[3] for g in b.got] == [FRAME, big]


def test_no_route_raises_and_is_recorded():
    net, _, _ = _pair(established=True)
    net.add_endpoint(Recorder("c"))
    with pytest.raises(NoRoute):
        net.send("a", "c", FRAME)
    assert net.no_route == [("a", "c", len(FRAME))]


def test_alias_and_channel_addressing():
    net, _, b = _pair(established=True)
    net.alias("10.0.2.2", "b")
    net.send("a#ch1", "10.0.2.2", FRAME)
    net.run_until_idle()
    assert b.got[0][1:3] == ("a#ch1", "10.0.2.2")
    net.unalias("10.0.2.2")
    with pytest.raises(NoRoute):
        net.send("a", "10.0.2.2", FRAME)


def test_livelock_guard():
    net = Network(event_cap=50)
    net.add_endpoint(Echo("a"))
    net.add_endpoint(Echo("b"))
    net.add_link("a", "b", 1.0, 100.0, established=True)
    net.send("a", "b", FRAME)
    with pytest.raises(LivelockGuard):
        net.run_until_idle()
    assert net.delivered == 51


def test_marks_first_write_wins_and_advance():
    net, _, _ = _pair(established=True)
    net.mark("x")
    net.advance(10.0)
    net.mark("x")
    net.mark("y")
    assert net.marks == {"x": 0.0, "y": 10.0}
    with pytest.raises(ValueError):
        net.advance(-1.0)
    net.send("a", "b", FRAME)
    with pytest.raises(RuntimeError):
        net.advance(1.0)


def test_trace_digest_deterministic():
    digests = set()
    for _ in range(2):
        net, _, _ = _pair(established=False)
        for _ in range(3):
            net.send("a", "b", FRAME)
        net.run_until_idle()
        digests.add(net.trace_digest())
        assert [r.msg for r in net.trace] == ["InitialUEMessage"] * 3
    assert len(digests) == 1


def test_loopback_delivers_over_tcp():
    with LoopbackNetwork() as net:
        a, b = Recorder("a"), Recorder("b")
        net.add_endpoint(a)
        net.add_endpoint(b)
        net.add_link("a", "b", 5.0, 100.0)
        for _ in range(3):
            net.send("a", "b", FRAME)
        net.run_until_idle(timeout_s=10)
        assert [g[3] for g in b.got] == [FRAME] * 3
        assert net.port("a") != net.port("b")


@settings(max_examples=20, deadline=None)
@given(sizes=st.lists(st.integers(0, 5000), min_size=1, max_size=10))
def test_clock_never_runs_backwards(sizes):
    net, _, b = _pair(established=False)
    for n in sizes:
        net.send("a", "b", encode_frame(Data(bytes(n))))
    net.run_until_idle()
    times = [g[0] for g in b.got]
    assert times == sorted(times)
