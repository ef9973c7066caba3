import numpy as np
import pytest
from hypothesis import settings

from splitonion import codec
from splitonion.codec import HopMaterial, PathMaterial, RoutingSegment

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

P = codec.DEFAULT_PARAMS


def make_path(n, rng, deltas=None):
    """Node secrets plus sender-side material for an n-hop path whose last hop delivers."""
    svs = [rng.bytes(16) for _ in range(n)]
    hops = []
    for i, sv in enumerate(svs):
        s = rng.bytes(16)
        egress = codec.DELIVER if i == n - 1 else 100 + i + 1
        route = RoutingSegment(100 + i, egress)
        hops.append(HopMaterial(s, codec.fs_create(sv, s, route), 0 if deltas is None else deltas[i]))
    return svs, PathMaterial(tuple(hops), rng.bytes(16))


def walk(packet, svs, params=P):
    """Run remove_layer at each node in turn; returns the list of LayerOutputs."""
    outs = []
    for sv in svs:
        out = codec.remove_layer(params, packet, sv)
        outs.append(out)
        packet = out.next_packet
    return outs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; printed again in the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
