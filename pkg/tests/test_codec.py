import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import P, make_path, walk
from splitonion import codec, crypto
from splitonion.codec import Ctrl, PacketDropped, PacketParams, PayloadKind, RoutingSegment
from splitonion.crypto import KdfLabel


def onion(n, rng, ctrls=None, exps=None):
    svs, path = make_path(n, rng)
    payload = rng.bytes(P.m)
    ctrls = ctrls or [Ctrl.FWD] * n
    exps = exps or [1000 + i for i in range(n)]
    pkt = codec.create_onion(P, path.hops, ctrls, exps, rng.bytes(16), payload, rng)
    return svs, path, payload, pkt


def test_default_geometry():
    # widths 16/24/16/1/4, r=8, m=1024
    d = 1 + 4 + 24 + 16
    assert (P.b, P.c, P.d) == (5, 40, d)
    assert P.beta_len == 7 * d == 315
    assert P.hdr_len == 16 + 24 + 16 + 315 == 371
    assert P.packet_len == 1395
    assert P.child_payload_len == 512 - 371 == 141
    assert P.split_pad_len == 512 + 371 == 883
    assert P.max_hops == 7


def test_params_validation():
    with pytest.raises(ValueError):
        PacketParams(m=700)  # below 2 * HDR_LEN
    with pytest.raises(ValueError):
        PacketParams(m=1025)
    with pytest.raises(ValueError):
        PacketParams(r=1)
    assert PacketParams(r=4, m=2 * PacketParams(r=4).hdr_len).m % 2 == 0


def test_wire_layout(rng):
    _, _, _, pkt = onion(3, rng)
    raw = pkt.to_bytes()
    assert raw[0:16] == pkt.iv and raw[16:40] == pkt.fs and raw[40:56] == pkt.gamma
    assert raw[56:371] == pkt.beta and raw[371:1395] == pkt.payload
    assert codec.OnionPacket.from_bytes(P, raw) == pkt
    with pytest.raises(ValueError):
        codec.OnionPacket.from_bytes(P, raw[:-1])


def test_routing_segment():
    seg = RoutingSegment(7, codec.DELIVER)
    assert len(seg.to_bytes()) == 8 and seg.delivers
    assert RoutingSegment.from_bytes(seg.to_bytes()) == seg


def test_fs_round_trip_and_wrong_key(rng):
    wrong = 0
    for _ in range(10_000):
        sv, s = rng.bytes(16), rng.bytes(16)
        r = RoutingSegment(int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32)))
        fs = codec.fs_create(sv, s, r)
        assert len(fs) == 24 and fs == codec.fs_create(sv, s, r)
        assert codec.fs_open(sv, fs) == (s, r)
        wrong += codec.fs_open(rng.bytes(16), fs) == (s, r)
    assert wrong == 0


def test_single_hop(rng):
    svs, path, payload, pkt = onion(1, rng)
    (out,) = walk(pkt, svs)
    assert out.route.delivers and out.ctrl is Ctrl.FWD
    assert out.next_packet.payload == payload


@given(st.integers(1, 7), st.integers(0, 2**32 - 1), st.data())
def test_round_trip_recovers_every_field(n, seed, data):
    rng = np.random.default_rng(seed)
    ctrls = data.draw(st.lists(st.sampled_from(list(Ctrl)), min_size=n, max_size=n))
    exps = data.draw(st.lists(st.integers(0, 2**32 - 1), min_size=n, max_size=n))
    svs, path, payload, pkt = onion(n, rng, ctrls, exps)
    outs = walk(pkt, svs)
    for i, out in enumerate(outs):
        assert out.ctrl == ctrls[i] and out.exp == exps[i]
        assert out.route == codec.fs_open(svs[i], path.hops[i].fs)[1]
        assert len(out.next_packet) == P.packet_len
    assert outs[-1].next_packet.payload == payload


def test_size_constant_all_lengths(rng):
    for n in range(1, 8):
        svs, _, _, pkt = onion(n, rng)
        sizes = [len(pkt.to_bytes())] + [len(o.next_packet.to_bytes()) for o in walk(pkt, svs)]
        assert sizes == [P.packet_len] * (n + 1)


def test_path_and_payload_checks(rng):
    svs, path = make_path(7, rng)
    with pytest.raises(ValueError):
        codec.create_onion(P, path.hops + path.hops[:1], [0] * 8, [0] * 8, rng.bytes(16), bytes(P.m))
    with pytest.raises(ValueError):
        codec.create_onion(P, path.hops, [0] * 7, [0] * 7, rng.bytes(16), bytes(P.m - 1))
    with pytest.raises(ValueError):
        codec.create_onion(P, path.hops, [0] * 7, [2**32] * 7, rng.bytes(16), bytes(P.m))


def test_iv_chain(rng):
    svs, path, _, pkt = onion(7, rng)
    outs = walk(pkt, svs)
    ivs = codec.iv_chain(path.hops, pkt.iv)
    assert [o.iv for o in outs] == ivs[:-1]
    assert outs[-1].next_packet.iv == ivs[-1]
    for h, a, b in zip(path.hops, ivs, ivs[1:]):
        assert b == crypto.prp_encrypt(crypto.kdf(h.s, KdfLabel.PRP), a)
    assert len({(o.s, o.iv) for o in outs}) == 7


def test_wrong_node_drops(rng):
    dropped = 0
    for _ in range(1000):
        _, _, _, pkt = onion(2, rng)
        try:
            codec.remove_layer(P, pkt, rng.bytes(16))
        except PacketDropped:
            dropped += 1
    assert dropped == 1000


def test_bit_flip_in_every_field_drops(rng):
    svs, _, _, pkt = onion(4, rng)
    raw = pkt.to_bytes()
    for pos in [16, 39, 40, 55, 56, 370, 371, 1394] + list(rng.integers(16, len(raw), 200)):
        bad = bytearray(raw)
        bad[pos] ^= 1 << int(rng.integers(0, 8))
        with pytest.raises(PacketDropped):
            codec.remove_layer(P, codec.OnionPacket.from_bytes(P, bytes(bad)), svs[0])


def _bit_frac(a, b):
    x = np.frombuffer(crypto.xor(a, b), dtype=np.uint8)
    return np.unpackbits(x).sum(), 8 * len(a)


def test_one_hop_unlinkability(rng):
    diff = total = 0
    for _ in range(100):
        svs, _, _, pkt = onion(3, rng)
        nxt = walk(pkt, svs[:1])[0].next_packet
        for f in ("iv", "fs", "gamma", "beta", "payload"):
            assert getattr(pkt, f) != getattr(nxt, f)
        for f in ("beta", "payload"):
            d, t = _bit_frac(getattr(pkt, f), getattr(nxt, f))
            diff, total = diff + d, total + t
    assert 0.45 <= diff / total <= 0.55


def test_position_hiding_output_shape(rng):
    svs, _, _, pkt = onion(7, rng)
    outs = walk(pkt, svs)
    assert {len(o.next_packet.to_bytes()) for o in outs} == {P.packet_len}
    assert {tuple(len(getattr(o.next_packet, f)) for f in ("iv", "fs", "gamma", "beta", "payload"))
            for o in outs} == {(16, 24, 16, 315, 1024)}


# -- splitting ----------------------------------------------------------------

def splittable(n, k, rng):
    svs, path = make_path(n, rng)
    t = P.child_payload_len
    cps = [rng.bytes(t), rng.bytes(t)]
    exps = [5000 + i for i in range(n)]
    pkt = codec.create_splittable(P, path.hops, exps, rng.bytes(16), rng.bytes(16), rng.bytes(16),
                                  cps[0], cps[1], k, rng)
    return svs, path, cps, exps, pkt


def run_split(svs, pkt, k):
    outs = walk(pkt, svs[:k + 1])
    assert [o.ctrl for o in outs] == [Ctrl.FWD] * k + [Ctrl.SPLIT]
    parent = outs[-1]
    kids = codec.split_onion(P, parent.next_packet.payload, parent.s, parent.iv)
    return parent, kids


@pytest.mark.parametrize("n,k", [(2, 1), (5, 1), (5, 2), (5, 3), (5, 4), (7, 6)])
def test_split_pipeline(rng, n, k):
    svs, path, cps, exps, pkt = splittable(n, k, rng)
    parent, kids = run_split(svs, pkt, k)
    t = P.child_payload_len
    for side, kid, cp in zip(("left", "right"), kids, cps):
        assert len(kid.to_bytes()) == P.packet_len
        assert kid.to_bytes()[-P.split_pad_len:] == codec.split_padding(P, parent.s, parent.iv, side)
        # children re-enter the split node itself, then continue downstream
        outs = walk(kid, svs[k:])
        assert all(o.ctrl is Ctrl.FWD for o in outs)
        assert [o.exp for o in outs] == exps[k:]
        assert outs[-1].route.delivers
        assert outs[-1].next_packet.payload[:t] == cp


def test_split_padding_definition(rng):
    s, iv = rng.bytes(16), rng.bytes(16)
    want = crypto.prg(crypto.kdf(s + iv, KdfLabel.PRG, b"left"), P.m // 2 + P.hdr_len)
    assert codec.split_padding(P, s, iv, "left") == want
    assert codec.split_padding(P, s, iv, "right") != want


def test_split_children_unlinkable(rng):
    svs, _, _, _, pkt = splittable(5, 2, rng)
    parent, (a, b) = run_split(svs, pkt, 2)
    ra, rb, rp = a.to_bytes(), b.to_bytes(), parent.next_packet.to_bytes()
    for x, y in ((ra, rb), (ra, rp), (rb, rp)):
        d, t = _bit_frac(x, y)
        assert 0.45 < d / t < 0.55


def test_split_preconditions(rng):
    svs, path = make_path(5, rng)
    t = P.child_payload_len
    args = (P, path.hops, [0] * 5, rng.bytes(16), rng.bytes(16), rng.bytes(16))
    for k in (0, 5):
        with pytest.raises(ValueError):
            codec.create_splittable(*args, bytes(t), bytes(t), k)
    with pytest.raises(ValueError):
        codec.create_splittable(*args, bytes(t + 1), bytes(t), 2)
    with pytest.raises(ValueError):
        codec.split_onion(P, bytes(10), rng.bytes(16), rng.bytes(16))


def test_split_garbage_is_rejected_downstream(rng):
    kids = codec.split_onion(P, rng.bytes(P.m), rng.bytes(16), rng.bytes(16))
    for kid in kids:
        assert len(kid.to_bytes()) == P.packet_len
        with pytest.raises(PacketDropped):
            codec.remove_layer(P, kid, rng.bytes(16))


# -- end-to-end payloads and expirations --------------------------------------

@given(st.binary(max_size=P.m - 3), st.sampled_from(list(PayloadKind)))
def test_seal_open(body, kind):
    rng = np.random.default_rng(len(body))
    key, nonce = rng.bytes(16), rng.bytes(16)
    sealed = codec.seal_payload(key, nonce, kind, body, P.m)
    assert len(sealed) == P.m
    assert codec.open_payload(key, nonce, sealed) == (kind, body)


def test_seal_too_big():
    with pytest.raises(ValueError):
        codec.seal_payload(bytes(16), bytes(16), PayloadKind.DATA, bytes(P.m), P.m)


def test_child_payload_carries_chaff_tag(rng):
    svs, path = make_path(5, rng)
    t = P.child_payload_len
    tail = path.hops[2:]
    ivs = [rng.bytes(16), rng.bytes(16)]
    cps = [codec.seal_payload(path.s_sd, codec.iv_chain(tail, v)[-1], PayloadKind.CHAFF, b"", t) for v in ivs]
    pkt = codec.create_splittable(P, path.hops, [0] * 5, rng.bytes(16), ivs[0], ivs[1], cps[0], cps[1], 2, rng)
    _, kids = run_split(svs, pkt, 2)
    for kid in kids:
        final = walk(kid, svs[2:])[-1].next_packet
        kind, body = codec.open_payload(path.s_sd, final.iv, final.payload[:t])
        assert kind is PayloadKind.CHAFF and body == b""


def test_expirations(rng):
    assert codec.exp_min_for(0) == 1
    assert codec.exp_min_for(1) == 2
    assert codec.exp_min_for(3_000_000_000) == 4
    _, path = make_path(4, rng, deltas=[0, 0, 0, 0])
    assert codec.assign_expirations(path, 77) == [77] * 4
    _, path = make_path(3, rng, deltas=[1, 4, 2])
    assert codec.assign_expirations(path, 10) == [11, 14, 12]
    assert codec.draw_offsets(5, 0, rng) == [0] * 5
    with pytest.raises(ValueError):
        codec.draw_offsets(3, -1, rng)


def test_offsets_uniform(rng):
    draws = codec.draw_offsets(10_000, 5, rng)
    counts = np.bincount(draws, minlength=6)
    assert set(draws) <= set(range(6))
    assert stats.chisquare(counts).pvalue > 0.05
