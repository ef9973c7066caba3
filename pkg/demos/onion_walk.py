"""Build a 4-hop onion, peel it hop by hop, then split a chaff packet at hop 2.

    python3 demos/onion_walk.py
"""

import numpy as np

from splitonion import codec
from splitonion.codec import Ctrl, HopMaterial, PathMaterial, PayloadKind, RoutingSegment

P = codec.DEFAULT_PARAMS
rng = np.random.default_rng(0)

# each node has a long-term secret; the sender gets one forwarding segment per hop at setup
node_secrets = [rng.bytes(16) for _ in range(4)]
hops = []
for i, sv in enumerate(node_secrets):
    s = rng.bytes(16)
    egress = codec.DELIVER if i == 3 else 10 + i + 1
    hops.append(HopMaterial(s, codec.fs_create(sv, s, RoutingSegment(10 + i, egress))))
path = PathMaterial(tuple(hops), rng.bytes(16))

iv = rng.bytes(16)
final_iv = codec.iv_chain(path.hops, iv)[-1]
payload = codec.seal_payload(path.s_sd, final_iv, PayloadKind.DATA, b"hello over four hops", P.m)
pkt = codec.create_onion(P, path.hops, [Ctrl.FWD] * 4, [1000] * 4, iv, payload, rng)

print(f"packet: {P.packet_len} octets")
for i, sv in enumerate(node_secrets):
    out = codec.remove_layer(P, pkt, sv)
    pkt = out.next_packet
    egress = "deliver" if out.route.delivers else out.route.egress
    print(f"hop {i}: ingress {out.route.ingress}, egress {egress}, still {len(pkt.to_bytes())} octets")
print("receiver reads:", codec.open_payload(path.s_sd, pkt.iv, pkt.payload))

# a splittable chaff packet: node 2 turns it into two fresh packets
t = P.child_payload_len
kids_iv = [rng.bytes(16) for _ in range(2)]
bodies = [codec.seal_payload(path.s_sd, codec.iv_chain(path.hops[2:], v)[-1], PayloadKind.CHAFF, b"", t)
          for v in kids_iv]
pkt = codec.create_splittable(P, path.hops, [1000] * 4, rng.bytes(16), *kids_iv, *bodies, 2, rng)
for sv in node_secrets[:3]:
    out = codec.remove_layer(P, pkt, sv)
    pkt = out.next_packet
print("hop 2 control:", out.ctrl.name)
left, right = codec.split_onion(P, out.next_packet.payload, out.s, out.iv)
for name, kid in (("left", left), ("right", right)):
    for sv in node_secrets[2:]:
        kid = codec.remove_layer(P, kid, sv).next_packet
    kind, _ = codec.open_payload(path.s_sd, kid.iv, kid.payload[:t])
    print(f"{name} child delivered as {kind.name}")
