"""Two runs that move data into different slots look the same on the wire.

    python3 demos/traffic_shaping.py
"""

from splitonion.replay import ReplayConfig
from splitonion.shaping import NS_PER_S, FlowletConfig, uniform_split
from splitonion.simnet import FlowletSpec, SimConfig, Workload, line_topology, run_simulation

MS = 1_000_000
B = 20.0  # packets per second
slot = round(NS_PER_S / B)


def run(every):
    topo = line_topology(4, seed=3, latency_ns=3 * MS, jitter_ns=MS, drop=0.02, replay=ReplayConfig(6))
    data = tuple(range(0, 10 * NS_PER_S, every * slot))
    wl = Workload([FlowletSpec(0, 0, 0, 3, (0, 1, 2, 3), 0, data)])
    fc = FlowletConfig(B, 10.0, fail_threshold_H=2, chaff_cap_Lchf=3, split_prob=uniform_split(0.05, 4), pad_max=0)
    return run_simulation(topo, wl, 3, SimConfig(fc, early_shutdown=False))


(busy, busy_trace), (idle, idle_trace) = run(1), run(7)
for name, m in (("busy", busy), ("sparse", idle)):
    counts = {k.name: v for k, v in m.sender_counts[0].items()}
    print(f"{name:>6}: sent {counts}, success {m.success[0]}")
print("identical link taps:", busy_trace.taps == idle_trace.taps)
print("frames seen on the first link:", len(busy_trace.taps[min(busy_trace.taps)]))
