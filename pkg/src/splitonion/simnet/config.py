"""INI-style run and experiment configuration.

Every section and key is optional; omitted values take the defaults below.
Unknown sections or keys are rejected so that typos fail loudly.  The full
schema is documented in docs/FORMAT.md.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..replay import ReplayConfig
from ..shaping import FlowletConfig, uniform_split
from .experiments import NetworkSpec, SplitRateGrid
from .sim import SimConfig
from .topology import ConfigError
from .workload import FlowProfile, kbps_to_pps

PACKET_LEN = 1395

SCHEMA = {
    "network": {"nodes": int, "latency_ms": float, "jitter_ms": float, "drop": float,
                "access_drop": float, "playout_ms": float, "link_padding_rate": float},
    "flowlet": {"rate_kbps": float, "lifetime_s": float, "fail_threshold": int, "chaff_cap": int,
                "split_rate": float, "pad_max": int, "failure_mode": str},
    "workload": {"flows": int, "span_s": float, "size_alpha": float, "udp_fraction": float,
                 "udp_size_alpha": float, "rate_median_pps": float, "rate_sigma": float,
                 "min_size": int},
    "replay": {"enabled": bool, "ttl_s": float, "target_fp": float, "capacity": int},
    "sim": {"engine": str, "early_shutdown": bool, "delta_max": int, "setup": bool,
            "mix_batch": int, "mix_max_wait_ms": float, "observe_ms": float, "seed": int},
    "split-rate": {"drop_rates": list, "split_rates": list, "fail_thresholds": list, "reps": int,
                   "pad_max": int, "flows": int, "workers": int},
    "chaff-overhead": {"rates_kbps": list, "lifetime_s": float, "flows": int, "pad_max": int,
                       "early_shutdown": bool},
    "mix-latency": {"batch_sizes": list, "rate": float, "batches": int},
}


@dataclass
class RunConfig:
    network: NetworkSpec
    drop: float
    flowlet: FlowletConfig
    profile: FlowProfile
    sim: SimConfig
    seed: int = 0
    raw: dict = field(default_factory=dict)  # parsed sections, for the experiment drivers

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})


def _as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_list(s: str) -> list:
    return [float(x) for x in s.replace(",", " ").split()]


_CONVERT = {int: int, float: float, str: str.strip, bool: _as_bool, list: _as_list}


def parse_sections(text: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        out[sec] = {}
        for key, value in cp.items(sec):
            kind = SCHEMA[sec].get(key)
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            try:
                out[sec][key] = _CONVERT[kind](value)
            except ValueError as e:
                raise ConfigError(f"[{sec}] {key}: {e}") from None
    return out


def build_run_config(sections: dict) -> RunConfig:
    net, fl, wl = sections.get("network", {}), sections.get("flowlet", {}), sections.get("workload", {})
    rp, sm = sections.get("replay", {}), sections.get("sim", {})
    n_nodes = net.get("nodes", 7)
    try:
        replay = None
        if rp.get("enabled", True):
            replay = ReplayConfig(rp.get("ttl_s", 6.0), rp.get("target_fp", 1e-6), rp.get("capacity", 100_000))
        network = NetworkSpec(n_nodes, round(net.get("latency_ms", 5.0) * 1e6),
                              round(net.get("jitter_ms", 1.0) * 1e6), net.get("access_drop", 0.0),
                              net.get("link_padding_rate", 0.0), replay,
                              None if "playout_ms" not in net else round(net["playout_ms"] * 1e6))
        B = kbps_to_pps(fl.get("rate_kbps", 10.0), PACKET_LEN)
        flowlet = FlowletConfig(B, fl.get("lifetime_s", 60.0), fl.get("fail_threshold", 2),
                                fl.get("chaff_cap", 3), uniform_split(fl.get("split_rate", 0.0), n_nodes),
                                fl.get("pad_max", 16), fl.get("failure_mode", "consecutive"))
        lengths = tuple((l, p) for l, p in FlowProfile().path_lengths if l <= n_nodes)
        total = sum(p for _, p in lengths)
        profile = FlowProfile(
            flows=wl.get("flows", 300), span_s=wl.get("span_s", 30.0),
            size_alpha=wl.get("size_alpha", 1.1), udp_fraction=wl.get("udp_fraction", 0.2),
            udp_size_alpha=wl.get("udp_size_alpha", 1.6), rate_median_pps=wl.get("rate_median_pps", 10.0),
            rate_sigma=wl.get("rate_sigma", 1.0), min_size=wl.get("min_size", 10),
            path_lengths=tuple((l, p / total) for l, p in lengths), n_nodes=n_nodes)
        wait = sm.get("mix_max_wait_ms")
        sim = SimConfig(flowlet, engine=sm.get("engine", "token"), early_shutdown=sm.get("early_shutdown", True),
                        delta_max=sm.get("delta_max", 5), setup=sm.get("setup", False),
                        mix_batch=sm.get("mix_batch", 1),
                        mix_max_wait_ns=None if wait is None else round(wait * 1e6),
                        observe_ns=round(sm.get("observe_ms", 0.0) * 1e6))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if sim.engine not in ("token", "crypto"):
        raise ConfigError(f"unknown engine {sim.engine!r}")
    if not 0 <= net.get("drop", 0.0) <= 1:
        raise ConfigError("drop must be within [0, 1]")
    return RunConfig(network, net.get("drop", 0.0), flowlet, profile, sim, sm.get("seed", 0), sections)


def load_config(path=None) -> RunConfig:
    """Parse a config file; None gives the built-in baseline."""
    if path is None:
        return build_run_config({})
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return build_run_config(parse_sections(p.read_text()))


def split_rate_grid(rc: RunConfig, reps: Optional[int] = None) -> SplitRateGrid:
    sec = rc.section("split-rate")
    base = SplitRateGrid()
    try:
        profile = rc.profile
        if "flows" in sec:
            profile = replace(profile, flows=sec["flows"])
        return SplitRateGrid(
            drop_rates=tuple(sec.get("drop_rates", base.drop_rates)),
            split_rates=tuple(sec.get("split_rates", base.split_rates)),
            H_values=tuple(int(h) for h in sec.get("fail_thresholds", base.H_values)),
            reps=reps if reps is not None else sec.get("reps", base.reps),
            rate_B=rc.flowlet.rate_B, lifetime_T=rc.flowlet.lifetime_T,
            chaff_cap_Lchf=rc.flowlet.chaff_cap_Lchf, pad_max=sec.get("pad_max", base.pad_max),
            failure_mode=rc.flowlet.failure_mode, profile=profile, network=rc.network,
            engine=rc.sim.engine)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None

