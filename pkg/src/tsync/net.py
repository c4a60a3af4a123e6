"""Multi-node experiments: broadcast offset harness, beacon-timer
synchronization and two-way time transfer over an asymmetric link.

The broadcast harness replays the bench setup of one server flooding UDP
packets at two receiver-disciplined clients whose capture stamps are
compared pairwise. The beacon timer models the adopt-the-fastest
1-microsecond counter of 802.11 ad-hoc networks. The two-way exchange
implements the classic four-timestamp offset/delay estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .scenario import ScenarioConfig, TrafficSpec
from .servo import OffsetSample, SampleSource
from .timebase import ClockState, NS_PER_S, SimInstant, read_clock

US_PER_S = 1_000_000


class NoCommonPackets(ValueError):
    pass


class PacketDropped(RuntimeError):
    pass


@dataclass(frozen=True)
class LinkModel:
    """One-way delays (possibly asymmetric) with uniform jitter."""

    delay_up_ms: float = 20.0
    delay_down_ms: float = 20.0
    jitter_ms: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.delay_up_ms < 0 or self.delay_down_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays and jitter must be >= 0")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")

    def one_way_ns(self, base_ms: float, rng) -> int:
        if self.drop_prob and rng.random() < self.drop_prob:
            raise PacketDropped("leg lost")
        jit = rng.uniform(-self.jitter_ms, self.jitter_ms) if self.jitter_ms else 0.0
        return round((base_ms + jit) * 1e6)


@dataclass
class PacketRecord:
    """One broadcast packet and its per-client capture stamps."""

    packet_id: int
    send_true: SimInstant
    send_stamp_ns: int
    arrivals: dict = field(default_factory=dict)


def run_broadcast(cfg: ScenarioConfig, rate_hz: float, duration_s: float,
                  traffic: TrafficSpec | None = None):
    """Flood packets from the server node to all clients.

    Every client sees each packet at the same true instant (plus its
    configured per-client path delta); the recorded stamp is the client's
    disciplined clock read at capture time, which adds the node's stamp
    bias and latency spread. Returns (records, result) where the result
    carries the clients' discipline logs.
    """
    if traffic is None:
        traffic = next(t for t in cfg.traffic if t.kind == "broadcast")
    params = traffic.params
    client_names = list(params.get("clients") or
                        [n.name for n in cfg.nodes[:2]])
    if len(client_names) < 2:
        raise ValueError("broadcast harness needs at least 2 clients")
    server_name = params.get("server", cfg.nodes[-1].name)
    deltas = {k: int(v) for k, v in params.get("path_delta_ns", {}).items()}
    drop_prob = float(params.get("drop_prob", 0.0))

    sims, root = engine.build_node_sims(cfg)
    by_name = {s.spec.name: s for s in sims}
    for name in (*client_names, server_name):
        if name not in by_name:
            raise ValueError(f"traffic references unknown node {name!r}")
    drop_rng = np.random.default_rng(root.spawn(1)[0])

    duration = int(round(duration_s))
    n_packets = int(round(rate_hz * duration))
    send_ns = [round((i + 1) * NS_PER_S / rate_hz) for i in range(n_packets)]
    records: list[PacketRecord] = []
    next_pkt = 0

    for boundary in range(1, duration + 1):
        limit = boundary * NS_PER_S
        while next_pkt < n_packets and send_ns[next_pkt] <= limit:
            t = send_ns[next_pkt]
            server = by_name[server_name]
            rec = PacketRecord(next_pkt, SimInstant.from_ns(t),
                               server.read_disciplined(t).total_ns)
            for name in client_names:
                if drop_prob and drop_rng.random() < drop_prob:
                    continue
                sim = by_name[name]
                rc = sim.spec.receiver
                arrival = t + deltas.get(name, 0)
                latency = rc.stamp_bias_ns
                if rc.stamp_latency_ns:
                    latency += round(sim.rng_stamp.uniform(0, rc.stamp_latency_ns))
                stamp = sim.read_disciplined(arrival + latency).total_ns
                rec.arrivals[name] = (SimInstant.from_ns(arrival), stamp)
            records.append(rec)
            next_pkt += 1
        for sim in sims:
            sim.step_boundary(boundary)
    for sim in sims:
        sim.finish(duration)
    result = engine.collect(cfg, sims)
    result.broadcast_records = records
    return records, result


def pairwise_offsets(records, node_a: str, node_b: str):
    """Per-packet stamp differences a - b; packets missing a side are
    skipped and counted. Returns (samples, skipped)."""
    samples: list[OffsetSample] = []
    skipped = 0
    for rec in records:
        a = rec.arrivals.get(node_a)
        b = rec.arrivals.get(node_b)
        if a is None or b is None:
            skipped += 1
            continue
        samples.append(OffsetSample(rec.send_true.total_ns / NS_PER_S,
                                    a[1] - b[1], SampleSource.COMBINED))
    if not samples:
        raise NoCommonPackets(f"no packets seen by both {node_a} and {node_b}")
    return samples, skipped


# ---------------------------------------------------------------------------
# Beacon-timer synchronization (adopt the fastest neighbour)


@dataclass(frozen=True)
class TsfNode:
    """64-bit 1 us beacon timer plus its oscillator's rate error."""

    timer_us: int = 0
    freq_error_ppm: float = 0.0
    frac_us: float = 0.0

    def __post_init__(self):
        if abs(self.freq_error_ppm) > 100.0:
            raise ValueError("timer rate error beyond +/-100 ppm")


def tsf_advance(nodes, dt_s: float) -> list[TsfNode]:
    """Free-run all timers for dt_s seconds at their own rates."""
    out = []
    for n in nodes:
        ticks = dt_s * US_PER_S * (1.0 + n.freq_error_ppm * 1e-6) + n.frac_us
        whole = int(ticks)
        out.append(replace(n, timer_us=n.timer_us + whole, frac_us=ticks - whole))
    return out


def tsf_step(nodes, beacon_winner: int, airtime_jitter_us: float,
             rng) -> list[TsfNode]:
    """Apply one beacon from the winning node.

    Receivers adopt max(own timer, received timer + airtime), so timers
    move forward but never backward; the winner keeps its own timer.
    """
    if not 0 <= beacon_winner < len(nodes):
        raise IndexError(f"winner index {beacon_winner} out of range")
    sent = nodes[beacon_winner].timer_us
    out = []
    for i, n in enumerate(nodes):
        if i == beacon_winner:
            out.append(n)
            continue
        rx = sent + (round(rng.uniform(0, airtime_jitter_us))
                     if airtime_jitter_us else 0)
        out.append(replace(n, timer_us=max(n.timer_us, rx)))
    return out


def run_tsf(n_nodes: int = 20, spread_ppm: float = 100.0,
            beacon_interval_s: float = 0.1024, n_beacons: int = 2000,
            airtime_jitter_us: float = 2.0, seed: int = 7):
    """Contention experiment: random winner per interval, spread recorded.

    Returns per-beacon maximum pairwise timer spread (us, before the
    beacon applies) and the node list at the end.
    """
    rng = np.random.default_rng(seed)
    rates = rng.uniform(-spread_ppm, spread_ppm, n_nodes)
    nodes = [TsfNode(0, float(r)) for r in rates]
    spreads = []
    for _ in range(n_beacons):
        nodes = tsf_advance(nodes, beacon_interval_s)
        timers = [n.timer_us for n in nodes]
        spreads.append(max(timers) - min(timers))
        winner = int(rng.integers(n_nodes))
        nodes = tsf_step(nodes, winner, airtime_jitter_us, rng)
    return np.array(spreads, dtype=float), nodes


# ---------------------------------------------------------------------------
# Two-way time transfer


@dataclass(frozen=True)
class NtpResult:
    offset_est_ns: int
    delay_est_ns: int
    truth_offset_ns: int


def ntp_exchange(client: ClockState, server: ClockState, link: LinkModel,
                 t: SimInstant, rng) -> NtpResult:
    """One four-timestamp exchange through the link.

    offset_est = ((t2 - t1) + (t3 - t4)) / 2 estimates the server clock
    minus the client clock; with symmetric delays and no jitter it equals
    the true offset exactly, and an asymmetry biases it by
    (delay_up - delay_down) / 2.
    """
    t1_true = t.total_ns
    up = link.one_way_ns(link.delay_up_ms, rng)
    down = link.one_way_ns(link.delay_down_ms, rng)
    t1 = read_clock(client, t).total_ns
    t2_true = t1_true + up
    t2 = read_clock(server, SimInstant.from_ns(t2_true)).total_ns
    t3 = t2
    t4_true = t2_true + down
    t4 = read_clock(client, SimInstant.from_ns(t4_true)).total_ns
    offset_est = ((t2 - t1) + (t3 - t4)) // 2
    delay_est = (t4 - t1) - (t3 - t2)
    truth = (read_clock(server, t).total_ns - t1)
    return NtpResult(offset_est, delay_est, truth)


def run_ntp(cfg: ScenarioConfig, traffic: TrafficSpec | None = None):
    """Periodic exchanges between two scenario nodes' free clocks.

    Returns rows (t_s, offset_est_ns, delay_est_ns, truth_offset_ns).
    """
    if traffic is None:
        traffic = next(t for t in cfg.traffic if t.kind == "ntp")
    p = traffic.params
    client_spec = cfg.node(p.get("client", cfg.nodes[0].name))
    server_spec = cfg.node(p.get("server", cfg.nodes[-1].name))
    link = LinkModel(float(p.get("delay_up_ms", 20.0)),
                     float(p.get("delay_down_ms", 20.0)),
                     float(p.get("jitter_ms", 0.0)),
                     float(p.get("drop_prob", 0.0)))
    root = np.random.SeedSequence(cfg.seed)
    rng = np.random.default_rng(root.spawn(len(cfg.nodes) + 1)[-1])
    client = ClockState.from_offset_ns(client_spec.initial_offset_ns,
                                       client_spec.oscillator.f0_ppm)
    server = ClockState.from_offset_ns(server_spec.initial_offset_ns,
                                       server_spec.oscillator.f0_ppm)
    interval_ns = round(NS_PER_S / traffic.rate_hz)
    n = int(round(cfg.duration_s * traffic.rate_hz))
    rows = []
    for i in range(n):
        t = SimInstant.from_ns((i + 1) * interval_ns)
        try:
            res = ntp_exchange(client, server, link, t, rng)
        except PacketDropped:
            continue
        rows.append((t.total_ns / NS_PER_S, res.offset_est_ns,
                     res.delay_est_ns, res.truth_offset_ns))
    return rows


def run_tsf_traffic(cfg: ScenarioConfig, traffic: TrafficSpec):
    """Scenario-driven beacon experiment; one row per beacon interval."""
    p = traffic.params
    interval = 1.0 / traffic.rate_hz
    n_beacons = int(round(cfg.duration_s * traffic.rate_hz))
    spreads, _ = run_tsf(
        n_nodes=int(p.get("n_nodes", 20)),
        spread_ppm=float(p.get("spread_ppm", 100.0)),
        beacon_interval_s=interval,
        n_beacons=n_beacons,
        airtime_jitter_us=float(p.get("airtime_jitter_us", 2.0)),
        seed=cfg.seed,
    )
    return [((i + 1) * interval, s) for i, s in enumerate(spreads)]
