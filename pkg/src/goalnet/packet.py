"""Packet-level backend on two-level fat trees.

Every GOAL send becomes a flow emitting MTU-sized packets gated by a
congestion window.  Switch ports are drop-tail output queues that mark
ECN with probability ramping linearly from 0 at kmin*capacity to 1 at
kmax*capacity.  Receivers ack every packet (acks echo the data packet's
mark and carry a cumulative sequence number plus a timestamp echo for RTT
measurement); out-of-order arrivals are buffered, and lost packets are
recovered go-back-N on RTO.  Two congestion controllers are provided:
MPRDMA-like (per-packet ECN reaction) and Swift-like (end-to-end delay
target).  Calc tasks use the same per-(rank, cpu)-stream semantics as the
message-level backend; host send overhead is zero (host cost belongs in
calc tasks).
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .engine import Handle, SimEventRecord
from .model import TaskKind


# ---------------------------------------------------------------------------
# Topology

@dataclass(frozen=True)
class FatTreeSpec:
    hosts_per_tor: int = 8
    num_tors: int = 2
    uplinks_per_tor: int = 8
    num_cores: int = 8
    link_rate_gbps: float = 100.0
    link_latency_ns: float = 500.0
    levels: int = 2

    def __post_init__(self):
        if self.levels != 2:
            raise ValueError("only two-level fat trees are supported")
        if self.hosts_per_tor < 1 or self.num_tors < 1:
            raise ValueError("need at least one ToR with one host")
        if self.uplinks_per_tor < 0:
            raise ValueError("uplinks_per_tor must be >= 0")
        if self.num_tors > 1:
            if self.uplinks_per_tor < 1:
                raise ValueError("multi-ToR trees need uplinks")
            if self.hosts_per_tor < self.uplinks_per_tor:
                raise ValueError("oversubscription ratio must be >= 1 "
                                 "(hosts_per_tor >= uplinks_per_tor)")
            if self.num_cores < self.uplinks_per_tor:
                raise ValueError("need num_cores >= uplinks_per_tor")
        if self.link_rate_gbps <= 0 or self.link_latency_ns < 0:
            raise ValueError("bad link parameters")

    @property
    def num_hosts(self) -> int:
        return self.hosts_per_tor * self.num_tors

    @property
    def oversubscription(self) -> float:
        return self.hosts_per_tor / self.uplinks_per_tor

    @property
    def rate_bytes_per_ns(self) -> float:
        return self.link_rate_gbps / 8.0

    @classmethod
    def from_config(cls, config: Mapping) -> "FatTreeSpec":
        kwargs = {}
        for name, cast in (("hosts_per_tor", int), ("num_tors", int),
                           ("uplinks_per_tor", int), ("num_cores", int),
                           ("link_rate_gbps", float), ("link_latency_ns", float)):
            key = f"fattree.{name}"
            if key in config:
                kwargs[name] = cast(config[key])
        return cls(**kwargs)


class _Link:
    """One directed link with its egress queue."""

    __slots__ = ("name", "rate", "latency", "queue", "queue_bytes", "busy",
                 "drops", "marks", "busy_ns", "first_tx", "last_tx", "max_occ",
                 "tx_bytes")

    def __init__(self, name: str, rate: float, latency: float):
        self.name = name
        self.rate = rate
        self.latency = latency
        self.queue: list = []
        self.queue_bytes = 0
        self.busy = False
        self.drops = 0
        self.marks = 0
        self.busy_ns = 0.0
        self.first_tx: Optional[float] = None
        self.last_tx = 0.0
        self.max_occ = 0
        self.tx_bytes = 0

    def utilization(self) -> float:
        if self.first_tx is None or self.last_tx <= self.first_tx:
            return 0.0
        return self.busy_ns / (self.last_tx - self.first_tx)


def _mix(*vals: int) -> int:
    """Stable integer hash (splitmix64 finalizer chain)."""
    h = 0x9E3779B97F4A7C15
    for v in vals:
        h ^= (v + 0x9E3779B97F4A7C15 + (h << 6) + (h >> 2)) & 0xFFFFFFFFFFFFFFFF
        h &= 0xFFFFFFFFFFFFFFFF
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        h = z ^ (z >> 31)
    return h


class FatTree:
    """Link tables and path selection for a two-level fat tree."""

    def __init__(self, spec: FatTreeSpec):
        self.spec = spec
        self.links: dict[str, _Link] = {}
        rate = spec.rate_bytes_per_ns
        lat = spec.link_latency_ns
        for h in range(spec.num_hosts):
            t = h // spec.hosts_per_tor
            self._add(f"h{h}->t{t}", rate, lat)
            self._add(f"t{t}->h{h}", rate, lat)
        for t in range(spec.num_tors):
            for u in range(spec.uplinks_per_tor):
                self._add(f"t{t}->c{u}", rate, lat)
                self._add(f"c{u}->t{t}", rate, lat)

    def _add(self, name: str, rate: float, latency: float) -> None:
        self.links[name] = _Link(name, rate, latency)

    def tor_of(self, host: int) -> int:
        return host // self.spec.hosts_per_tor

    def path(self, src: int, dst: int, core_choice: int) -> list[str]:
        ts, td = self.tor_of(src), self.tor_of(dst)
        if ts == td:
            return [f"h{src}->t{ts}", f"t{td}->h{dst}"]
        u = core_choice % self.spec.uplinks_per_tor
        return [f"h{src}->t{ts}", f"t{ts}->c{u}", f"c{u}->t{td}", f"t{td}->h{dst}"]

    def base_rtt(self, src: int, dst: int, data_bytes: int, ack_bytes: int) -> float:
        """Unloaded round-trip: store-and-forward data out, ack back."""
        fwd = self.path(src, dst, 0)
        rev = self.path(dst, src, 0)
        t = 0.0
        for name in fwd:
            link = self.links[name]
            t += link.latency + data_bytes / link.rate
        for name in rev:
            link = self.links[name]
            t += link.latency + ack_bytes / link.rate
        return t


def build_fattree(spec: FatTreeSpec) -> FatTree:
    return FatTree(spec)


# ---------------------------------------------------------------------------
# Congestion control

@dataclass
class PacketNetConfig:
    mtu_bytes: int = 4096
    queue_capacity_bytes: int = 1 << 20
    ecn_kmin_frac: float = 0.20
    ecn_kmax_frac: float = 0.80
    cc: str = "mprdma"
    routing: str = "ecmp_per_flow"
    rto_ns: float = 1_000_000.0
    seed: int = 1
    init_cwnd: float = 16.0
    ack_bytes: int = 64
    swift_hop_ns: float = 1000.0
    swift_beta: float = 0.8
    swift_beta_max: float = 0.5
    sample_interval_ns: float = 0.0

    def __post_init__(self):
        if not 0 <= self.ecn_kmin_frac <= self.ecn_kmax_frac <= 1:
            raise ValueError("need 0 <= kmin <= kmax <= 1")
        if self.mtu_bytes > self.queue_capacity_bytes:
            raise ValueError("mtu exceeds queue capacity")
        if self.cc not in ("mprdma", "swift"):
            raise ValueError(f"unknown congestion control {self.cc!r}")
        if self.routing not in ("ecmp_per_flow", "packet_spray"):
            raise ValueError(f"unknown routing {self.routing!r}")
        if self.init_cwnd < 1:
            raise ValueError("init_cwnd must be >= 1")

    @classmethod
    def from_config(cls, config: Mapping) -> "PacketNetConfig":
        m = {"net.mtu": ("mtu_bytes", int),
             "net.queue_bytes": ("queue_capacity_bytes", int),
             "net.ecn_kmin": ("ecn_kmin_frac", float),
             "net.ecn_kmax": ("ecn_kmax_frac", float),
             "net.cc": ("cc", str),
             "net.routing": ("routing", str),
             "net.rto_ns": ("rto_ns", float),
             "net.seed": ("seed", int),
             "net.init_cwnd": ("init_cwnd", float),
             "net.ack_bytes": ("ack_bytes", int),
             "net.swift_hop_ns": ("swift_hop_ns", float),
             "net.sample_interval_ns": ("sample_interval_ns", float)}
        kwargs = {}
        for key, (attr, cast) in m.items():
            if key in config:
                kwargs[attr] = cast(config[key])
        return cls(**kwargs)


@dataclass
class FlowState:
    """Transport state of one in-flight GOAL message."""

    flow_id: int
    src: int
    dst: int
    total_bytes: int
    num_pkts: int
    cwnd: float
    base_rtt: float
    hops: int
    send_handle: Handle
    t_start: float
    # sender progress
    next_seq: int = 0
    cum_acked: int = 0
    bytes_sent: int = 0
    bytes_acked: int = 0
    retransmits: int = 0
    rto_gen: int = 0
    done_sending: bool = False
    # receiver progress
    expected: int = 0
    ooo: set = field(default_factory=set)
    delivered_ns: Optional[float] = None
    # CC bookkeeping
    acks_seen: int = 0
    acks_marked: int = 0
    rtt_samples: list = field(default_factory=list)
    last_decrease_ns: float = -math.inf

    @property
    def in_flight(self) -> int:
        return self.next_seq - self.cum_acked


def cc_mprdma_update(flow: FlowState, marked: bool) -> None:
    """Per-ack window update: additive 1/cwnd on clean acks, subtract 1/2
    per marked ack, floored at one packet."""
    if marked:
        flow.cwnd = max(1.0, flow.cwnd - 0.5)
    else:
        flow.cwnd = flow.cwnd + 1.0 / flow.cwnd


def cc_swift_update(flow: FlowState, rtt_ns: float, now_ns: float,
                    hop_allowance_ns: float, beta: float, beta_max: float) -> None:
    """Delay-target update: additive increase below target, multiplicative
    decrease (at most once per RTT) proportional to the overshoot."""
    target = flow.base_rtt + flow.hops * hop_allowance_ns
    if rtt_ns <= target:
        flow.cwnd = flow.cwnd + 1.0 / flow.cwnd
    elif now_ns - flow.last_decrease_ns >= rtt_ns:
        factor = max(1.0 - beta * (rtt_ns - target) / rtt_ns, 1.0 - beta_max)
        flow.cwnd = max(1.0, flow.cwnd * factor)
        flow.last_decrease_ns = now_ns


# ---------------------------------------------------------------------------
# Packets and calendar events

@dataclass
class _Packet:
    flow_id: int
    seq: int                  # data: sequence; ack: cumulative ack
    wire_bytes: int
    is_ack: bool
    path: list[str]
    hop: int = 0
    ecn: bool = False
    sent_ns: float = 0.0      # data: injection time (echoed back on the ack)
    echo_ns: float = 0.0      # ack: the acked packet's sent_ns
    echo_marked: bool = False


_FLOW_START = 0
_TX_DONE = 1
_ARRIVE = 2
_RTO = 3
_TASK_DONE = 4
_SAMPLE = 5


class PacketBackend:
    """Discrete-event packet simulation behind the backend contract."""

    def __init__(self, spec: Optional[FatTreeSpec] = None,
                 net: Optional[PacketNetConfig] = None):
        self._spec0 = spec or FatTreeSpec()
        self._net0 = net or PacketNetConfig()
        self.simulation_setup({})

    def simulation_setup(self, config: Mapping) -> None:
        self.spec = (FatTreeSpec.from_config(config)
                     if any(k.startswith("fattree.") for k in config) else self._spec0)
        self.net = (PacketNetConfig.from_config(config)
                    if any(k.startswith("net.") for k in config) else self._net0)
        self.topo = FatTree(self.spec)
        self.rng = random.Random(self.net.seed)
        self._heap: list = []
        self._seq = 0
        self._now = 0.0
        self._cpu_free: dict[tuple[int, int], float] = {}
        self._flows: dict[int, FlowState] = {}
        self._next_flow_id = 0
        # (src, dst, tag) -> FIFO queues for message matching
        self._flow_queues: dict[tuple[int, int, int], list[int]] = {}
        self._recv_queues: dict[tuple[int, int, int], list] = {}
        self._matched: dict[int, tuple[Handle, float]] = {}  # flow -> (recv handle, t_ready)
        self.counters = {"data_injected": 0, "data_delivered": 0, "data_dropped": 0,
                         "ack_injected": 0, "ack_delivered": 0, "ack_dropped": 0}
        self.queue_samples: list = []
        if self.net.sample_interval_ns > 0:
            self._schedule(self.net.sample_interval_ns, _SAMPLE, None)

    # -- calendar -------------------------------------------------------

    def _schedule(self, t: float, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _emit(self, record: SimEventRecord) -> None:
        self._schedule(record.completion_ns, _TASK_DONE, record)

    # -- contract -------------------------------------------------------

    def post_calc(self, handle: Handle, rank: int, cpu: int,
                  duration_ns: int, t_ready: float) -> None:
        start = max(t_ready, self._cpu_free.get((rank, cpu), 0.0))
        self._cpu_free[(rank, cpu)] = start + duration_ns
        self._emit(SimEventRecord(handle, start + duration_ns, TaskKind.CALC,
                                  start_ns=start))

    def post_send(self, handle: Handle, src: int, dst: int, bytes: int,
                  tag: int, t_ready: float, *, cpu: int = 0, nic: int = 0) -> None:
        if not 0 <= src < self.spec.num_hosts or not 0 <= dst < self.spec.num_hosts:
            raise ValueError(f"rank out of range for {self.spec.num_hosts}-host tree")
        fid = self._next_flow_id
        self._next_flow_id += 1
        num_pkts = max(1, math.ceil(bytes / self.net.mtu_bytes))
        flow = FlowState(
            flow_id=fid, src=src, dst=dst, total_bytes=bytes, num_pkts=num_pkts,
            cwnd=self.net.init_cwnd,
            base_rtt=self.topo.base_rtt(src, dst, min(bytes, self.net.mtu_bytes) or self.net.ack_bytes,
                                        self.net.ack_bytes),
            hops=len(self.topo.path(src, dst, 0)),
            send_handle=handle, t_start=t_ready)
        self._flows[fid] = flow
        self._flow_queues.setdefault((src, dst, tag), []).append(fid)
        self._schedule(t_ready, _FLOW_START, fid)
        self._try_match((src, dst, tag))

    def post_recv(self, handle: Handle, dst: int, src: int, bytes: int,
                  tag: int, t_ready: float, *, cpu: int = 0, nic: int = 0) -> None:
        self._recv_queues.setdefault((src, dst, tag), []).append((handle, t_ready))
        self._try_match((src, dst, tag))

    def _try_match(self, key) -> None:
        flows = self._flow_queues.get(key, [])
        recvs = self._recv_queues.get(key, [])
        while flows and recvs:
            fid = flows.pop(0)
            handle, t_ready = recvs.pop(0)
            self._matched[fid] = (handle, t_ready)
            flow = self._flows[fid]
            if flow.delivered_ns is not None:
                self._emit_recv_done(flow)

    def _emit_recv_done(self, flow: FlowState) -> None:
        handle, t_ready = self._matched[flow.flow_id]
        done = max(flow.delivered_ns, t_ready)
        self._emit(SimEventRecord(handle, done, TaskKind.RECV,
                                  start_ns=t_ready, delivered_ns=flow.delivered_ns,
                                  matched_send=flow.send_handle))

    def next_completion(self) -> Optional[SimEventRecord]:
        while self._heap:
            t, _, kind, payload = heapq.heappop(self._heap)
            self._now = t
            if kind == _TASK_DONE:
                return payload
            if kind == _FLOW_START:
                self._pump(self._flows[payload])
            elif kind == _TX_DONE:
                self._tx_done(payload)
            elif kind == _ARRIVE:
                self._arrive(payload)
            elif kind == _RTO:
                self._rto_fire(*payload)
            elif kind == _SAMPLE:
                self._sample()
        return None

    # -- flow machinery ---------------------------------------------------

    def _data_path(self, flow: FlowState, seq: int) -> list[str]:
        if self.net.routing == "packet_spray":
            core = flow.flow_id + seq  # round-robin over uplinks
        else:
            core = _mix(flow.src, flow.dst, flow.flow_id, self.net.seed)
        return self.topo.path(flow.src, flow.dst, core)

    def _ack_path(self, flow: FlowState, seq: int) -> list[str]:
        if self.net.routing == "packet_spray":
            core = flow.flow_id + seq
        else:
            core = _mix(flow.dst, flow.src, flow.flow_id, self.net.seed)
        return self.topo.path(flow.dst, flow.src, core)

    def _pkt_bytes(self, flow: FlowState, seq: int) -> int:
        if seq == flow.num_pkts - 1:
            return flow.total_bytes - (flow.num_pkts - 1) * self.net.mtu_bytes
        return self.net.mtu_bytes

    def _pump(self, flow: FlowState) -> None:
        """Inject packets while the window allows."""
        if flow.done_sending:
            return
        injected = False
        while (flow.next_seq < flow.num_pkts
               and flow.in_flight < flow.cwnd - 1e-12):
            seq = flow.next_seq
            flow.next_seq += 1
            pkt = _Packet(flow.flow_id, seq, self._pkt_bytes(flow, seq),
                          is_ack=False, path=self._data_path(flow, seq),
                          sent_ns=self._now)
            flow.bytes_sent += pkt.wire_bytes
            self.counters["data_injected"] += 1
            injected = True
            self._enqueue(pkt)
        if injected:
            self._arm_rto(flow)

    def _arm_rto(self, flow: FlowState) -> None:
        flow.rto_gen += 1
        self._schedule(self._now + self.net.rto_ns, _RTO,
                       (flow.flow_id, flow.rto_gen))

    def _rto_fire(self, fid: int, gen: int) -> None:
        flow = self._flows[fid]
        if flow.done_sending or gen != flow.rto_gen:
            return
        # go-back-N: rewind to the cumulative ack and collapse the window
        flow.retransmits += flow.next_seq - flow.cum_acked
        flow.next_seq = flow.cum_acked
        flow.cwnd = 1.0
        self._pump(flow)
        self._arm_rto(flow)

    def _enqueue(self, pkt: _Packet) -> None:
        link = self.topo.links[pkt.path[pkt.hop]]
        cap = self.net.queue_capacity_bytes
        if link.queue_bytes + pkt.wire_bytes > cap:
            link.drops += 1
            key = "ack_dropped" if pkt.is_ack else "data_dropped"
            self.counters[key] += 1
            return
        occ = link.queue_bytes
        kmin = self.net.ecn_kmin_frac * cap
        kmax = self.net.ecn_kmax_frac * cap
        if occ > kmin:
            p = 1.0 if occ >= kmax else (occ - kmin) / (kmax - kmin)
            if self.rng.random() < p:
                pkt.ecn = True
                link.marks += 1
        link.queue.append(pkt)
        link.queue_bytes += pkt.wire_bytes
        link.max_occ = max(link.max_occ, link.queue_bytes)
        if not link.busy:
            self._start_tx(link)

    def _start_tx(self, link: _Link) -> None:
        link.busy = True
        pkt = link.queue[0]
        tx = pkt.wire_bytes / link.rate
        if link.first_tx is None:
            link.first_tx = self._now
        link.busy_ns += tx
        link.tx_bytes += pkt.wire_bytes
        self._schedule(self._now + tx, _TX_DONE, link.name)

    def _tx_done(self, link_name: str) -> None:
        link = self.topo.links[link_name]
        pkt = link.queue.pop(0)
        link.queue_bytes -= pkt.wire_bytes
        link.last_tx = self._now
        self._schedule(self._now + link.latency, _ARRIVE, pkt)
        if link.queue:
            self._start_tx(link)
        else:
            link.busy = False

    def _arrive(self, pkt: _Packet) -> None:
        pkt.hop += 1
        if pkt.hop < len(pkt.path):
            self._enqueue(pkt)
            return
        flow = self._flows[pkt.flow_id]
        if pkt.is_ack:
            self.counters["ack_delivered"] += 1
            self._handle_ack(flow, pkt)
        else:
            self.counters["data_delivered"] += 1
            self._handle_data(flow, pkt)

    def _handle_data(self, flow: FlowState, pkt: _Packet) -> None:
        if pkt.seq == flow.expected:
            flow.expected += 1
            while flow.expected in flow.ooo:
                flow.ooo.remove(flow.expected)
                flow.expected += 1
            if flow.expected == flow.num_pkts and flow.delivered_ns is None:
                flow.delivered_ns = self._now
                if flow.flow_id in self._matched:
                    self._emit_recv_done(flow)
        elif pkt.seq > flow.expected:
            flow.ooo.add(pkt.seq)
        ack = _Packet(flow.flow_id, flow.expected, self.net.ack_bytes,
                      is_ack=True, path=self._ack_path(flow, pkt.seq),
                      echo_ns=pkt.sent_ns, echo_marked=pkt.ecn)
        self.counters["ack_injected"] += 1
        self._enqueue(ack)

    def _handle_ack(self, flow: FlowState, pkt: _Packet) -> None:
        if flow.done_sending:
            return
        flow.acks_seen += 1
        if pkt.echo_marked:
            flow.acks_marked += 1
        rtt = self._now - pkt.echo_ns
        flow.rtt_samples.append(rtt)
        if self.net.cc == "mprdma":
            cc_mprdma_update(flow, pkt.echo_marked)
        else:
            cc_swift_update(flow, rtt, self._now, self.net.swift_hop_ns,
                            self.net.swift_beta, self.net.swift_beta_max)
        if pkt.seq > flow.cum_acked:
            newly = pkt.seq - flow.cum_acked
            flow.cum_acked = pkt.seq
            flow.bytes_acked = min(flow.total_bytes,
                                   flow.bytes_acked + newly * self.net.mtu_bytes)
            if flow.cum_acked >= flow.num_pkts:
                flow.done_sending = True
                self._emit(SimEventRecord(flow.send_handle, self._now,
                                          TaskKind.SEND, start_ns=flow.t_start))
                return
            self._arm_rto(flow)
        self._pump(flow)

    def _sample(self) -> None:
        for name in sorted(self.topo.links):
            occ = self.topo.links[name].queue_bytes
            if occ:
                self.queue_samples.append({"t": self._now, "link": name, "bytes": occ})
        if self._heap:
            self._schedule(self._now + self.net.sample_interval_ns, _SAMPLE, None)

    # -- stats ------------------------------------------------------------

    def net_stats(self) -> dict:
        links = {}
        for name in sorted(self.topo.links):
            l = self.topo.links[name]
            if l.tx_bytes or l.drops:
                links[name] = {"drops": l.drops, "marks": l.marks,
                               "max_occ_bytes": l.max_occ, "tx_bytes": l.tx_bytes,
                               "utilization": l.utilization()}
        return {
            "drops": self.counters["data_dropped"] + self.counters["ack_dropped"],
            "queue_samples": self.queue_samples,
            "packets": dict(self.counters),
            "links": links,
        }
