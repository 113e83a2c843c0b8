"""Message-level backend with LogGOPS timing.

Six parameters govern a message: L wire latency, o per-message CPU
overhead, g per-message NIC gap, G per-byte NIC gap, O per-byte CPU
overhead, and the rendezvous threshold S.  Timing rules:

* Calc occupies its (rank, cpu) stream for its duration; streams of one
  rank are independent resources, as is each (rank, nic).
* Send starts at t_s = max(t_ready, cpu free, nic free); the CPU is busy
  [t_s, t_s + o + O*b), the NIC [t_s, t_s + g + G*b); the message reaches
  the receiver at t_s + o + O*b + L + G*b (CPU overhead serializes before
  injection).
* Recv matches messages by (source, tag) in posted order (FIFO per key);
  the receiver CPU is busy for o starting at max(arrival, recv eligible,
  cpu free), and the recv completes after that o.
* Eager (b <= S): the sender's task completes right after its CPU
  overhead, independent of the receiver.
* Rendezvous (b > S): a zero-byte RTS goes out with full o/L cost; once
  the matching recv is eligible the receiver answers with a zero-byte CTS
  (full o/L cost); the data message then leaves the sender, whose task
  completes when injection finishes (arrival minus L).

Arrivals with no posted recv queue at the receiver without resource cost.
The backend is a time-ordered event calendar: resources are granted in
virtual-time order (ties by scheduling order), never by task posting
order, so completion times are independent of how the driving engine
interleaves posts.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .engine import Handle, SimEventRecord
from .model import TaskKind


@dataclass(frozen=True)
class LogGOPSParams:
    """L/o/g/G/O in ns (G, O per byte); S in bytes (math.inf = all eager)."""

    L: float = 3700.0
    o: float = 200.0
    g: float = 5.0
    G: float = 0.04
    O: float = 0.0
    S: float = 0.0

    def __post_init__(self):
        for name in ("L", "o", "g", "G", "O", "S"):
            if getattr(self, name) < 0:
                raise ValueError(f"LogGOPS parameter {name} must be >= 0")

    @classmethod
    def from_config(cls, config: Mapping) -> "LogGOPSParams":
        kwargs = {}
        for name in ("L", "o", "g", "G", "O", "S"):
            key = f"loggops.{name}"
            if key in config:
                raw = config[key]
                kwargs[name] = math.inf if raw in ("inf", math.inf) else float(raw)
        return cls(**kwargs)


def message_timing(bytes: int, params: LogGOPSParams, mode: str) -> dict[str, float]:
    """Per-resource durations of one message transfer.

    ``wire`` covers latency plus serialization (L + G*b); the eager
    end-to-end time with a pre-posted recv and idle resources is
    sender_cpu + wire + receiver_cpu.
    """
    if bytes < 0:
        raise ValueError("bytes must be >= 0")
    if mode not in ("eager", "rendezvous"):
        raise ValueError(f"unknown mode {mode!r}")
    p = params
    breakdown = {
        "sender_cpu": p.o + bytes * p.O,
        "sender_nic": p.g + bytes * p.G,
        "wire": p.L + bytes * p.G,
        "receiver_cpu": p.o,
    }
    if mode == "rendezvous":
        # RTS/CTS handshake prepends a zero-byte round trip.
        breakdown["handshake"] = 2 * (p.o + p.L)
    return breakdown


@dataclass
class _Msg:
    """One posted send, progressing through its transfer phases."""

    handle: Handle
    src: int
    dst: int
    bytes: int
    cpu: int
    nic: int
    t_ready: float
    eager: bool
    arrival: Optional[float] = None       # data at the receiver
    rts_arrival: Optional[float] = None
    recv: Optional["_Recv"] = None


@dataclass
class _Recv:
    handle: Handle
    cpu: int
    nic: int
    t_ready: float
    msg: Optional[_Msg] = None


@dataclass
class _Key:
    sends: list = field(default_factory=list)
    recvs: list = field(default_factory=list)
    paired: int = 0


# calendar event kinds
_TRY_CALC = 0
_TRY_SEND = 1
_ARRIVE_RTS = 2
_TRY_CTS = 3
_ARRIVE_CTS = 4
_TRY_DATA = 5
_ARRIVE_DATA = 6
_TRY_RECV = 7
_DONE = 8


class LogGopsBackend:
    """Event-calendar implementation of the timing rules above."""

    def __init__(self, params: Optional[LogGOPSParams] = None):
        self.params = params or LogGOPSParams()
        self.simulation_setup({})

    def simulation_setup(self, config: Mapping) -> None:
        if any(k.startswith("loggops.") for k in config):
            self.params = LogGOPSParams.from_config(config)
        self._cpu_free: dict[tuple[int, int], float] = {}
        self._nic_free: dict[tuple[int, int], float] = {}
        self._heap: list = []
        self._seq = 0
        self._keys: dict[tuple[int, int, int], _Key] = {}
        self._now = 0.0

    # -- calendar ---------------------------------------------------------

    def _at(self, t: float, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _cpu(self, rank: int, cpu: int) -> float:
        return self._cpu_free.get((rank, cpu), 0.0)

    def _nic(self, rank: int, nic: int) -> float:
        return self._nic_free.get((rank, nic), 0.0)

    # -- contract ---------------------------------------------------------

    def post_calc(self, handle: Handle, rank: int, cpu: int,
                  duration_ns: int, t_ready: float) -> None:
        self._at(t_ready, _TRY_CALC, (handle, rank, cpu, duration_ns))

    def post_send(self, handle: Handle, src: int, dst: int, bytes: int,
                  tag: int, t_ready: float, *, cpu: int = 0, nic: int = 0) -> None:
        p = self.params
        msg = _Msg(handle, src, dst, bytes, cpu, nic, t_ready,
                   eager=bytes <= p.S)
        key = self._keys.setdefault((src, dst, tag), _Key())
        key.sends.append(msg)
        self._at(t_ready, _TRY_SEND, msg)
        self._pair(key)

    def post_recv(self, handle: Handle, dst: int, src: int, bytes: int,
                  tag: int, t_ready: float, *, cpu: int = 0, nic: int = 0) -> None:
        rcv = _Recv(handle, cpu, nic, t_ready)
        key = self._keys.setdefault((src, dst, tag), _Key())
        key.recvs.append(rcv)
        self._pair(key)

    def _pair(self, key: _Key) -> None:
        # k-th send matches k-th recv, in posted order
        while key.paired < len(key.sends) and key.paired < len(key.recvs):
            msg = key.sends[key.paired]
            rcv = key.recvs[key.paired]
            key.paired += 1
            msg.recv = rcv
            rcv.msg = msg
            if msg.eager:
                if msg.arrival is not None:
                    self._at(max(self._now, msg.arrival, rcv.t_ready),
                             _TRY_RECV, msg)
            elif msg.rts_arrival is not None:
                self._at(max(self._now, msg.rts_arrival, rcv.t_ready),
                         _TRY_CTS, msg)

    def next_completion(self) -> Optional[SimEventRecord]:
        p = self.params
        while self._heap:
            t, _, kind, payload = heapq.heappop(self._heap)
            self._now = t
            if kind == _DONE:
                return payload

            if kind == _TRY_CALC:
                handle, rank, cpu, dur = payload
                free = self._cpu(rank, cpu)
                if free > t:
                    self._at(free, _TRY_CALC, payload)
                    continue
                self._cpu_free[(rank, cpu)] = t + dur
                self._at(t + dur, _DONE,
                         SimEventRecord(handle, t + dur, TaskKind.CALC, start_ns=t))

            elif kind == _TRY_SEND:
                msg = payload
                free = max(self._cpu(msg.src, msg.cpu), self._nic(msg.src, msg.nic))
                if free > t:
                    self._at(free, _TRY_SEND, msg)
                    continue
                if msg.eager:
                    cpu_time = p.o + msg.bytes * p.O
                    self._cpu_free[(msg.src, msg.cpu)] = t + cpu_time
                    self._nic_free[(msg.src, msg.nic)] = t + p.g + msg.bytes * p.G
                    self._at(t + cpu_time, _DONE,
                             SimEventRecord(msg.handle, t + cpu_time,
                                            TaskKind.SEND, start_ns=t))
                    self._at(t + cpu_time + p.L + msg.bytes * p.G,
                             _ARRIVE_DATA, msg)
                else:
                    # zero-byte RTS carries full per-message costs
                    self._cpu_free[(msg.src, msg.cpu)] = t + p.o
                    self._nic_free[(msg.src, msg.nic)] = t + p.g
                    self._at(t + p.o + p.L, _ARRIVE_RTS, msg)

            elif kind == _ARRIVE_RTS:
                msg = payload
                msg.rts_arrival = t
                if msg.recv is not None:
                    self._at(max(t, msg.recv.t_ready), _TRY_CTS, msg)

            elif kind == _TRY_CTS:
                msg = payload
                rcv = msg.recv
                free = max(self._cpu(msg.dst, rcv.cpu), self._nic(msg.dst, rcv.nic))
                if free > t:
                    self._at(free, _TRY_CTS, msg)
                    continue
                self._cpu_free[(msg.dst, rcv.cpu)] = t + p.o
                self._nic_free[(msg.dst, rcv.nic)] = t + p.g
                self._at(t + p.o + p.L, _ARRIVE_CTS, msg)

            elif kind == _ARRIVE_CTS:
                self._at(t, _TRY_DATA, payload)

            elif kind == _TRY_DATA:
                msg = payload
                free = max(self._cpu(msg.src, msg.cpu), self._nic(msg.src, msg.nic))
                if free > t:
                    self._at(free, _TRY_DATA, msg)
                    continue
                cpu_time = p.o + msg.bytes * p.O
                self._cpu_free[(msg.src, msg.cpu)] = t + cpu_time
                self._nic_free[(msg.src, msg.nic)] = t + p.g + msg.bytes * p.G
                injected = t + cpu_time + msg.bytes * p.G
                self._at(injected, _DONE,
                         SimEventRecord(msg.handle, injected, TaskKind.SEND,
                                        start_ns=msg.t_ready))
                self._at(t + cpu_time + p.L + msg.bytes * p.G, _ARRIVE_DATA, msg)

            elif kind == _ARRIVE_DATA:
                msg = payload
                msg.arrival = t
                if msg.recv is not None:
                    self._at(max(t, msg.recv.t_ready), _TRY_RECV, msg)

            elif kind == _TRY_RECV:
                msg = payload
                rcv = msg.recv
                free = self._cpu(msg.dst, rcv.cpu)
                if free > t:
                    self._at(free, _TRY_RECV, msg)
                    continue
                self._cpu_free[(msg.dst, rcv.cpu)] = t + p.o
                self._at(t + p.o, _DONE,
                         SimEventRecord(rcv.handle, t + p.o, TaskKind.RECV,
                                        start_ns=t, delivered_ns=msg.arrival,
                                        matched_send=msg.handle))
        return None
