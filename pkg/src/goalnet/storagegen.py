"""Block-storage trace replay.

SPC-format I/O records are expanded into the control/data message
sequences a distributed block store executes: the host first asks the
change-coordinator service (CCS) which block-storage service (BSS) holds
the data, then reads from (or writes to, with replication) the BSS ranks.
Metadata, gateway, and load-balancer ranks are instantiated for topology
realism but sit outside the default request path; a config flag routes
data legs through the gateway service instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .model import GoalSchedule, ScheduleBuilder

REQ_TAG_BASE = 1 << 16


class SpcFormatError(ValueError):
    pass


@dataclass(frozen=True)
class IoRequest:
    asu: int
    lba: int
    bytes: int
    op: str          # "R" | "W"
    t_ns: int
    host: int


@dataclass(frozen=True)
class StorageCluster:
    """Service sizing and the rank layout.

    Ranks are laid out hosts first, then CCS, BSS, MDS, GS, SLB blocks.
    """

    num_hosts: int = 4
    num_ccs: int = 1
    num_bss: int = 4
    num_mds: int = 1
    num_gs: int = 1
    num_slb: int = 1
    replication: int = 3
    control_bytes: int = 256
    service_calc_ns: int = 2000
    route_via_gateway: bool = False
    closed_loop: bool = False

    def __post_init__(self):
        if min(self.num_hosts, self.num_ccs, self.num_bss) < 1:
            raise ValueError("need at least one host, CCS, and BSS rank")
        if self.num_mds < 0 or self.num_gs < 0 or self.num_slb < 0:
            raise ValueError("service counts must be >= 0")
        if not 1 <= self.replication <= self.num_bss:
            raise ValueError("replication factor must be in [1, num_bss]")
        if self.route_via_gateway and self.num_gs < 1:
            raise ValueError("gateway routing needs at least one GS rank")

    @property
    def ccs_base(self) -> int:
        return self.num_hosts

    @property
    def bss_base(self) -> int:
        return self.ccs_base + self.num_ccs

    @property
    def mds_base(self) -> int:
        return self.bss_base + self.num_bss

    @property
    def gs_base(self) -> int:
        return self.mds_base + self.num_mds

    @property
    def slb_base(self) -> int:
        return self.gs_base + self.num_gs

    @property
    def num_ranks(self) -> int:
        return self.slb_base + self.num_slb

    def host_of(self, asu: int) -> int:
        return asu % self.num_hosts

    def ccs_of(self, asu: int) -> int:
        return self.ccs_base + asu % self.num_ccs

    def gs_of(self, asu: int) -> int:
        return self.gs_base + asu % self.num_gs

    def bss_replicas(self, asu: int, lba: int, count: int) -> list[int]:
        """Stable hash striping; replicas on consecutive BSS ranks."""
        h = (asu * 0x9E3779B1 + lba * 0x85EBCA77 + 0xC2B2AE35) & 0xFFFFFFFF
        h ^= h >> 16
        h = (h * 0x45D9F3B) & 0xFFFFFFFF
        h ^= h >> 13
        first = h % self.num_bss
        return [self.bss_base + (first + k) % self.num_bss for k in range(count)]

    @classmethod
    def from_config(cls, config: Mapping) -> "StorageCluster":
        m = {"storage.hosts": ("num_hosts", int),
             "storage.ccs": ("num_ccs", int),
             "storage.bss": ("num_bss", int),
             "storage.mds": ("num_mds", int),
             "storage.gs": ("num_gs", int),
             "storage.slb": ("num_slb", int),
             "storage.replication": ("replication", int),
             "storage.control_bytes": ("control_bytes", int),
             "storage.service_calc_ns": ("service_calc_ns", int),
             "storage.route_via_gateway": ("route_via_gateway", lambda v: str(v).lower() in ("1", "true", "yes")),
             "storage.closed_loop": ("closed_loop", lambda v: str(v).lower() in ("1", "true", "yes"))}
        kwargs = {}
        for key, (attr, cast) in m.items():
            if key in config:
                kwargs[attr] = cast(config[key])
        return cls(**kwargs)


def parse_spc_trace(text: str, cluster: Optional[StorageCluster] = None) -> list[IoRequest]:
    """Parse SPC CSV lines ``asu,lba,bytes,opcode,timestamp`` (timestamp in
    decimal seconds) into ns-resolution requests sorted by time."""
    cluster = cluster or StorageCluster()
    requests = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 5:
            raise SpcFormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            asu = int(parts[0])
            lba = int(parts[1])
            nbytes = int(parts[2])
            ts = float(parts[4])
        except ValueError:
            raise SpcFormatError(f"line {lineno}: malformed numeric field") from None
        if nbytes <= 0:
            raise SpcFormatError(f"line {lineno}: request size must be positive")
        opcode = parts[3]
        if opcode in ("r", "R"):
            op = "R"
        elif opcode in ("w", "W"):
            op = "W"
        else:
            raise SpcFormatError(f"line {lineno}: unknown opcode {opcode!r}")
        if ts < 0:
            raise SpcFormatError(f"line {lineno}: negative timestamp")
        requests.append(IoRequest(asu=asu, lba=lba, bytes=nbytes, op=op,
                                  t_ns=round(ts * 1e9),
                                  host=cluster.host_of(asu)))
    requests.sort(key=lambda r: r.t_ns)
    return requests


def gen_direct_drive(requests: Sequence[IoRequest],
                     cluster: Optional[StorageCluster] = None) -> GoalSchedule:
    """Expand I/O requests into the storage-cluster message sequences.

    Read: host->CCS control, CCS calc, CCS->host reply, host->BSS request,
    BSS calc, BSS->host data (4 message pairs, 2 service calcs).  Write:
    the CCS round trip, then the data fanned out to ``replication`` BSS
    ranks in parallel, each answering with an ack (2 + 2R pairs).  Hosts
    issue open-loop by default: inter-request gaps come from trace
    timestamp deltas regardless of completion times.
    """
    cluster = cluster or StorageCluster()
    b = ScheduleBuilder(cluster.num_ranks)

    per_host: dict[int, list[tuple[int, IoRequest]]] = {}
    for idx, req in enumerate(requests):
        per_host.setdefault(req.host, []).append((idx, req))

    for host in sorted(per_host):
        spine: list[int] = []      # gap-calc chain controlling issue times
        last_done: list[int] = []  # previous request's terminal recvs
        prev_t: Optional[int] = None
        for idx, req in per_host[host]:
            gap = req.t_ns if prev_t is None else max(0, req.t_ns - prev_t)
            prev_t = req.t_ns
            c = b.calc(host, gap, label=f"io{idx}_gap")
            for p in spine:
                b.require(host, p, c)
            if cluster.closed_loop:
                for p in last_done:
                    b.require(host, p, c)
            spine = [c]
            last_done = _expand_request(b, cluster, idx, req, issue_after=c)

    return b.build()


def _expand_request(b: ScheduleBuilder, cl: StorageCluster, idx: int,
                    req: IoRequest, issue_after: int) -> list[int]:
    tag = REQ_TAG_BASE + idx
    host = req.host
    ccs = cl.ccs_of(req.asu)
    ctrl = cl.control_bytes

    # coordinator round trip
    s1 = b.send(host, ccs, ctrl, tag=tag, label=f"io{idx}_ccs_req")
    b.require(host, issue_after, s1)
    r1 = b.recv(ccs, host, ctrl, tag=tag, label=f"io{idx}_ccs_in")
    c1 = b.calc(ccs, cl.service_calc_ns, label=f"io{idx}_ccs_work")
    b.require(ccs, r1, c1)
    s2 = b.send(ccs, host, ctrl, tag=tag, label=f"io{idx}_ccs_rep")
    b.require(ccs, c1, s2)
    r2 = b.recv(host, ccs, ctrl, tag=tag, label=f"io{idx}_ccs_ack")
    b.require(host, s1, r2)

    replicas = cl.bss_replicas(req.asu, req.lba,
                               1 if req.op == "R" else cl.replication)
    terminals: list[int] = []
    for k, bss in enumerate(replicas):
        if cl.route_via_gateway:
            terminals.extend(_data_leg_via_gateway(b, cl, idx, k, req, bss, r2, tag))
        else:
            terminals.extend(_data_leg(b, cl, idx, k, req, bss, r2, tag))
    return terminals


def _data_leg(b: ScheduleBuilder, cl: StorageCluster, idx: int, k: int,
              req: IoRequest, bss: int, after: int, tag: int) -> list[int]:
    host = req.host
    out_bytes = cl.control_bytes if req.op == "R" else req.bytes
    back_bytes = req.bytes if req.op == "R" else cl.control_bytes

    s = b.send(host, bss, out_bytes, tag=tag, label=f"io{idx}r{k}_bss_req")
    b.require(host, after, s)
    r = b.recv(bss, host, out_bytes, tag=tag, label=f"io{idx}r{k}_bss_in")
    c = b.calc(bss, cl.service_calc_ns, label=f"io{idx}r{k}_bss_work")
    b.require(bss, r, c)
    s2 = b.send(bss, host, back_bytes, tag=tag, label=f"io{idx}r{k}_bss_rep")
    b.require(bss, c, s2)
    r2 = b.recv(host, bss, back_bytes, tag=tag, label=f"io{idx}r{k}_done")
    b.require(host, s, r2)
    return [r2]


def _data_leg_via_gateway(b: ScheduleBuilder, cl: StorageCluster, idx: int,
                          k: int, req: IoRequest, bss: int, after: int,
                          tag: int) -> list[int]:
    """Same leg with the gateway service relaying both directions."""
    host = req.host
    gs = cl.gs_of(req.asu)
    out_bytes = cl.control_bytes if req.op == "R" else req.bytes
    back_bytes = req.bytes if req.op == "R" else cl.control_bytes

    s = b.send(host, gs, out_bytes, tag=tag, label=f"io{idx}r{k}_gs_req")
    b.require(host, after, s)
    r = b.recv(gs, host, out_bytes, tag=tag, label=f"io{idx}r{k}_gs_in")
    fwd = b.send(gs, bss, out_bytes, tag=tag, label=f"io{idx}r{k}_gs_fwd")
    b.require(gs, r, fwd)
    rb = b.recv(bss, gs, out_bytes, tag=tag, label=f"io{idx}r{k}_bss_in")
    c = b.calc(bss, cl.service_calc_ns, label=f"io{idx}r{k}_bss_work")
    b.require(bss, rb, c)
    sb = b.send(bss, gs, back_bytes, tag=tag, label=f"io{idx}r{k}_bss_rep")
    b.require(bss, c, sb)
    rg = b.recv(gs, bss, back_bytes, tag=tag, label=f"io{idx}r{k}_gs_back")
    b.require(gs, fwd, rg)
    sg = b.send(gs, host, back_bytes, tag=tag, label=f"io{idx}r{k}_gs_rep")
    b.require(gs, rg, sg)
    r2 = b.recv(host, gs, back_bytes, tag=tag, label=f"io{idx}r{k}_done")
    b.require(host, s, r2)
    return [r2]
