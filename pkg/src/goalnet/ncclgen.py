"""GPU collective-trace pipeline.

Four stages turn per-GPU stream traces into a node-level schedule:

1. ingest per-GPU JSON traces (stream -> kernel events) plus a
   communicator table;
2. build one DAG per GPU: each stream becomes a chain of inferred
   calc gaps and collective placeholders, bracketed by zero-cost dummy
   fan-out/join vertices, one compute-stream label per CUDA stream;
3. decompose each collective into ring send/recv chains -- payload split
   across channels, each channel's share split into protocol-slot-sized
   chunks transmitted sequentially (Simple: 512 KiB slots; LL: 32 KiB
   slots with inflated wire bytes);
4. map GPUs onto nodes: one rank per node, per-node dummy root/sink,
   and every send/recv pair whose endpoints share a node replaced by
   calc vertices costed with the intra-node link model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .model import GoalSchedule, ScheduleBuilder
from .schedgen import TAG_BASE

SUPPORTED_OPS = {"broadcast", "allreduce", "allgather", "reduce_scatter"}


class GpuTraceError(ValueError):
    pass


@dataclass(frozen=True)
class GpuKernelEvent:
    gpu: int
    stream: str
    kind: str                 # "collective" | "compute"
    ts: int
    te: int
    op: Optional[str] = None
    bytes: int = 0
    comm: Optional[str] = None
    root: Optional[int] = None  # broadcast root, a GPU id


@dataclass(frozen=True)
class NcclConfig:
    nchannels: int = 1
    algo: str = "ring"
    proto: str = "Simple"
    slot_bytes_simple: int = 524288
    slot_bytes_ll: int = 32768
    ll_wire_factor: float = 2.0

    def __post_init__(self):
        if not 1 <= self.nchannels <= 64:
            raise ValueError("nchannels must be in [1, 64]")
        if self.algo != "ring":
            raise ValueError("only the ring algorithm is supported")
        if self.proto not in ("Simple", "LL"):
            raise ValueError("proto must be Simple or LL")
        if self.slot_bytes_simple < 1 or self.slot_bytes_ll < 1:
            raise ValueError("slot sizes must be positive")

    @property
    def slot_bytes(self) -> int:
        return self.slot_bytes_simple if self.proto == "Simple" else self.slot_bytes_ll

    def wire_bytes(self, payload: int) -> int:
        if self.proto == "LL":
            return math.ceil(payload * self.ll_wire_factor)
        return payload

    @classmethod
    def from_config(cls, config: Mapping) -> "NcclConfig":
        m = {"nccl.nchannels": ("nchannels", int),
             "nccl.algo": ("algo", str),
             "nccl.proto": ("proto", str),
             "nccl.slot_bytes_simple": ("slot_bytes_simple", int),
             "nccl.slot_bytes_ll": ("slot_bytes_ll", int),
             "nccl.ll_wire_factor": ("ll_wire_factor", float)}
        kwargs = {}
        for key, (attr, cast) in m.items():
            if key in config:
                kwargs[attr] = cast(config[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class GpuNodeMap:
    """gpu id -> (node id, local index) plus the intra-node link model."""

    mapping: Mapping[int, tuple[int, int]]
    intra_bw_gbps: float = 150.0   # GB/s == bytes/ns
    intra_latency_ns: float = 0.0

    def __post_init__(self):
        if not self.mapping:
            raise ValueError("empty GPU-to-node map")
        if self.intra_bw_gbps <= 0 or self.intra_latency_ns < 0:
            raise ValueError("bad intra-node link parameters")
        seen = set()
        for gpu, (node, local) in self.mapping.items():
            if (node, local) in seen:
                raise ValueError(f"duplicate (node, local) slot for gpu {gpu}")
            seen.add((node, local))

    @property
    def num_nodes(self) -> int:
        return max(node for node, _ in self.mapping.values()) + 1

    def node_of(self, gpu: int) -> int:
        return self.mapping[gpu][0]

    def transfer_ns(self, nbytes: int) -> int:
        return round(self.intra_latency_ns + nbytes / self.intra_bw_gbps)

    @classmethod
    def all_on_nodes(cls, gpus: Sequence[int], gpus_per_node: int,
                     **kw) -> "GpuNodeMap":
        ordered = sorted(gpus)
        return cls({g: (i // gpus_per_node, i % gpus_per_node)
                    for i, g in enumerate(ordered)}, **kw)


# ---------------------------------------------------------------------------
# Stage 1: ingest

def parse_gpu_trace(docs: Sequence[Mapping],
                    communicators: Mapping[str, Sequence[int]]
                    ) -> tuple[dict[int, list[GpuKernelEvent]], dict[str, tuple[int, ...]]]:
    """Validate per-GPU trace documents against the communicator table.

    Each document carries ``gpu`` and ``streams`` (stream id -> event
    array with fields ``kind``, ``op``, ``bytes``, ``comm``, ``root``,
    ``ts``, ``te``).  Events within one stream must not overlap.
    """
    comm_table = {cid: tuple(int(g) for g in members)
                  for cid, members in communicators.items()}
    for cid, members in comm_table.items():
        if len(set(members)) != len(members):
            raise GpuTraceError(f"communicator {cid} lists duplicate GPUs")

    events: dict[int, list[GpuKernelEvent]] = {}
    for doc in docs:
        try:
            gpu = int(doc["gpu"])
            streams = doc["streams"]
        except (KeyError, TypeError):
            raise GpuTraceError("trace document needs 'gpu' and 'streams'") from None
        if gpu in events:
            raise GpuTraceError(f"duplicate trace for gpu {gpu}")
        evs: list[GpuKernelEvent] = []
        for sid in sorted(streams, key=str):
            stream_events = []
            for e in streams[sid]:
                kind = e.get("kind")
                if kind not in ("collective", "compute"):
                    raise GpuTraceError(f"gpu {gpu} stream {sid}: bad kind {kind!r}")
                ts, te = int(e["ts"]), int(e["te"])
                if te < ts:
                    raise GpuTraceError(f"gpu {gpu} stream {sid}: te < ts")
                if kind == "collective":
                    op = e.get("op")
                    if op not in SUPPORTED_OPS:
                        raise GpuTraceError(f"gpu {gpu} stream {sid}: unsupported op {op!r}")
                    cid = e.get("comm")
                    if cid not in comm_table:
                        raise GpuTraceError(
                            f"gpu {gpu} stream {sid}: unknown communicator {cid!r}")
                    if gpu not in comm_table[cid]:
                        raise GpuTraceError(
                            f"gpu {gpu} stream {sid}: gpu not in communicator {cid}")
                    root = e.get("root")
                    stream_events.append(GpuKernelEvent(
                        gpu=gpu, stream=str(sid), kind=kind, ts=ts, te=te,
                        op=op, bytes=int(e["bytes"]), comm=cid,
                        root=None if root is None else int(root)))
                else:
                    stream_events.append(GpuKernelEvent(
                        gpu=gpu, stream=str(sid), kind=kind, ts=ts, te=te))
            stream_events.sort(key=lambda e: e.ts)
            for a, b in zip(stream_events, stream_events[1:]):
                if b.ts < a.te:
                    raise GpuTraceError(
                        f"gpu {gpu} stream {sid}: events [{a.ts},{a.te}] and "
                        f"[{b.ts},{b.te}] overlap")
            evs.extend(stream_events)
        events[gpu] = evs
    return events, comm_table


def emit_gpu_trace(events: Mapping[int, Sequence[GpuKernelEvent]]) -> list[dict]:
    """Inverse of parse_gpu_trace, for fixtures and round-trip checks."""
    docs = []
    for gpu in sorted(events):
        streams: dict[str, list[dict]] = {}
        for e in events[gpu]:
            d: dict = {"kind": e.kind, "ts": e.ts, "te": e.te}
            if e.kind == "collective":
                d.update(op=e.op, bytes=e.bytes, comm=e.comm)
                if e.root is not None:
                    d["root"] = e.root
            streams.setdefault(e.stream, []).append(d)
        docs.append({"gpu": gpu, "streams": streams})
    return docs


# ---------------------------------------------------------------------------
# Stage 2: per-GPU stream DAGs

DUMMY = "dummy"


@dataclass
class IrNode:
    kind: str               # "calc" | "coll" | "dummy"
    stream: str = ""
    dur: int = 0
    op: str = ""
    bytes: int = 0
    comm: str = ""
    root: Optional[int] = None


@dataclass
class GpuDag:
    gpu: int
    nodes: list[IrNode] = field(default_factory=list)
    deps: set[tuple[int, int]] = field(default_factory=set)
    streams: list[str] = field(default_factory=list)

    def add(self, node: IrNode, *requires: int) -> int:
        idx = len(self.nodes)
        self.nodes.append(node)
        for r in requires:
            self.deps.add((r, idx))
        return idx


def build_stream_dags(events: Mapping[int, Sequence[GpuKernelEvent]]
                      ) -> dict[int, GpuDag]:
    """Stage 2: one DAG per GPU with a dummy root fanning out to every
    stream chain and a dummy sink joining them; inter-kernel gaps become
    calc nodes.  A global epoch (earliest event anywhere) preserves
    relative start skew."""
    epoch = min((e.ts for evs in events.values() for e in evs), default=0)
    dags: dict[int, GpuDag] = {}
    for gpu in sorted(events):
        dag = GpuDag(gpu=gpu)
        root = dag.add(IrNode(DUMMY))
        tails = []
        by_stream: dict[str, list[GpuKernelEvent]] = {}
        for e in events[gpu]:
            by_stream.setdefault(e.stream, []).append(e)
        dag.streams = sorted(by_stream)
        for sid in dag.streams:
            prev = root
            prev_end: Optional[int] = None
            for e in by_stream[sid]:
                gap = (e.ts - epoch) if prev_end is None else max(0, e.ts - prev_end)
                prev_end = max(e.te, prev_end or 0)
                if gap > 0:
                    prev = dag.add(IrNode("calc", stream=sid, dur=gap), prev)
                if e.kind == "compute":
                    prev = dag.add(IrNode("calc", stream=sid, dur=e.te - e.ts), prev)
                else:
                    prev = dag.add(IrNode("coll", stream=sid, op=e.op,
                                          bytes=e.bytes, comm=e.comm,
                                          root=e.root), prev)
            tails.append(prev)
        sink = dag.add(IrNode(DUMMY), *tails)
        if not tails:
            dag.deps.add((root, sink))
        dags[gpu] = dag
    return dags


# ---------------------------------------------------------------------------
# Stage 3: collective decomposition

@dataclass
class _GpuTask:
    kind: str               # "send" | "recv" | "calc" | "dummy"
    stream: str = ""
    dur: int = 0
    bytes: int = 0
    peer: int = -1          # gpu id
    tag: int = 0
    pair: int = -1          # matches send/recv endpoints across GPUs
    label: Optional[str] = None


@dataclass
class _GpuFrag:
    tasks: list[_GpuTask] = field(default_factory=list)
    deps: set[tuple[int, int]] = field(default_factory=set)

    def add(self, task: _GpuTask, *requires: Optional[int]) -> int:
        idx = len(self.tasks)
        self.tasks.append(task)
        for r in requires:
            if r is not None:
                self.deps.add((r, idx))
        return idx

    def roots(self) -> list[int]:
        has_in = {a for _, a in self.deps}
        return [i for i in range(len(self.tasks)) if i not in has_in]

    def sinks(self) -> list[int]:
        has_out = {b for b, _ in self.deps}
        return [i for i in range(len(self.tasks)) if i not in has_out]


def _chunks(total: int, slot: int) -> list[int]:
    if total <= 0:
        return [total] if total == 0 else []
    n = math.ceil(total / slot)
    sizes = [slot] * n
    sizes[-1] = total - slot * (n - 1)
    return sizes


class _PairAlloc:
    def __init__(self):
        self.next_pair = 0

    def take(self) -> int:
        self.next_pair += 1
        return self.next_pair - 1


def decompose_collective(op: str, communicator: Sequence[int], nbytes: int,
                         cfg: NcclConfig, tag_base: int = TAG_BASE,
                         root: Optional[int] = None,
                         _pairs: Optional[_PairAlloc] = None
                         ) -> dict[int, _GpuFrag]:
    """Stage 3: one collective into per-GPU sub-DAGs.

    The per-channel share is ceil(bytes/nchannels); each (channel, step)
    load is cut into protocol-slot chunks sent sequentially and forwarded
    pipelined (chunk i forwards while chunk i+1 is still arriving).
    Channels are independent sub-DAGs.  Tags encode (channel, src, dst)
    so neither channels nor node-collapsed GPU pairs can cross-match.
    The ring order is ascending GPU id, rotated so a broadcast root
    leads.
    """
    if op not in SUPPORTED_OPS:
        raise ValueError(f"unsupported collective {op!r}")
    ring = sorted(set(communicator))
    if len(ring) < 2:
        raise ValueError("communicator needs at least 2 GPUs")
    if len(ring) != len(communicator):
        raise ValueError("duplicate GPUs in communicator")
    p = len(ring)
    if op == "broadcast":
        if root is None or root not in ring:
            raise ValueError("broadcast needs a root inside the communicator")
        rp = ring.index(root)
        ring = ring[rp:] + ring[:rp]

    pairs = _pairs or _PairAlloc()
    idx_of = {g: i for i, g in enumerate(ring)}

    def tag(ch: int, src: int, dst: int) -> int:
        return tag_base + ch * p * p + idx_of[src] * p + idx_of[dst]

    out: dict[int, _GpuFrag] = {g: _GpuFrag() for g in ring}
    share = math.ceil(nbytes / cfg.nchannels)

    for ch in range(cfg.nchannels):
        if op == "broadcast":
            _ring_broadcast(out, ring, share, cfg, ch, tag, pairs)
        else:
            steps = 2 * (p - 1) if op == "allreduce" else p - 1
            _ring_pipeline(out, ring, share, cfg, ch, tag, pairs, steps, op)
    return out


def _ring_broadcast(out, ring, share, cfg, ch, tag, pairs):
    p = len(ring)
    sizes = _chunks(cfg.wire_bytes(share), cfg.slot_bytes)
    pair_ids = [[pairs.take() for _ in sizes] for _ in range(p - 1)]
    for i, gpu in enumerate(ring):
        f = out[gpu]
        nxt = ring[(i + 1) % p]
        prv = ring[i - 1]
        prev_send = prev_recv = None
        for c, size in enumerate(sizes):
            if i == 0:
                prev_send = f.add(
                    _GpuTask("send", bytes=size, peer=nxt, tag=tag(ch, gpu, nxt),
                             pair=pair_ids[0][c], label=f"bc_c{ch}k{c}_snd"),
                    prev_send)
            else:
                prev_recv = f.add(
                    _GpuTask("recv", bytes=size, peer=prv, tag=tag(ch, prv, gpu),
                             pair=pair_ids[i - 1][c], label=f"bc_c{ch}k{c}_rcv"),
                    prev_recv)
                if i < p - 1:
                    prev_send = f.add(
                        _GpuTask("send", bytes=size, peer=nxt,
                                 tag=tag(ch, gpu, nxt), pair=pair_ids[i][c],
                                 label=f"bc_c{ch}k{c}_fwd"),
                        prev_send, prev_recv)


def _ring_pipeline(out, ring, share, cfg, ch, tag, pairs, steps, name):
    p = len(ring)
    step_payload = math.ceil(share / p)
    sizes = _chunks(cfg.wire_bytes(step_payload), cfg.slot_bytes)
    prev_send: dict[int, Optional[int]] = {g: None for g in ring}
    prev_recv: dict[int, Optional[int]] = {g: None for g in ring}
    recv_of_step: dict[tuple[int, int], list[int]] = {}
    for s in range(steps):
        pair_ids = {i: [pairs.take() for _ in sizes] for i in range(p)}
        for i, gpu in enumerate(ring):
            f = out[gpu]
            nxt = ring[(i + 1) % p]
            prv = ring[i - 1]
            for c, size in enumerate(sizes):
                # forward in step s what arrived during step s-1
                data_dep = recv_of_step.get((gpu, s - 1), [None] * len(sizes))[c]
                snd = f.add(
                    _GpuTask("send", bytes=size, peer=nxt, tag=tag(ch, gpu, nxt),
                             pair=pair_ids[i][c],
                             label=f"{name}_c{ch}s{s}k{c}_snd"),
                    prev_send[gpu], data_dep)
                prev_send[gpu] = snd
                rcv = f.add(
                    _GpuTask("recv", bytes=size, peer=prv, tag=tag(ch, prv, gpu),
                             pair=pair_ids[(i - 1) % p][c],
                             label=f"{name}_c{ch}s{s}k{c}_rcv"),
                    prev_recv[gpu])
                prev_recv[gpu] = rcv
                recv_of_step.setdefault((gpu, s), []).append(rcv)


@dataclass
class _ExpandedGpu:
    gpu: int
    tasks: list[_GpuTask] = field(default_factory=list)
    deps: set[tuple[int, int]] = field(default_factory=set)
    streams: list[str] = field(default_factory=list)

    def add(self, task: _GpuTask, *requires: int) -> int:
        idx = len(self.tasks)
        self.tasks.append(task)
        for r in requires:
            self.deps.add((r, idx))
        return idx


def _expand_gpu_dags(dags: Mapping[int, GpuDag], comm_table: Mapping[str, tuple],
                     cfg: NcclConfig) -> dict[int, _ExpandedGpu]:
    """Replace coll placeholders with decomposed chains (stage 3 driver).

    The k-th operation on a communicator is the same collective instance
    on every member; mismatching op/bytes across members is an error.
    """
    instances: dict[tuple, dict] = {}
    occurrence: dict[tuple[int, str], int] = {}
    next_tag = [TAG_BASE]
    pairs = _PairAlloc()

    def instance_of(gpu: int, node: IrNode) -> dict:
        k = occurrence.get((gpu, node.comm), 0)
        occurrence[(gpu, node.comm)] = k + 1
        key = (node.comm, k)
        if key not in instances:
            members = comm_table[node.comm]
            iid = len(instances)
            frag = decompose_collective(node.op, members, node.bytes, cfg,
                                        tag_base=next_tag[0], root=node.root,
                                        _pairs=pairs)
            p = len(members)
            next_tag[0] += cfg.nchannels * p * p
            instances[key] = {"op": node.op, "bytes": node.bytes,
                              "root": node.root, "frag": frag, "iid": iid}
        inst = instances[key]
        if (inst["op"], inst["bytes"], inst["root"]) != (node.op, node.bytes, node.root):
            raise GpuTraceError(
                f"gpu {gpu}: collective #{k} on comm {node.comm} disagrees "
                f"with other members")
        return inst

    expanded: dict[int, _ExpandedGpu] = {}
    for gpu in sorted(dags):
        dag = dags[gpu]
        ex = _ExpandedGpu(gpu=gpu, streams=list(dag.streams))
        # node id -> (entry ids, exit ids) in the expanded graph
        entry: dict[int, list[int]] = {}
        exits: dict[int, list[int]] = {}
        order = _topo_order(len(dag.nodes), dag.deps)
        preds: dict[int, list[int]] = {i: [] for i in range(len(dag.nodes))}
        for before, after in dag.deps:
            preds[after].append(before)
        for nid in order:
            node = dag.nodes[nid]
            req = [e for pred in sorted(preds[nid]) for e in exits[pred]]
            if node.kind == DUMMY:
                tid = ex.add(_GpuTask("dummy", stream="", label="dummy"), *req)
                entry[nid], exits[nid] = [tid], [tid]
            elif node.kind == "calc":
                tid = ex.add(_GpuTask("calc", stream=node.stream, dur=node.dur),
                             *req)
                entry[nid], exits[nid] = [tid], [tid]
            else:
                inst = instance_of(gpu, node)
                frag: _GpuFrag = inst["frag"][gpu]
                base = len(ex.tasks)
                ids = []
                for t in frag.tasks:
                    ids.append(ex.add(_GpuTask(
                        t.kind, stream=node.stream, dur=t.dur, bytes=t.bytes,
                        peer=t.peer, tag=t.tag, pair=t.pair,
                        label=f"i{inst['iid']}_{t.label}")))
                for b_, a_ in frag.deps:
                    ex.deps.add((base + b_, base + a_))
                for r in frag.roots():
                    for pre in req:
                        ex.deps.add((pre, base + r))
                entry[nid] = [base + r for r in frag.roots()]
                exits[nid] = [base + sk for sk in frag.sinks()]
        expanded[gpu] = ex
    return expanded


def _topo_order(n: int, deps: set[tuple[int, int]]) -> list[int]:
    indeg = [0] * n
    succ: dict[int, list[int]] = {i: [] for i in range(n)}
    for b, a in deps:
        indeg[a] += 1
        succ[b].append(a)
    order = [i for i in range(n) if indeg[i] == 0]
    i = 0
    while i < len(order):
        for nxt in sorted(succ[order[i]]):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                order.append(nxt)
        i += 1
    if len(order) != n:
        raise GpuTraceError("cycle in GPU stream DAG")
    return order


# ---------------------------------------------------------------------------
# Stage 4: GPU -> node mapping

def map_gpus_to_nodes(expanded: Mapping[int, _ExpandedGpu],
                      node_map: GpuNodeMap) -> GoalSchedule:
    """Stage 4: one rank per node; per-node dummies combine the node's
    GPUs; same-node send/recv pairs become calc vertices costed by the
    intra-node link model, with an ordering edge from the send side to the
    recv side."""
    for gpu in expanded:
        if gpu not in node_map.mapping:
            raise ValueError(f"gpu {gpu} missing from the node map")

    num_nodes = node_map.num_nodes
    b = ScheduleBuilder(num_nodes)
    gid: dict[tuple[int, int], int] = {}   # (gpu, local task id) -> schedule id
    pair_side: dict[int, dict] = {}

    by_node: dict[int, list[int]] = {}
    for gpu in sorted(expanded):
        by_node.setdefault(node_map.node_of(gpu), []).append(gpu)

    for node in sorted(by_node):
        gpus = sorted(by_node[node], key=lambda g: node_map.mapping[g][1])
        node_root = b.dummy(node, name="node_root")
        gpu_sinks: list[int] = []
        cpu_base = 0
        for gpu in gpus:
            ex = expanded[gpu]
            cpu_of = {sid: cpu_base + i for i, sid in enumerate(ex.streams)}
            cpu_base += max(1, len(ex.streams))
            for lid, t in enumerate(ex.tasks):
                cpu = cpu_of.get(t.stream, cpu_base - max(1, len(ex.streams)))
                lbl = None if t.label is None else f"g{gpu}_{t.label}"
                if t.kind == "dummy":
                    tid = b.dummy(node, name=f"g{gpu}_")
                elif t.kind == "calc":
                    tid = b.calc(node, t.dur, cpu=cpu, label=lbl)
                else:
                    peer_node = node_map.node_of(t.peer)
                    if peer_node == node:
                        tid = b.calc(node, node_map.transfer_ns(t.bytes),
                                     cpu=cpu, label=f"{lbl}~intra")
                        pair_side.setdefault(t.pair, {})[t.kind] = (node, tid)
                    else:
                        if t.kind == "send":
                            tid = b.send(node, peer_node, t.bytes, tag=t.tag,
                                         cpu=cpu, label=lbl)
                        else:
                            tid = b.recv(node, peer_node, t.bytes, tag=t.tag,
                                         cpu=cpu, label=lbl)
                gid[(gpu, lid)] = tid
            for before, after in ex.deps:
                b.require(node, gid[(gpu, before)], gid[(gpu, after)])
            # gpu-level dummy root/sink sit at chain ends by construction
            entry = _ids_without(ex, incoming=True)
            exit_ = _ids_without(ex, incoming=False)
            for e in entry:
                b.require(node, node_root, gid[(gpu, e)])
            gpu_sinks.extend(gid[(gpu, x)] for x in exit_)
        node_sink = b.dummy(node, name="node_sink")
        for sk in gpu_sinks:
            b.require(node, sk, node_sink)

    # causality edge for elided intra-node transfers
    for pair, sides in sorted(pair_side.items()):
        if "send" in sides and "recv" in sides:
            (node_s, tid_s), (node_r, tid_r) = sides["send"], sides["recv"]
            b.require(node_s, tid_s, tid_r)

    return b.build()


def _ids_without(ex: _ExpandedGpu, incoming: bool) -> list[int]:
    marked = {(after if incoming else before) for before, after in ex.deps}
    return [i for i in range(len(ex.tasks)) if i not in marked]


# ---------------------------------------------------------------------------
# Pipeline driver

def gpu_trace_to_goal(docs: Sequence[Mapping],
                      communicators: Mapping[str, Sequence[int]],
                      cfg: Optional[NcclConfig] = None,
                      node_map: Optional[GpuNodeMap] = None) -> GoalSchedule:
    """Run stages 1-4 end to end.

    Without an explicit node map every GPU becomes its own node (pure
    inter-node schedule)."""
    cfg = cfg or NcclConfig()
    events, comm_table = parse_gpu_trace(docs, communicators)
    dags = build_stream_dags(events)
    expanded = _expand_gpu_dags(dags, comm_table, cfg)
    if node_map is None:
        node_map = GpuNodeMap({g: (i, 0) for i, g in enumerate(sorted(events))})
    return map_gpus_to_nodes(expanded, node_map)
