"""Command-line surface: generation, conversion, placement, simulation.

One binary with subcommands; all artifacts are written atomically and
carry the tool version plus the resolved-config hash, so a run can be
reproduced from its outputs alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import Optional, Sequence

from . import __version__
from .config import ConfigError, ExperimentConfig
from .engine import DeadlockError, mct_summary, place_jobs, run_simulation
from .goal_binary import GoalDecodeError, decode_binary, encode_binary
from .goal_text import GoalSyntaxError, emit_text, parse_text
from .loggops import LogGOPSParams, LogGopsBackend
from .model import GoalSchedule, validate
from .ncclgen import GpuNodeMap, GpuTraceError, NcclConfig, gpu_trace_to_goal
from .packet import FatTreeSpec, PacketBackend, PacketNetConfig
from .schedgen import TraceFormatError, gen_microbenchmark, parse_mpi_trace, trace_to_goal
from .storagegen import SpcFormatError, StorageCluster, gen_direct_drive, parse_spc_trace

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_VALIDATION = 4

BIN_MAGIC = b"GOAL"


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".goalnet-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(cfg: ExperimentConfig) -> str:
    return f"# goalnet {__version__} config {cfg.hash()}\n"


def write_schedule(s: GoalSchedule, path: str, cfg: ExperimentConfig) -> None:
    if path.endswith(".bin"):
        _atomic_write(path, encode_binary(s))
    else:
        _atomic_write(path, (_header(cfg) + emit_text(s)).encode())


def read_schedule(path: str) -> GoalSchedule:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == BIN_MAGIC:
        return decode_binary(data)
    return parse_text(data.decode("utf-8"))


def _build_backend(name: str, cfg: ExperimentConfig):
    if name == "loggops":
        return LogGopsBackend(LogGOPSParams(
            L=cfg.get_float("loggops.L"), o=cfg.get_float("loggops.o"),
            g=cfg.get_float("loggops.g"), G=cfg.get_float("loggops.G"),
            O=cfg.get_float("loggops.O"),
            S=float("inf") if cfg["loggops.S"] == "inf" else cfg.get_float("loggops.S")))
    if name == "packet":
        spec = FatTreeSpec(
            hosts_per_tor=cfg.get_int("fattree.hosts_per_tor"),
            num_tors=cfg.get_int("fattree.num_tors"),
            uplinks_per_tor=cfg.get_int("fattree.uplinks_per_tor"),
            num_cores=cfg.get_int("fattree.num_cores"),
            link_rate_gbps=cfg.get_float("fattree.link_rate_gbps"),
            link_latency_ns=cfg.get_float("fattree.link_latency_ns"))
        net = PacketNetConfig(
            mtu_bytes=cfg.get_int("net.mtu"),
            queue_capacity_bytes=cfg.get_int("net.queue_bytes"),
            ecn_kmin_frac=cfg.get_float("net.ecn_kmin"),
            ecn_kmax_frac=cfg.get_float("net.ecn_kmax"),
            cc=cfg["net.cc"], routing=cfg["net.routing"],
            rto_ns=cfg.get_float("net.rto_ns"), seed=cfg.get_int("net.seed"),
            init_cwnd=cfg.get_float("net.init_cwnd"),
            ack_bytes=cfg.get_int("net.ack_bytes"),
            swift_hop_ns=cfg.get_float("net.swift_hop_ns"),
            sample_interval_ns=cfg.get_float("net.sample_interval_ns"))
        return PacketBackend(spec, net)
    raise ConfigError(f"unknown backend {name!r}")


def _storage_cluster(cfg: ExperimentConfig) -> StorageCluster:
    return StorageCluster(
        num_hosts=cfg.get_int("storage.hosts"), num_ccs=cfg.get_int("storage.ccs"),
        num_bss=cfg.get_int("storage.bss"), num_mds=cfg.get_int("storage.mds"),
        num_gs=cfg.get_int("storage.gs"), num_slb=cfg.get_int("storage.slb"),
        replication=cfg.get_int("storage.replication"),
        control_bytes=cfg.get_int("storage.control_bytes"),
        service_calc_ns=cfg.get_int("storage.service_calc_ns"),
        route_via_gateway=cfg.get_bool("storage.route_via_gateway"),
        closed_loop=cfg.get_bool("storage.closed_loop"))


def _nccl_config(cfg: ExperimentConfig) -> NcclConfig:
    return NcclConfig(
        nchannels=cfg.get_int("nccl.nchannels"), algo=cfg["nccl.algo"],
        proto=cfg["nccl.proto"],
        slot_bytes_simple=cfg.get_int("nccl.slot_bytes_simple"),
        slot_bytes_ll=cfg.get_int("nccl.slot_bytes_ll"),
        ll_wire_factor=cfg.get_float("nccl.ll_wire_factor"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args, cfg: ExperimentConfig) -> int:
    if args.source == "microbenchmark":
        s = gen_microbenchmark(args.pattern, args.n, args.bytes,
                               seed=args.seed if args.seed is not None else cfg.get_int("seed"),
                               rounds=args.rounds)
    elif args.source == "mpi-trace":
        sources = []
        for path in args.traces:
            with open(path, "r", encoding="utf-8") as fh:
                sources.append(fh.read())
        algos = {}
        for spec in args.algo or []:
            op, _, algo = spec.partition("=")
            if not algo:
                raise ConfigError(f"--algo expects OP=ALGO, got {spec!r}")
            algos[op] = algo
        s = trace_to_goal(parse_mpi_trace(sources), algos=algos)
    elif args.source == "gpu-trace":
        with open(args.communicators, "r", encoding="utf-8") as fh:
            comms = json.load(fh)
        docs = []
        for path in args.traces:
            with open(path, "r", encoding="utf-8") as fh:
                docs.append(json.load(fh))
        gpus = sorted(int(d["gpu"]) for d in docs)
        node_map = GpuNodeMap.all_on_nodes(
            gpus, cfg.get_int("nccl.gpus_per_node"),
            intra_bw_gbps=cfg.get_float("nccl.intra_bw_gbps"),
            intra_latency_ns=cfg.get_float("nccl.intra_latency_ns"))
        s = gpu_trace_to_goal(docs, comms, _nccl_config(cfg), node_map)
    elif args.source == "storage":
        cluster = _storage_cluster(cfg)
        with open(args.trace, "r", encoding="utf-8") as fh:
            requests = parse_spc_trace(fh.read(), cluster)
        s = gen_direct_drive(requests, cluster)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown source {args.source!r}")
    write_schedule(s, args.output, cfg)
    return EXIT_OK


def cmd_convert(args, cfg: ExperimentConfig) -> int:
    write_schedule(read_schedule(args.input), args.output, cfg)
    return EXIT_OK


def cmd_validate(args, cfg: ExperimentConfig) -> int:
    report = validate(read_schedule(args.input))
    if report.ok:
        print("ok")
        return EXIT_OK
    return _fail("validation", report.summary(), EXIT_VALIDATION)


def cmd_place(args, cfg: ExperimentConfig) -> int:
    jobs = [read_schedule(p) for p in args.jobs]
    strategy = args.strategy or cfg["placement.strategy"]
    seed = args.seed if args.seed is not None else cfg.get_int("seed")
    merged = place_jobs(jobs, strategy, args.system_size, seed=seed)
    write_schedule(merged, args.output, cfg)
    return EXIT_OK


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    s = read_schedule(args.input)
    report = validate(s)
    if not report.ok:
        return _fail("validation", report.summary(), EXIT_VALIDATION)
    backend = _build_backend(args.backend, cfg)
    stats = run_simulation(s, backend)
    out = stats.to_json(tool={"name": "goalnet", "version": __version__,
                              "config_hash": cfg.hash()},
                        config=cfg.as_dict())
    sys.stdout.write(out)
    if args.messages_csv:
        _atomic_write(args.messages_csv,
                      (_header(cfg) + stats.messages_csv()).encode())
    return EXIT_OK


def cmd_stats(args, cfg: ExperimentConfig) -> int:
    mcts = []
    with open(args.input, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("src,"):
                continue
            fields = line.split(",")
            if len(fields) != 7:
                return _fail("format", f"bad per-message CSV row: {line!r}",
                             EXIT_VALIDATION)
            mcts.append(float(fields[6]))
    out = {"mct": mct_summary(mcts), "messages": len(mcts),
           "tool": {"name": "goalnet", "version": __version__,
                    "config_hash": cfg.hash()}}
    sys.stdout.write(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="goalnet",
                                description="workload-to-GOAL network simulation toolchain")
    p.add_argument("--version", action="version", version=f"goalnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="produce a GOAL schedule")
    gen.add_argument("--config", help="experiment config file")
    gen.add_argument("-o", "--output", required=True)
    gsub = gen.add_subparsers(dest="source", required=True)

    micro = gsub.add_parser("microbenchmark")
    micro.add_argument("--pattern", required=True,
                       choices=["incast", "permutation", "ring_exchange"])
    micro.add_argument("--n", type=int, required=True)
    micro.add_argument("--bytes", type=int, required=True)
    micro.add_argument("--rounds", type=int, default=1)
    micro.add_argument("--seed", type=int)

    mpi = gsub.add_parser("mpi-trace")
    mpi.add_argument("traces", nargs="+", help="one CSV per rank, in rank order")
    mpi.add_argument("--algo", action="append", metavar="OP=ALGO")

    gpu = gsub.add_parser("gpu-trace")
    gpu.add_argument("traces", nargs="+", help="one JSON per GPU")
    gpu.add_argument("--communicators", required=True)

    st = gsub.add_parser("storage")
    st.add_argument("--trace", required=True, help="SPC-format CSV")

    conv = sub.add_parser("convert", help="convert between text and binary GOAL")
    conv.add_argument("input")
    conv.add_argument("-o", "--output", required=True)
    conv.add_argument("--config", help="experiment config file")

    val = sub.add_parser("validate", help="check a schedule for problems")
    val.add_argument("input")
    val.add_argument("--config", help="experiment config file")

    plc = sub.add_parser("place", help="merge jobs onto one system")
    plc.add_argument("jobs", nargs="+")
    plc.add_argument("--strategy", choices=["packed", "random"])
    plc.add_argument("--system-size", type=int, required=True)
    plc.add_argument("--seed", type=int)
    plc.add_argument("--config", help="experiment config file")
    plc.add_argument("-o", "--output", required=True)

    sim = sub.add_parser("simulate", help="run a schedule on a backend")
    sim.add_argument("input")
    sim.add_argument("--backend", required=True, choices=["loggops", "packet"])
    sim.add_argument("--config", help="experiment config file")
    sim.add_argument("--messages-csv", help="write the per-message dump here")

    stc = sub.add_parser("stats", help="recompute percentiles from a message CSV")
    stc.add_argument("input")
    stc.add_argument("--config", help="experiment config file")
    return p


COMMANDS = {
    "generate": cmd_generate,
    "convert": cmd_convert,
    "validate": cmd_validate,
    "place": cmd_place,
    "simulate": cmd_simulate,
    "stats": cmd_stats,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        return _fail("config", str(e), EXIT_CONFIG)
    except (GoalSyntaxError, GoalDecodeError, TraceFormatError, SpcFormatError,
            GpuTraceError) as e:
        return _fail("format", str(e), EXIT_VALIDATION)
    except DeadlockError as e:
        return _fail("deadlock", str(e), EXIT_RUNTIME)
    except FileNotFoundError as e:
        return _fail("io", str(e), EXIT_RUNTIME)
    except ValueError as e:
        return _fail("invalid", str(e), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
