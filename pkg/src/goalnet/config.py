"""Flat key=value experiment configuration.

Unknown keys are hard errors (no silent typos); every run embeds the
resolved configuration and its hash in its output for reproducibility.
``GOALNET_SEED`` in the environment overrides the ``seed`` key.
"""

from __future__ import annotations

import hashlib
import os
from typing import Mapping, Optional

KNOWN_KEYS: dict[str, str] = {
    "seed": "1",
    "placement.strategy": "packed",
    "output.dir": ".",
    # message-level backend
    "loggops.L": "3700",
    "loggops.o": "200",
    "loggops.g": "5",
    "loggops.G": "0.04",
    "loggops.O": "0",
    "loggops.S": "0",
    # fat-tree topology
    "fattree.hosts_per_tor": "8",
    "fattree.num_tors": "2",
    "fattree.uplinks_per_tor": "8",
    "fattree.num_cores": "8",
    "fattree.link_rate_gbps": "100",
    "fattree.link_latency_ns": "500",
    # packet backend
    "net.mtu": "4096",
    "net.queue_bytes": str(1 << 20),
    "net.ecn_kmin": "0.20",
    "net.ecn_kmax": "0.80",
    "net.cc": "mprdma",
    "net.routing": "ecmp_per_flow",
    "net.rto_ns": "1000000",
    "net.seed": "1",
    "net.init_cwnd": "16",
    "net.ack_bytes": "64",
    "net.swift_hop_ns": "1000",
    "net.sample_interval_ns": "0",
    # storage cluster
    "storage.hosts": "4",
    "storage.ccs": "1",
    "storage.bss": "4",
    "storage.mds": "1",
    "storage.gs": "1",
    "storage.slb": "1",
    "storage.replication": "3",
    "storage.control_bytes": "256",
    "storage.service_calc_ns": "2000",
    "storage.route_via_gateway": "false",
    "storage.closed_loop": "false",
    # nccl decomposition
    "nccl.nchannels": "1",
    "nccl.algo": "ring",
    "nccl.proto": "Simple",
    "nccl.slot_bytes_simple": "524288",
    "nccl.slot_bytes_ll": "32768",
    "nccl.ll_wire_factor": "2.0",
    "nccl.intra_bw_gbps": "150",
    "nccl.intra_latency_ns": "0",
    "nccl.gpus_per_node": "1",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


class ExperimentConfig(Mapping):
    """Resolved configuration: defaults overlaid with a config file and the
    GOALNET_SEED environment override."""

    def __init__(self, overrides: Optional[Mapping[str, str]] = None):
        self._values = dict(KNOWN_KEYS)
        for key, value in (overrides or {}).items():
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            self._values[key] = str(value)
        env_seed = os.environ.get("GOALNET_SEED")
        if env_seed is not None:
            try:
                int(env_seed)
            except ValueError:
                raise ConfigError("GOALNET_SEED must be an integer") from None
            self._values["seed"] = env_seed

    @classmethod
    def load(cls, path: Optional[str]) -> "ExperimentConfig":
        if path is None:
            return cls()
        with open(path, "r", encoding="utf-8") as fh:
            return cls(parse_config_text(fh.read(), source=path))

    def __getitem__(self, key: str) -> str:
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def get_int(self, key: str) -> int:
        try:
            return int(self._values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self._values[key]!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self._values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self._values[key]!r}") from None

    def get_bool(self, key: str) -> bool:
        v = self._values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {self._values[key]!r}")

    def canonical(self) -> str:
        return "\n".join(f"{k}={self._values[k]}" for k in sorted(self._values)) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def as_dict(self) -> dict[str, str]:
        return dict(sorted(self._values.items()))
