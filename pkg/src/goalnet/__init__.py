"""goalnet: workload-to-GOAL-schedule toolchain with interchangeable
message-level and packet-level network simulation backends."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    GoalSchedule,
    RankSchedule,
    ScheduleBuilder,
    Task,
    TaskKind,
    ValidationReport,
    merge_tenants,
    remap_ranks,
    validate,
)
from .goal_text import emit_text, parse_text  # noqa: F401
from .goal_binary import decode_binary, encode_binary  # noqa: F401
from .engine import (  # noqa: F401
    DeadlockError,
    SimEventRecord,
    StatsReport,
    compute_stats,
    execute,
    place_jobs,
    run_simulation,
)
from .loggops import LogGOPSParams, LogGopsBackend, message_timing  # noqa: F401
from .packet import (  # noqa: F401
    FatTreeSpec,
    PacketBackend,
    PacketNetConfig,
    build_fattree,
)
from .config import ConfigError, ExperimentConfig  # noqa: F401
