"""Two-level memory model: byte-accurate traffic and L1 occupancy accounting.

The model is about transfer volume, not cycles: every byte moved between L2
and L1, plus every byte rewritten by an in-L1 layout pass, is counted. A
TrafficLedger belongs to a single executor run (single writer).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, PlanInfeasible

L1_BYTES_DEFAULT = 64 * 1024
L2_BYTES_DEFAULT = 512 * 1024

DIRECTIONS = ("load", "store", "reorder")


@dataclass(frozen=True)
class MemoryConfig:
    l1_bytes: int = L1_BYTES_DEFAULT
    l2_bytes: int = L2_BYTES_DEFAULT
    double_buffer: bool = False

    def __post_init__(self):
        if self.l1_bytes <= 0 or self.l2_bytes <= 0:
            raise ConfigError("memory sizes must be positive")
        if self.l1_bytes >= self.l2_bytes:
            raise ConfigError(
                f"l1_bytes ({self.l1_bytes}) must be smaller than l2_bytes ({self.l2_bytes})"
            )


@dataclass
class TrafficLedger:
    load_bytes: int = 0      # L2 -> L1
    store_bytes: int = 0     # L1 -> L2
    reorder_bytes: int = 0   # in-L1 layout passes
    peak_l1_bytes: int = 0

    @property
    def total_bytes(self) -> int:
        return self.load_bytes + self.store_bytes + self.reorder_bytes

    def merge(self, other: "TrafficLedger") -> "TrafficLedger":
        self.load_bytes += other.load_bytes
        self.store_bytes += other.store_bytes
        self.reorder_bytes += other.reorder_bytes
        self.peak_l1_bytes = max(self.peak_l1_bytes, other.peak_l1_bytes)
        return self

    def to_dict(self) -> dict:
        return {
            "load_bytes": self.load_bytes,
            "store_bytes": self.store_bytes,
            "reorder_bytes": self.reorder_bytes,
            "peak_l1_bytes": self.peak_l1_bytes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrafficLedger":
        return cls(
            load_bytes=doc["load_bytes"],
            store_bytes=doc["store_bytes"],
            reorder_bytes=doc["reorder_bytes"],
            peak_l1_bytes=doc["peak_l1_bytes"],
        )


def record_transfer(ledger: TrafficLedger, direction: str, n: int) -> TrafficLedger:
    """Add n bytes to the counter for `direction` ("load", "store", "reorder")."""
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown transfer direction {direction!r}")
    if n < 0:
        raise ConfigError(f"cannot transfer {n} bytes")
    if direction == "load":
        ledger.load_bytes += n
    elif direction == "store":
        ledger.store_bytes += n
    else:
        ledger.reorder_bytes += n
    return ledger


def check_fit(footprint: int, cfg: MemoryConfig, streamed_bytes: int = 0) -> bool:
    """True iff the effective footprint fits L1.

    `footprint` includes one copy of every buffer; with double buffering the
    streamed portions (input and output tiles, `streamed_bytes`) need a second
    copy, so they are added once more. Weights and the fused intermediate
    buffer stay resident per phase and never double.
    """
    if footprint < 0 or streamed_bytes < 0:
        raise ConfigError("footprint must be non-negative")
    effective = footprint + (streamed_bytes if cfg.double_buffer else 0)
    return effective <= cfg.l1_bytes


class L1Arena:
    """Simulated L1 allocator: rejects any allocation that would overflow.

    Tracks the running sum of live buffers and the peak across phases; the
    executor aborts with PlanInfeasible instead of silently overflowing.
    """

    def __init__(self, cfg: MemoryConfig):
        self.cfg = cfg
        self._live: dict[str, int] = {}
        self.current = 0
        self.peak = 0

    def alloc(self, name: str, nbytes: int) -> None:
        if nbytes < 0:
            raise ConfigError(f"cannot allocate {nbytes} bytes")
        if name in self._live:
            raise ConfigError(f"buffer {name!r} already allocated")
        if self.current + nbytes > self.cfg.l1_bytes:
            raise PlanInfeasible(
                f"allocating {nbytes} bytes for {name!r} would push L1 to "
                f"{self.current + nbytes} > {self.cfg.l1_bytes}",
                target=name,
            )
        self._live[name] = nbytes
        self.current += nbytes
        self.peak = max(self.peak, self.current)

    def free(self, name: str) -> None:
        self.current -= self._live.pop(name)

    def free_all(self) -> None:
        self._live.clear()
        self.current = 0
