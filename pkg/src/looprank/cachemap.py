"""Cache-hierarchy description and greedy working-set placement.

Each working set competes for capacity starting at the fastest level:
sorted from smallest to largest, a set is placed in the first cache whose
accumulated total still fits, and everything left over lands in memory.
The hierarchy is modeled as fully associative and exclusive, capacity only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import TYPE_CHECKING, Mapping

if TYPE_CHECKING:
    from .wset import WorkingSetReport


class MachineError(Exception):
    pass


@dataclass(frozen=True)
class CacheLevel:
    name: str
    size: int           # bytes
    latency: int        # cycles
    bandwidth: float    # bytes per cycle
    shared: bool = False


@dataclass(frozen=True)
class MachineModel:
    name: str
    levels: tuple[CacheLevel, ...]
    mem_latency: int
    mem_bandwidth: float
    dtype_size: int = 4
    cores: int = 1

    def __post_init__(self):
        if not self.levels:
            raise MachineError("machine needs at least one cache level")
        for lv in self.levels:
            if lv.size <= 0 or lv.bandwidth <= 0 or lv.latency < 0:
                raise MachineError(f"invalid cache level {lv}")
        sizes = [lv.size for lv in self.levels]
        if any(a >= b for a, b in zip(sizes, sizes[1:])):
            raise MachineError("cache sizes must strictly increase with level")
        lats = [lv.latency for lv in self.levels] + [self.mem_latency]
        if any(a > b for a, b in zip(lats, lats[1:])):
            raise MachineError("latencies must be nondecreasing towards memory")
        if self.mem_bandwidth <= 0 or self.dtype_size <= 0 or self.cores < 1:
            raise MachineError("memory bandwidth, datatype size and cores must be positive")

    def level_names(self) -> list[str]:
        return [lv.name for lv in self.levels]


def effective_sizes(m: MachineModel, cores_used: int) -> MachineModel:
    """Per-core view: shared levels hand each core an equal share."""
    if cores_used < 1:
        raise MachineError("cores_used must be >= 1")
    levels = tuple(
        replace(lv, size=lv.size // cores_used) if lv.shared else lv
        for lv in m.levels)
    return replace(m, levels=levels)


@dataclass(frozen=True)
class CacheAssignment:
    machine: str
    level_bytes: tuple[tuple[str, int], ...]  # per level accumulated bytes
    mem_bytes: int
    placements: tuple[tuple[str, str], ...]   # entry key -> level name or "mem"

    def level_total(self, name: str) -> int:
        for n, v in self.level_bytes:
            if n == name:
                return v
        return 0

    def totals(self) -> dict[str, int]:
        out = dict(self.level_bytes)
        out["mem"] = self.mem_bytes
        return out


def assign_to_caches(report: "WorkingSetReport", m: MachineModel) -> CacheAssignment:
    """Greedy first-fit of working sets into the hierarchy, smallest first.

    Ties are broken by entry key so permuting the input never changes the
    result."""
    entries = [(e.elements * m.dtype_size, e.key(), e) for e in report.entries]
    entries.sort(key=lambda t: (t[0], t[1]))
    acc = {lv.name: 0 for lv in m.levels}
    mem = 0
    placements = []
    for size, key, _ in entries:
        for lv in m.levels:
            if acc[lv.name] + size <= lv.size:
                acc[lv.name] += size
                placements.append((key, lv.name))
                break
        else:
            mem += size
            placements.append((key, "mem"))
    return CacheAssignment(m.name, tuple(acc.items()), mem, tuple(placements))


# ---------------------------------------------------------------------------
# Machine description files
# ---------------------------------------------------------------------------


def machine_from_dict(data: Mapping) -> MachineModel:
    try:
        levels = tuple(
            CacheLevel(lv["name"], int(lv["size"]), int(lv["latency"]),
                       float(lv["bandwidth"]), bool(lv.get("shared", False)))
            for lv in data["levels"])
        return MachineModel(
            name=data.get("name", "machine"),
            levels=levels,
            mem_latency=int(data["memory"]["latency"]),
            mem_bandwidth=float(data["memory"]["bandwidth"]),
            dtype_size=int(data.get("dtype_size", 4)),
            cores=int(data.get("cores", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MachineError(f"bad machine description: {exc}") from exc


def machine_to_dict(m: MachineModel) -> dict:
    return {
        "version": 1,
        "name": m.name,
        "dtype_size": m.dtype_size,
        "cores": m.cores,
        "levels": [
            {"name": lv.name, "size": lv.size, "latency": lv.latency,
             "bandwidth": lv.bandwidth, "shared": lv.shared}
            for lv in m.levels],
        "memory": {"latency": m.mem_latency, "bandwidth": m.mem_bandwidth},
    }


def load_machine(path: str) -> MachineModel:
    with open(path) as fh:
        return machine_from_dict(json.load(fh))


def default_machine() -> MachineModel:
    """Bundled 28-core server description (32KB L1, 1MB L2, 39MB shared L3)."""
    text = resources.files("looprank").joinpath("machines/cascadelake.json").read_text()
    return machine_from_dict(json.loads(text))
