"""Ground-truth oracle: loop-nest interpreter and idealized cache simulator.

The interpreter executes a nest over concrete seeded arrays, producing the
outputs plus an ordered access trace (parallel loops are serialized in
index order, so the trace is the canonical sequential interleaving).  The
simulator replays a trace through a multi-level fully-associative
exclusive LRU hierarchy at element granularity and prices it with the
latency-sum formula: misses at each level cost the latency of the level
that services them.

Everything the analytical side computes symbolically can be checked here
by brute force, which is the whole point of this module.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cachemap import MachineModel
from .loopdsl import (Access, BinOp, Call, KernelRegion, LoopNest, LoopNode,
                      Neg, Num, StmtNode, substitute_microkernel)
from .polyset import UnboundParameterError


class InterpreterError(Exception):
    pass


@dataclass(frozen=True)
class TraceRecord:
    sched: tuple[int, ...]   # interleaved schedule point (positions + counters)
    stmt: str
    point: tuple[int, ...]   # loop counter values, outermost first
    array: str
    index: int               # flattened element index
    kind: str                # "read" | "write"


@dataclass
class Trace:
    records: list[TraceRecord]

    def __len__(self) -> int:
        return len(self.records)

    def footprint(self) -> int:
        return len({(r.array, r.index) for r in self.records})

    def dump(self) -> str:
        lines = ["# trace v1: sched | stmt | point | array | index | kind"]
        for r in self.records:
            lines.append(f"{','.join(map(str, r.sched))} | {r.stmt} | "
                         f"{','.join(map(str, r.point))} | {r.array} | "
                         f"{r.index} | {r.kind}")
        return "\n".join(lines) + "\n"


def _sched_cmp_key(sched: tuple[int, ...], width: int) -> tuple[int, ...]:
    return sched + (0,) * (width - len(sched))


def sched_le(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    width = max(len(a), len(b))
    return _sched_cmp_key(a, width) <= _sched_cmp_key(b, width)


def array_shapes(nest: LoopNest, binding: Mapping[str, int]) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, dims in nest.arrays:
        shape = tuple(max(0, d.evaluate(binding)) for d in dims)
        shapes[name] = shape
    return shapes


def make_inputs(nest: LoopNest, binding: Mapping[str, int], seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded random float64 contents for every array, output included."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in sorted(array_shapes(nest, binding).items()):
        n = int(np.prod(shape)) if shape else 1
        out[name] = rng.standard_normal(n)
    return out


def interpret(nest: LoopNest, binding: Mapping[str, int], seed: int = 0,
              inputs: Mapping[str, np.ndarray] | None = None,
              collect_trace: bool = True) -> tuple[dict[str, np.ndarray], Trace]:
    """Execute the nest; returns final array contents and the access trace."""
    if nest.has_kernel_call() and nest.microkernel is not None:
        nest = substitute_microkernel(nest)
    missing = [p for p in nest.params if p not in binding]
    if missing:
        raise UnboundParameterError(f"unbound parameters: {missing}")
    shapes = array_shapes(nest, binding)
    strides = {}
    for name, shape in shapes.items():
        st = []
        acc = 1
        for extent in reversed(shape):
            st.append(acc)
            acc *= extent
        strides[name] = tuple(reversed(st))
    if inputs is None:
        arrays = make_inputs(nest, binding, seed)
    else:
        arrays = {k: np.array(v, dtype=np.float64).ravel() for k, v in inputs.items()}
        for name, shape in shapes.items():
            need = int(np.prod(shape)) if shape else 1
            if name not in arrays or arrays[name].size < need:
                raise InterpreterError(f"input array {name!r} too small")
    records: list[TraceRecord] = []
    # static auto-labels matching extract_polyhedral's preorder numbering
    labels: dict[int, str] = {}

    def prelabel(nodes, counter):
        for n in nodes:
            if isinstance(n, (LoopNode, KernelRegion)):
                prelabel(n.body, counter)
            elif isinstance(n, StmtNode):
                labels[id(n)] = n.stmt.label or f"S{counter[0]}"
                counter[0] += 1

    prelabel(nest.body, [0])

    def flat(acc: Access, env) -> int:
        shape = shapes[acc.array]
        if len(acc.indices) != len(shape):
            raise InterpreterError(f"rank mismatch on {acc.array!r}")
        idx = 0
        for d, (e, extent) in enumerate(zip(acc.indices, shape)):
            v = e.evaluate(env)
            if not 0 <= v < extent:
                raise InterpreterError(
                    f"{acc.array}[dim {d}] = {v} out of bounds [0, {extent})")
            idx += v * strides[acc.array][d]
        return idx

    def record(sched, stmt, point, acc, index, kind):
        if collect_trace:
            records.append(TraceRecord(sched, stmt, point, acc.array, index, kind))

    def eval_expr(expr, env, sched, stmt, point) -> float:
        if isinstance(expr, Num):
            return expr.value
        if isinstance(expr, Neg):
            return -eval_expr(expr.operand, env, sched, stmt, point)
        if isinstance(expr, Access):
            i = flat(expr, env)
            record(sched, stmt, point, expr, i, "read")
            return arrays[expr.array][i]
        if isinstance(expr, BinOp):
            a = eval_expr(expr.left, env, sched, stmt, point)
            b = eval_expr(expr.right, env, sched, stmt, point)
            if expr.op == "+":
                return a + b
            if expr.op == "-":
                return a - b
            if expr.op == "*":
                return a * b
            return a / b
        if isinstance(expr, Call):
            vals = [eval_expr(a, env, sched, stmt, point) for a in expr.args]
            return min(vals) if expr.fn == "min" else max(vals)
        raise InterpreterError(f"unknown expression node {expr!r}")

    env0 = {p: int(binding[p]) for p in nest.params}

    def run(nodes, env, sched, point):
        for pos, n in enumerate(nodes):
            if isinstance(n, LoopNode):
                lp = n.loop
                lo = lp.lower.evaluate(env)
                hi = min(u.evaluate(env) for u in lp.upper)
                value = lo
                counter = 0
                while value < hi:
                    run(n.body, {**env, lp.iterator: value},
                        sched + (pos, counter), point + (counter,))
                    value += lp.step
                    counter += 1
            elif isinstance(n, KernelRegion):
                run(n.body, env, sched + (pos,), point)
            elif isinstance(n, StmtNode):
                stmt = n.stmt
                label = labels[id(n)]
                s = sched + (pos,)
                value = eval_expr(stmt.expr, env, s, label, point)
                i = flat(stmt.target, env)
                if stmt.op == "+=":
                    record(s, label, point, stmt.target, i, "read")
                    arrays[stmt.target.array][i] += value
                else:
                    arrays[stmt.target.array][i] = value
                record(s, label, point, stmt.target, i, "write")
            else:
                raise InterpreterError(
                    f"cannot execute opaque kernel call {n!r}; substitute first")

    run(nest.body, env0, (), ())
    return arrays, Trace(records)


@dataclass(frozen=True)
class SimResult:
    levels: tuple[str, ...]
    hits: tuple[int, ...]
    misses: tuple[int, ...]
    mem_accesses: int
    accesses: int
    cost: int

    def to_dict(self) -> dict:
        return {"levels": list(self.levels), "hits": list(self.hits),
                "misses": list(self.misses), "mem_accesses": self.mem_accesses,
                "accesses": self.accesses, "cost": self.cost}


def simulate(trace: Trace, m: MachineModel, line_elements: int = 1) -> SimResult:
    """Replay a trace through exclusive fully-associative LRU levels.

    An element lives in exactly one level.  A hit removes it from its level
    and reinserts it at L1; each overflowing level demotes its LRU victim
    to the next one down, and the last level's victims vanish to memory.
    Cost follows the latency-sum rule: a miss at level i is priced at the
    latency of the level that services the access."""
    if line_elements < 1:
        raise ValueError("line_elements must be >= 1")
    caps = []
    for lv in m.levels:
        cap = lv.size // (m.dtype_size * line_elements)
        if cap < 1:
            raise ValueError(f"cache level {lv.name} holds no elements")
        caps.append(cap)
    n = len(caps)
    levels: list[OrderedDict] = [OrderedDict() for _ in range(n)]
    hits = [0] * n
    misses = [0] * n
    mem = 0
    for rec in trace.records:
        key = (rec.array, rec.index // line_elements)
        found = None
        for li in range(n):
            if key in levels[li]:
                found = li
                break
        if found is None:
            for li in range(n):
                misses[li] += 1
            mem += 1
        else:
            for li in range(found):
                misses[li] += 1
            hits[found] += 1
            del levels[found][key]
        levels[0][key] = True
        levels[0].move_to_end(key)
        for li in range(n):
            if len(levels[li]) <= caps[li]:
                break
            victim, _ = levels[li].popitem(last=False)
            if li + 1 < n:
                levels[li + 1][victim] = True
                levels[li + 1].move_to_end(victim)
    next_lat = [m.levels[i + 1].latency for i in range(n - 1)] + [m.mem_latency]
    cost = sum(misses[i] * next_lat[i] for i in range(n))
    return SimResult(tuple(lv.name for lv in m.levels), tuple(hits),
                     tuple(misses), mem, len(trace.records), cost)


def trace_working_set(trace: Trace, src: Sequence[int], tgt: Sequence[int]) -> int:
    """Distinct elements touched between two schedule points, inclusive."""
    src = tuple(src)
    tgt = tuple(tgt)
    if not sched_le(src, tgt):
        raise ValueError("source schedule point must not follow the target")
    seen = set()
    for r in trace.records:
        if sched_le(src, r.sched) and sched_le(r.sched, tgt):
            seen.add((r.array, r.index))
    return len(seen)
