"""Working-set sizes of a loop nest, one entry per data dependence.

Every dependence is a reuse: its source and target iterations touch the
same element, and the reuse is exploitable in a cache that can hold all
data accessed in between.  For a sequential dependence we take the
lexicographically first source iteration, find its first and last targets,
and count the distinct elements referenced over each iteration segment
(WS_min / WS_max).  A dependence spanning a parallel loop instead needs
the collective footprint of all parallel iterations resident at once
(WS_par), since they may execute in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from . import depend as _depend
from .depend import Dependence
from .loopdsl import (LoopNest, PolyInfo, StmtInfo, extract_polyhedral,
                      schedule_vector)
from .polyset import AffineExpr, IntRelation, IntSet, lex_terms_set


class WorkingSetError(Exception):
    pass


@dataclass(frozen=True)
class WorkingSetEntry:
    dep_id: str
    kind: str       # dependence kind (RAR/RAW/WAR/WAW)
    array: str
    variant: str    # "par" | "min" | "max"
    elements: int

    def key(self) -> str:
        return f"{self.dep_id}:{self.variant}"

    def size_bytes(self, dtype_size: int = 4) -> int:
        return self.elements * dtype_size


@dataclass(frozen=True)
class WorkingSetReport:
    nest: str
    binding: tuple[tuple[str, int], ...]
    entries: tuple[WorkingSetEntry, ...]

    def binding_dict(self) -> dict[str, int]:
        return dict(self.binding)

    def summary(self, dtype_size: int = 4) -> dict:
        sizes = [e.elements for e in self.entries]
        return {
            "entries": len(self.entries),
            "total_elements": sum(sizes),
            "total_bytes": sum(sizes) * dtype_size,
            "max_elements": max(sizes, default=0),
            "min_elements": min(sizes, default=0),
        }

    def to_dict(self, dtype_size: int = 4) -> dict:
        return {
            "version": 1,
            "nest": self.nest,
            "binding": dict(self.binding),
            "dtype_size": dtype_size,
            "entries": [
                {"dependence": e.dep_id, "kind": e.kind, "array": e.array,
                 "variant": e.variant, "elements": e.elements,
                 "bytes": e.size_bytes(dtype_size)}
                for e in self.entries],
            "summary": self.summary(dtype_size),
        }


def footprint(relations: Iterable[IntRelation], s: IntSet,
              binding: Mapping[str, int]) -> int:
    """Distinct elements in the union of images, summed per array space."""
    by_array: dict[str, IntSet] = {}
    for rel in relations:
        img = rel.apply(s)
        key = rel.out_name
        if key in by_array:
            by_array[key] = by_array[key].union(img)
        else:
            by_array[key] = img
    return sum(img.prune(binding).cardinality(binding)
               for _, img in sorted(by_array.items()))


def _segments_footprint(info: PolyInfo, v_src: Sequence[int],
                        v_tgt: Sequence[int], binding: Mapping[str, int]) -> int:
    """Footprint of all accesses scheduled between two points, inclusive."""
    by_array: dict[str, IntSet] = {}
    for st in info.statements:
        seg = lex_terms_set(st.space, st.sched_terms, v_tgt, strict=False)
        seg = lex_terms_set(seg, st.sched_terms, v_src, strict=False, greater=True)
        seg = seg.prune(binding)
        if seg.is_structurally_empty():
            continue
        for ref in st.refs():
            img = ref.relation.apply(seg)
            if ref.array in by_array:
                by_array[ref.array] = by_array[ref.array].union(img)
            else:
                by_array[ref.array] = img
    return sum(img.prune(binding).cardinality(binding)
               for _, img in sorted(by_array.items()))


def _parallel_footprint(info: PolyInfo, dep: Dependence,
                        binding: Mapping[str, int], sample_outer: bool) -> int:
    """Collective footprint across all values of the parallel iterator.

    Iterators outer to the parallel loop are fixed to representative
    values (the lexicographic minimum; optionally also the maximum and
    midpoint, keeping the largest footprint)."""
    ip = dep.parallel_iterator
    stmts = [st for st in info.statements if ip in st.loop_iters]
    outer_of = {st.label: st.loop_iters[:st.loop_iters.index(ip)] for st in stmts}

    def fixed_footprint(which: str) -> int | None:
        by_array: dict[str, IntSet] = {}
        for st in stmts:
            outer = outer_of[st.label]
            if outer:
                lo = st.space.lexmin(binding)
                hi = st.space.lexmax(binding)
                if lo is None:
                    return None
                if which == "min":
                    vals = lo
                elif which == "max":
                    vals = hi
                else:
                    vals = tuple((a + b) // 2 for a, b in zip(lo, hi))
                eqs = [AffineExpr.var(v) - int(vals[i])
                       for i, v in enumerate(st.loop_iters) if v in outer]
                dom = st.space.intersect(IntSet.from_constraints(
                    st.label, st.space.vars, eqs=eqs, params=st.space.params))
            else:
                dom = st.space
            dom = dom.prune(binding)
            for ref in st.refs():
                img = ref.relation.apply(dom)
                if ref.array in by_array:
                    by_array[ref.array] = by_array[ref.array].union(img)
                else:
                    by_array[ref.array] = img
        return sum(img.prune(binding).cardinality(binding)
                   for _, img in sorted(by_array.items()))

    best = fixed_footprint("min")
    if best is None:
        return 0
    if sample_outer:
        for which in ("max", "mid"):
            alt = fixed_footprint(which)
            if alt is not None:
                best = max(best, alt)
    return best


def working_sets(nest: LoopNest, binding: Mapping[str, int],
                 sample_outer: bool = False,
                 info: PolyInfo | None = None,
                 deps: list[Dependence] | None = None) -> WorkingSetReport:
    """One WS_par entry or a (WS_min, WS_max) pair per dependence."""
    if info is None:
        info = extract_polyhedral(nest)
    if deps is None:
        deps = _depend.compute_dependences(info)
    entries: list[WorkingSetEntry] = []
    for dep in deps:
        dep = _depend.classify_parallel_span(dep, info, binding)
        dom = dep.relation.domain()
        src_pt = dom.lexmin(binding)
        if src_pt is None:
            continue  # empty under this binding
        if dep.spans_parallel:
            ws = _parallel_footprint(info, dep, binding, sample_outer)
            entries.append(WorkingSetEntry(dep.dep_id, dep.kind, dep.array,
                                           "par", ws))
            continue
        targets = dep.relation.apply_point(src_pt)
        tmin = targets.lexmin(binding)
        tmax = targets.lexmax(binding)
        if tmin is None:
            continue
        src_stmt = info.statement(dep.source_stmt)
        tgt_stmt = info.statement(dep.target_stmt)
        v_src = schedule_vector(src_stmt, src_pt)
        ws_min = _segments_footprint(info, v_src,
                                     schedule_vector(tgt_stmt, tmin), binding)
        ws_max = _segments_footprint(info, v_src,
                                     schedule_vector(tgt_stmt, tmax), binding)
        if ws_min > ws_max:
            raise WorkingSetError(
                f"WS_min {ws_min} > WS_max {ws_max} for {dep.dep_id}")
        entries.append(WorkingSetEntry(dep.dep_id, dep.kind, dep.array,
                                       "min", ws_min))
        entries.append(WorkingSetEntry(dep.dep_id, dep.kind, dep.array,
                                       "max", ws_max))
    return WorkingSetReport(nest.name, tuple(sorted(binding.items())),
                            tuple(entries))
