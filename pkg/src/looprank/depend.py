"""Exact data-dependence computation between array references.

For every ordered pair of references touching the same array (all four of
RAR, RAW, WAR, WAW), the dependence relation maps source iterations to the
strictly later iterations that access the same element:

    { s -> t : index_src(s) = index_tgt(t)  and  s precedes t in schedule }

restricted to both statements' iteration spaces.  Relations are kept per
reference pair rather than merged per array, since downstream working-set
analysis walks dependences one at a time.  Pairs are exact, not transitive:
a source relates to every later matching target, not just the next one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .loopdsl import PolyInfo, RefInfo, StmtInfo
from .polyset import AffineExpr, Conj, IntRelation, IntSet

_KIND = {("read", "read"): "RAR", ("write", "read"): "RAW",
         ("read", "write"): "WAR", ("write", "write"): "WAW"}

_PRIME = "'"


@dataclass(frozen=True)
class Dependence:
    kind: str
    array: str
    source_ref: str
    target_ref: str
    source_stmt: str
    target_stmt: str
    relation: IntRelation  # source iteration vars -> primed target vars
    spans_parallel: bool = False
    parallel_iterator: str | None = None

    @property
    def dep_id(self) -> str:
        return f"{self.source_ref}->{self.target_ref}"


def _lex_order_pieces(src_terms: Sequence[AffineExpr],
                      tgt_terms: Sequence[AffineExpr]) -> list[Conj]:
    """Disjuncts of ``sched(src) < sched(tgt)`` over interleaved terms.

    Constant position columns decide statically; shorter vectors are padded
    with zero columns (positions are unique per level, so ties never reach
    the padding)."""
    n = max(len(src_terms), len(tgt_terms))
    a = list(src_terms) + [AffineExpr(const=0)] * (n - len(src_terms))
    b = list(tgt_terms) + [AffineExpr(const=0)] * (n - len(tgt_terms))
    pieces: list[Conj] = []
    prefix: list[AffineExpr] = []
    for p in range(n):
        diff = b[p] - a[p]
        if diff.is_constant():
            if diff.const > 0:
                piece = Conj.make(list(prefix), [])
                if piece is not None:
                    pieces.append(piece)
                break
            if diff.const < 0:
                break
            continue
        piece = Conj.make(list(prefix), [diff - 1])
        if piece is not None:
            pieces.append(piece)
        prefix.append(diff)
    return pieces


def _dependence_relation(src: RefInfo, src_stmt: StmtInfo,
                         tgt: RefInfo, tgt_stmt: StmtInfo,
                         params: Sequence[str]) -> IntRelation | None:
    rename = {v: v + _PRIME for v in tgt_stmt.loop_iters}
    in_vars = src_stmt.loop_iters
    out_vars = tuple(rename[v] for v in tgt_stmt.loop_iters)

    src_space = src_stmt.space.disjuncts[0]
    tgt_space = tgt_stmt.space.disjuncts[0].rename(rename)
    eqs = [se - te.substitute({v: AffineExpr.var(nv) for v, nv in rename.items()})
           for se, te in zip(src.index_exprs, tgt.index_exprs)]
    tgt_terms = [t.substitute({v: AffineExpr.var(nv) for v, nv in rename.items()})
                 for t in tgt_stmt.sched_terms]
    disjuncts = []
    base = src_space.conjoin(tgt_space)
    if base is None:
        return None
    base = Conj.make(base.eqs + tuple(eqs), base.ineqs, base.exists)
    if base is None:
        return None
    for piece in _lex_order_pieces(src_stmt.sched_terms, tgt_terms):
        d = base.conjoin(piece)
        if d is not None:
            disjuncts.append(d)
    rel = IntRelation(src_stmt.label, in_vars, tgt_stmt.label, out_vars,
                      params, disjuncts)
    probe = IntSet(rel.in_name, rel.in_vars + rel.out_vars, rel.params,
                   rel.disjuncts).prune({})
    if probe.is_structurally_empty():
        return None
    return rel


def compute_dependences(info: PolyInfo) -> list[Dependence]:
    """All nonempty same-element ordered-pair relations, per reference pair."""
    params = info.nest.params
    arrays = sorted({r.array for s in info.statements for r in s.refs()})
    out: list[Dependence] = []
    for array in arrays:
        refs = [(s, r) for s in info.statements for r in s.refs()
                if r.array == array]
        for src_stmt, src in refs:
            for tgt_stmt, tgt in refs:
                rel = _dependence_relation(src, src_stmt, tgt, tgt_stmt, params)
                if rel is None:
                    continue
                out.append(Dependence(
                    _KIND[(src.kind, tgt.kind)], array, src.ref_id, tgt.ref_id,
                    src_stmt.label, tgt_stmt.label, rel))
    return out


def classify_parallel_span(dep: Dependence, info: PolyInfo,
                           binding: Mapping[str, int] | None = None) -> Dependence:
    """Mark whether source and target can differ in a parallel iterator.

    With a binding the emptiness test is exact; without one it falls back
    to a structural check on literal bounds."""
    src_stmt = info.statement(dep.source_stmt)
    tgt_stmt = info.statement(dep.target_stmt)
    common = [p for p in src_stmt.parallel_iters if p in tgt_stmt.parallel_iters]
    if not common:
        return replace(dep, spans_parallel=False, parallel_iterator=None)
    spans = False
    for p in common:
        diff = AffineExpr.var(p + _PRIME) - AffineExpr.var(p)
        probe = IntSet(
            dep.relation.in_name,
            dep.relation.in_vars + dep.relation.out_vars,
            dep.relation.params,
            [d.conjoin(Conj.make([], [sign * diff - 1]))
             for d in dep.relation.disjuncts for sign in (1, -1)])
        if binding is not None:
            if not probe.is_empty(binding):
                spans = True
                break
        else:
            if not probe.prune({}).is_structurally_empty():
                spans = True
                break
    if not spans:
        return replace(dep, spans_parallel=False, parallel_iterator=None)
    return replace(dep, spans_parallel=True,
                   parallel_iterator=src_stmt.parallel_iters[0])


def dependence_report(deps: list[Dependence]) -> list[dict]:
    return [{
        "id": d.dep_id, "kind": d.kind, "array": d.array,
        "source": d.source_stmt, "target": d.target_stmt,
        "relation": str(d.relation),
        "spans_parallel": d.spans_parallel,
        "parallel_iterator": d.parallel_iterator,
    } for d in deps]
