"""Integer tuple sets and relations defined by affine constraints.

This is the substrate every analysis in the package runs on: iteration
spaces, array access relations, dependence relations and their footprints
are all values of the two container types defined here (`IntSet`,
`IntRelation`).  The representation is deliberately restricted: a set is a
union of conjunctions of affine equalities/inequalities with integer
coefficients over named variables and symbolic size parameters.  That
class is closed under every operation the analyses need for rectangular
tiled/interchanged loop nests, and once the parameters are bound to
concrete integers every query (membership, cardinality, lexmin, ...) is
answerable by finite search, so results are exact rather than
approximated.

A conjunction may internally carry auxiliary existentially quantified
variables.  These appear when relation application or projection meets a
non-unit coefficient, where Fourier-Motzkin elimination is not exact over
the integers.  They never show up in the surface space; enumeration and
counting verify each candidate surface point against the hidden system, so
exactness is preserved without a full Presburger engine.
"""

from __future__ import annotations

import math
import re
from typing import Iterable, Iterator, Mapping, Sequence

Point = tuple[int, ...]
Binding = Mapping[str, int]


class PolysetError(Exception):
    """Base class for set-engine failures."""


class SpaceMismatchError(PolysetError):
    pass


class UnboundedSetError(PolysetError):
    pass


class UnboundParameterError(PolysetError):
    pass


class SetParseError(PolysetError):
    pass


def _ceildiv(a: int, b: int) -> int:
    return -((-a) // b)


def _floordiv(a: int, b: int) -> int:
    return a // b


# ---------------------------------------------------------------------------
# Affine expressions
# ---------------------------------------------------------------------------


class AffineExpr:
    """Affine expression ``sum(coeff_v * v) + const`` with integer coefficients."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Mapping[str, int] | None = None, const: int = 0):
        clean: dict[str, int] = {}
        if coeffs:
            for name, c in coeffs.items():
                if c != int(c):
                    raise TypeError(f"non-integer coefficient {c!r} for {name}")
                c = int(c)
                if c != 0:
                    clean[name] = c
        if const != int(const):
            raise TypeError(f"non-integer constant {const!r}")
        self.coeffs = clean
        self.const = int(const)

    @classmethod
    def var(cls, name: str) -> "AffineExpr":
        return cls({name: 1})

    @classmethod
    def of(cls, value: "AffineExpr | int | str") -> "AffineExpr":
        if isinstance(value, AffineExpr):
            return value
        if isinstance(value, str):
            return cls.var(value)
        return cls(const=value)

    def is_constant(self) -> bool:
        return not self.coeffs

    def free_vars(self) -> frozenset[str]:
        return frozenset(self.coeffs)

    def coeff(self, name: str) -> int:
        return self.coeffs.get(name, 0)

    def __add__(self, other) -> "AffineExpr":
        other = AffineExpr.of(other)
        coeffs = dict(self.coeffs)
        for n, c in other.coeffs.items():
            coeffs[n] = coeffs.get(n, 0) + c
        return AffineExpr(coeffs, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return AffineExpr({n: -c for n, c in self.coeffs.items()}, -self.const)

    def __sub__(self, other) -> "AffineExpr":
        return self + (-AffineExpr.of(other))

    def __rsub__(self, other) -> "AffineExpr":
        return AffineExpr.of(other) + (-self)

    def __mul__(self, k: int) -> "AffineExpr":
        if not isinstance(k, int):
            raise TypeError("affine expressions only scale by integers")
        return AffineExpr({n: c * k for n, c in self.coeffs.items()}, self.const * k)

    __rmul__ = __mul__

    def substitute(self, mapping: Mapping[str, "AffineExpr | int"]) -> "AffineExpr":
        """Simultaneously replace variables; unmapped variables stay."""
        out = AffineExpr(const=self.const)
        for n, c in self.coeffs.items():
            if n in mapping:
                out = out + AffineExpr.of(mapping[n]) * c
            else:
                out = out + AffineExpr({n: c})
        return out

    def evaluate(self, env: Mapping[str, int]) -> int:
        total = self.const
        for n, c in self.coeffs.items():
            try:
                total += c * env[n]
            except KeyError:
                raise UnboundParameterError(f"no value for {n!r}") from None
        return total

    def render(self, order: Sequence[str] | None = None, star: bool = False) -> str:
        names = [n for n in (order or sorted(self.coeffs)) if n in self.coeffs]
        names += sorted(set(self.coeffs) - set(names))
        parts: list[str] = []
        for n in names:
            c = self.coeffs[n]
            if abs(c) == 1:
                term = n
            else:
                term = f"{abs(c)} * {n}" if star else f"{abs(c)}{n}"
            if not parts:
                parts.append(term if c > 0 else f"-{term}")
            else:
                parts.append(f"+ {term}" if c > 0 else f"- {term}")
        if self.const or not parts:
            k = self.const
            if not parts:
                parts.append(str(k))
            else:
                parts.append(f"+ {k}" if k > 0 else f"- {-k}")
        return " ".join(parts)

    def _key(self):
        return (tuple(sorted(self.coeffs.items())), self.const)

    def __eq__(self, other) -> bool:
        return isinstance(other, AffineExpr) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        return f"AffineExpr({self.render()})"


# ---------------------------------------------------------------------------
# Conjunctions
# ---------------------------------------------------------------------------

_INFEASIBLE = object()


def _norm_eq(e: AffineExpr):
    """Canonical form of ``e = 0``; None drops it, _INFEASIBLE kills the conjunct."""
    if not e.coeffs:
        return None if e.const == 0 else _INFEASIBLE
    g = math.gcd(*[abs(c) for c in e.coeffs.values()])
    if e.const % g:
        return _INFEASIBLE
    e = AffineExpr({n: c // g for n, c in e.coeffs.items()}, e.const // g)
    lead = min(e.coeffs)
    if e.coeffs[lead] < 0:
        e = -e
    return e


def _norm_ineq(e: AffineExpr):
    """Canonical form of ``e >= 0`` with integer tightening of the constant."""
    if not e.coeffs:
        return None if e.const >= 0 else _INFEASIBLE
    g = math.gcd(*[abs(c) for c in e.coeffs.values()])
    if g > 1:
        e = AffineExpr({n: c // g for n, c in e.coeffs.items()}, _floordiv(e.const, g))
    return e


class Conj:
    """One conjunction of constraints, optionally with hidden existentials."""

    __slots__ = ("eqs", "ineqs", "exists")

    def __init__(self, eqs, ineqs, exists=()):
        self.eqs: tuple[AffineExpr, ...] = tuple(eqs)
        self.ineqs: tuple[AffineExpr, ...] = tuple(ineqs)
        self.exists: tuple[str, ...] = tuple(exists)

    @staticmethod
    def make(eqs: Iterable[AffineExpr], ineqs: Iterable[AffineExpr],
             exists: Iterable[str] = ()) -> "Conj | None":
        """Normalize; returns None when statically infeasible."""
        neqs: dict = {}
        for e in eqs:
            n = _norm_eq(e)
            if n is _INFEASIBLE:
                return None
            if n is not None:
                neqs[n._key()] = n
        nins: dict = {}
        for e in ineqs:
            n = _norm_ineq(e)
            if n is _INFEASIBLE:
                return None
            if n is not None:
                nins[n._key()] = n
        used = set()
        for e in list(neqs.values()) + list(nins.values()):
            used |= e.free_vars()
        kept = tuple(q for q in dict.fromkeys(exists) if q in used)
        return Conj(tuple(neqs.values()), tuple(nins.values()), kept)

    def constraints(self) -> Iterator[tuple[AffineExpr, bool]]:
        for e in self.eqs:
            yield e, True
        for e in self.ineqs:
            yield e, False

    def free_vars(self) -> set[str]:
        out: set[str] = set()
        for e, _ in self.constraints():
            out |= e.free_vars()
        return out

    def substitute(self, mapping: Mapping[str, AffineExpr | int]) -> "Conj | None":
        return Conj.make(
            (e.substitute(mapping) for e in self.eqs),
            (e.substitute(mapping) for e in self.ineqs),
            self.exists,
        )

    def rename(self, mapping: Mapping[str, str]) -> "Conj":
        sub = {old: AffineExpr.var(new) for old, new in mapping.items()}
        out = self.substitute(sub)
        assert out is not None
        return Conj(out.eqs, out.ineqs,
                    tuple(mapping.get(q, q) for q in self.exists))

    def conjoin(self, other: "Conj") -> "Conj | None":
        me, them = self, other
        taken = me.free_vars() | them.free_vars() | set(me.exists) | set(them.exists)
        clash = set(me.exists) & (set(them.exists) | them.free_vars())
        if clash:
            fresh = {q: _fresh_name(q, taken) for q in clash}
            taken |= set(fresh.values())
            me = me.rename(fresh)
        clash = set(them.exists) & me.free_vars()
        if clash:
            them = them.rename({q: _fresh_name(q, taken) for q in clash})
        return Conj.make(me.eqs + them.eqs, me.ineqs + them.ineqs,
                         me.exists + them.exists)

    def _key(self):
        return (frozenset(e._key() for e in self.eqs),
                frozenset(e._key() for e in self.ineqs),
                frozenset(self.exists))

    def __repr__(self) -> str:
        return f"Conj(eqs={list(self.eqs)}, ineqs={list(self.ineqs)}, exists={self.exists})"


_fresh_counter = [0]


def _fresh_name(base: str, avoid: set[str]) -> str:
    while True:
        _fresh_counter[0] += 1
        cand = f"{base.rstrip('0123456789_')}_q{_fresh_counter[0]}"
        if cand not in avoid:
            return cand


# ---------------------------------------------------------------------------
# Ground solving: enumeration, counting, extrema over one conjunction.
# All functions below assume parameters are already substituted out, so every
# constraint references only the supplied variable order plus existentials.
# ---------------------------------------------------------------------------


def _rows_of(conj: Conj) -> list[tuple[dict[str, int], int]]:
    rows = []
    for e in conj.eqs:
        rows.append((dict(e.coeffs), e.const))
        rows.append(({n: -c for n, c in e.coeffs.items()}, -e.const))
    for e in conj.ineqs:
        rows.append((dict(e.coeffs), e.const))
    return rows


def _fm_eliminate(rows, var):
    """Rational Fourier-Motzkin step; rows mean ``coeffs . x + const >= 0``."""
    lowers, uppers, rest = [], [], []
    for coeffs, const in rows:
        a = coeffs.get(var, 0)
        if a > 0:
            lowers.append((coeffs, const))
        elif a < 0:
            uppers.append((coeffs, const))
        else:
            rest.append((coeffs, const))
    for lc, lk in lowers:
        a = lc[var]
        for uc, uk in uppers:
            b = -uc[var]
            coeffs = {}
            for n in set(lc) | set(uc):
                if n == var:
                    continue
                v = b * lc.get(n, 0) + a * uc.get(n, 0)
                if v:
                    coeffs[n] = v
            const = b * lk + a * uk
            if not coeffs:
                if const < 0:
                    return None
                continue
            g = math.gcd(*[abs(c) for c in coeffs.values()])
            if g > 1:
                coeffs = {n: c // g for n, c in coeffs.items()}
                const = _floordiv(const, g)
            rest.append((coeffs, const))
    seen = set()
    out = []
    for coeffs, const in rest:
        key = (tuple(sorted(coeffs.items())), const)
        if key not in seen:
            seen.add(key)
            out.append((coeffs, const))
    return out


def _shadow_bounds(conj: Conj, var: str):
    """Bounds for ``var`` after rationally eliminating every other variable.

    Returns (lo, hi) with None for an absent bound, or _INFEASIBLE when the
    rational relaxation is already empty.  Sound for candidate ranges: the
    true integer range is contained in [lo, hi].
    """
    rows = _rows_of(conj)
    others = sorted(v for v in conj.free_vars() if v != var)
    for u in others:
        rows = _fm_eliminate(rows, u)
        if rows is None:
            return _INFEASIBLE
    lo = hi = None
    for coeffs, const in rows:
        a = coeffs.get(var, 0)
        extra = [n for n in coeffs if n != var]
        if extra:
            continue
        if a == 0:
            if const < 0:
                return _INFEASIBLE
        elif a > 0:
            b = _ceildiv(-const, a)
            lo = b if lo is None else max(lo, b)
        else:
            b = _floordiv(const, -a)
            hi = b if hi is None else min(hi, b)
    return lo, hi


def _single_var_bounds(conj: Conj, var: str):
    lo = hi = None
    for e, is_eq in conj.constraints():
        if e.coeffs.get(var, 0) == 0 or len(e.coeffs) > 1:
            continue
        a = e.coeffs[var]
        if is_eq:
            if e.const % a:
                return _INFEASIBLE
            v = -e.const // a
            lo = v if lo is None else max(lo, v)
            hi = v if hi is None else min(hi, v)
        elif a > 0:
            b = _ceildiv(-e.const, a)
            lo = b if lo is None else max(lo, b)
        else:
            b = _floordiv(e.const, -a)
            hi = b if hi is None else min(hi, b)
    return lo, hi


def _candidate_range(conj: Conj, var: str):
    res = _single_var_bounds(conj, var)
    if res is _INFEASIBLE:
        return _INFEASIBLE
    lo, hi = res
    if lo is None or hi is None:
        shadow = _shadow_bounds(conj, var)
        if shadow is _INFEASIBLE:
            return _INFEASIBLE
        slo, shi = shadow
        lo = slo if lo is None else (lo if slo is None else max(lo, slo))
        hi = shi if hi is None else (hi if shi is None else min(hi, shi))
    if lo is None or hi is None:
        raise UnboundedSetError(f"variable {var!r} is unbounded under the binding")
    return lo, hi


def _exists_satisfiable(conj: Conj) -> bool:
    if not conj.exists:
        return True
    inner = Conj(conj.eqs, conj.ineqs, ())
    return _first_point(inner, list(conj.exists)) is not None


def _first_point(conj: Conj | None, order: Sequence[str],
                 descending: bool = False) -> Point | None:
    """Lexicographic extreme of one conjunction by depth-first search."""
    if conj is None:
        return None
    if not order:
        return () if _exists_satisfiable(conj) else None
    var = order[0]
    rng = _candidate_range(conj, var)
    if rng is _INFEASIBLE:
        return None
    lo, hi = rng
    values = range(hi, lo - 1, -1) if descending else range(lo, hi + 1)
    for a in values:
        sub = conj.substitute({var: a})
        if sub is None:
            continue
        rest = _first_point(sub, order[1:], descending)
        if rest is not None:
            return (a, *rest)
    return None


def _iter_points(conj: Conj | None, order: Sequence[str]) -> Iterator[Point]:
    if conj is None:
        return
    if not order:
        if _exists_satisfiable(conj):
            yield ()
        return
    var = order[0]
    rng = _candidate_range(conj, var)
    if rng is _INFEASIBLE:
        return
    lo, hi = rng
    for a in range(lo, hi + 1):
        sub = conj.substitute({var: a})
        if sub is None:
            continue
        for rest in _iter_points(sub, order[1:]):
            yield (a, *rest)


def _box_count(conj: Conj, order: Sequence[str]) -> int | None:
    """Fast path: product of extents when every constraint is single-variable."""
    if conj.exists:
        return None
    for e, _ in conj.constraints():
        if len(e.coeffs) > 1:
            return None
    total = 1
    for var in order:
        res = _single_var_bounds(conj, var)
        if res is _INFEASIBLE:
            return 0
        lo, hi = res
        if lo is None or hi is None:
            raise UnboundedSetError(f"variable {var!r} is unbounded under the binding")
        if hi < lo:
            return 0
        total *= hi - lo + 1
    return total


def _count_points(conj: Conj | None, order: Sequence[str]) -> int:
    if conj is None:
        return 0
    if not order:
        return 1 if _exists_satisfiable(conj) else 0
    box = _box_count(conj, order)
    if box is not None:
        return box
    var = order[0]
    rng = _candidate_range(conj, var)
    if rng is _INFEASIBLE:
        return 0
    lo, hi = rng
    total = 0
    for a in range(lo, hi + 1):
        total += _count_points(conj.substitute({var: a}), order[1:])
    return total


# ---------------------------------------------------------------------------
# Exact elimination of a variable (used by apply / project_out)
# ---------------------------------------------------------------------------


_KEEP = object()


def _try_eliminate(conj: Conj, var: str):
    """Remove ``var`` from the constraint system when exact over the integers.

    Returns the reduced Conj, None for statically infeasible, or _KEEP when
    elimination would lose integer points (caller keeps ``var`` existential).
    Exactness cases: unit-coefficient equality substitution, one-sided bound
    systems, and Fourier-Motzkin where every lower/upper pair has a unit
    coefficient on at least one side.
    """
    for e in conj.eqs:
        a = e.coeffs.get(var, 0)
        if abs(a) == 1:
            rest = AffineExpr({n: c for n, c in e.coeffs.items() if n != var}, e.const)
            solution = -rest if a == 1 else rest
            return Conj.make(
                (x.substitute({var: solution}) for x in conj.eqs),
                (x.substitute({var: solution}) for x in conj.ineqs),
                tuple(q for q in conj.exists if q != var),
            )
    lowers, uppers, rest_eq, rest_in = [], [], [], []
    for e in conj.eqs:
        a = e.coeffs.get(var, 0)
        if a == 0:
            rest_eq.append(e)
        else:
            lowers.append(e if a > 0 else -e)
            uppers.append(-e if a > 0 else e)
    for e in conj.ineqs:
        a = e.coeffs.get(var, 0)
        if a == 0:
            rest_in.append(e)
        elif a > 0:
            lowers.append(e)
        else:
            uppers.append(e)
    if not lowers or not uppers:
        # One-sided: an integer witness always exists, drop all var rows.
        return Conj.make(rest_eq, rest_in, tuple(q for q in conj.exists if q != var))
    for lo in lowers:
        for up in uppers:
            if lo.coeffs[var] != 1 and -up.coeffs[var] != 1:
                return _KEEP
    new_in = list(rest_in)
    for lo in lowers:
        a = lo.coeffs[var]
        for up in uppers:
            b = -up.coeffs[var]
            new_in.append(lo * b + up * a)
    return Conj.make(rest_eq, new_in, tuple(q for q in conj.exists if q != var))


def _hide_vars(conj: Conj, names: Sequence[str]) -> Conj | None:
    """Turn surface variables into existentials, eliminating them when exact."""
    out = Conj.make(conj.eqs, conj.ineqs, conj.exists + tuple(names))
    changed = True
    while changed and out is not None:
        changed = False
        for q in out.exists:
            res = _try_eliminate(out, q)
            if res is _KEEP:
                continue
            out = res
            changed = True
            break
    return out


# ---------------------------------------------------------------------------
# IntSet
# ---------------------------------------------------------------------------


class IntSet:
    """Union of constraint conjunctions over a fixed tuple of variables."""

    __slots__ = ("name", "vars", "params", "disjuncts")

    def __init__(self, name: str, vars: Sequence[str], params: Sequence[str] = (),
                 disjuncts: Iterable[Conj | None] = ()):
        self.name = name
        self.vars = tuple(vars)
        self.params = tuple(params)
        self.disjuncts = tuple(d for d in disjuncts if d is not None)
        if len(set(self.vars)) != len(self.vars):
            raise PolysetError(f"duplicate variables in space {self.vars}")

    @classmethod
    def from_constraints(cls, name: str, vars: Sequence[str],
                         eqs: Iterable[AffineExpr] = (),
                         ineqs: Iterable[AffineExpr] = (),
                         params: Sequence[str] = ()) -> "IntSet":
        return cls(name, vars, params, [Conj.make(eqs, ineqs)])

    @classmethod
    def empty(cls, name: str, vars: Sequence[str], params: Sequence[str] = ()) -> "IntSet":
        return cls(name, vars, params, [])

    def is_structurally_empty(self) -> bool:
        return not self.disjuncts

    def _require_space(self, other: "IntSet"):
        if self.vars != other.vars:
            raise SpaceMismatchError(f"{self.vars} vs {other.vars}")

    def _merged_params(self, other: "IntSet") -> tuple[str, ...]:
        return self.params + tuple(p for p in other.params if p not in self.params)

    def intersect(self, other: "IntSet") -> "IntSet":
        self._require_space(other)
        return IntSet(self.name, self.vars, self._merged_params(other),
                      [a.conjoin(b) for a in self.disjuncts for b in other.disjuncts])

    def union(self, other: "IntSet") -> "IntSet":
        self._require_space(other)
        return IntSet(self.name, self.vars, self._merged_params(other),
                      self.disjuncts + other.disjuncts)

    def subtract(self, other: "IntSet") -> "IntSet":
        self._require_space(other)
        for d in other.disjuncts:
            if d.exists:
                raise PolysetError("cannot subtract a set with hidden existentials")
        pieces = list(self.disjuncts)
        for d in other.disjuncts:
            pieces = [p2 for p in pieces for p2 in _conj_minus(p, d)]
        return IntSet(self.name, self.vars, self._merged_params(other), pieces)

    def fix_vars(self, assignment: Mapping[str, int]) -> "IntSet":
        """Substitute concrete values for some variables, shrinking the space."""
        unknown = set(assignment) - set(self.vars)
        if unknown:
            raise SpaceMismatchError(f"not in space: {sorted(unknown)}")
        keep = [v for v in self.vars if v not in assignment]
        return IntSet(self.name, keep, self.params,
                      [d.substitute(assignment) for d in self.disjuncts])

    def project_out(self, var: str) -> "IntSet":
        if var not in self.vars:
            raise SpaceMismatchError(f"{var!r} not in space {self.vars}")
        keep = [v for v in self.vars if v != var]
        return IntSet(self.name, keep, self.params,
                      [_hide_vars(d, [var]) for d in self.disjuncts])

    # -- lexicographic prefix sets ------------------------------------------

    def _lex_set(self, bound: Point, strict: bool, greater: bool) -> "IntSet":
        if len(bound) != len(self.vars):
            raise SpaceMismatchError(
                f"point arity {len(bound)} vs space arity {len(self.vars)}")
        terms = [AffineExpr.var(v) for v in self.vars]
        pieces = _lex_pieces(terms, bound, strict, greater)
        lex = IntSet(self.name, self.vars, self.params, pieces)
        return self.intersect(lex)

    def lex_lt_set(self, bound: Point) -> "IntSet":
        """Subset of points lexicographically < bound."""
        return self._lex_set(bound, strict=True, greater=False)

    def lex_le_set(self, bound: Point) -> "IntSet":
        """Subset of points lexicographically <= bound."""
        return self._lex_set(bound, strict=False, greater=False)

    def lex_gt_set(self, bound: Point) -> "IntSet":
        return self._lex_set(bound, strict=True, greater=True)

    def lex_ge_set(self, bound: Point) -> "IntSet":
        return self._lex_set(bound, strict=False, greater=True)

    # -- bound queries -------------------------------------------------------

    def _bound(self, binding: Binding) -> list[Conj]:
        missing = [p for p in self.params if p not in binding]
        if missing:
            raise UnboundParameterError(f"unbound parameters: {missing}")
        sub = {p: int(binding[p]) for p in self.params}
        out = []
        for d in self.disjuncts:
            b = d.substitute(sub)
            if b is not None:
                out.append(b)
        return out

    def lexmin(self, binding: Binding = {}) -> Point | None:
        best = None
        for d in self._bound(binding):
            p = _first_point(d, list(self.vars))
            if p is not None and (best is None or p < best):
                best = p
        return best

    def lexmax(self, binding: Binding = {}) -> Point | None:
        best = None
        for d in self._bound(binding):
            p = _first_point(d, list(self.vars), descending=True)
            if p is not None and (best is None or p > best):
                best = p
        return best

    def enumerate_points(self, binding: Binding = {}) -> set[Point]:
        out: set[Point] = set()
        for d in self._bound(binding):
            out.update(_iter_points(d, list(self.vars)))
        return out

    def contains(self, point: Point, binding: Binding = {}) -> bool:
        if len(point) != len(self.vars):
            raise SpaceMismatchError("point arity mismatch")
        env = dict(zip(self.vars, point))
        for d in self._bound(binding):
            sub = d.substitute(env)
            if sub is not None and _exists_satisfiable(sub):
                return True
        return False

    def is_empty(self, binding: Binding = {}) -> bool:
        return self.lexmin(binding) is None

    def cardinality(self, binding: Binding = {}) -> int:
        """Exact number of integer points; disjuncts are made disjoint first."""
        bound = self._bound(binding)
        if any(d.exists for d in bound):
            # Hidden existentials cannot be complemented; enumerate instead.
            out: set[Point] = set()
            for d in bound:
                out.update(_iter_points(d, list(self.vars)))
            return len(out)
        total = 0
        done: list[Conj] = []
        for d in bound:
            pieces = [d]
            for prev in done:
                pieces = [p2 for p in pieces for p2 in _conj_minus(p, prev)]
            for p in pieces:
                total += _count_points(p, list(self.vars))
            done.append(d)
        return total

    def prune(self, binding: Binding) -> "IntSet":
        """Drop disjuncts that are empty under the binding (cheap interval test)."""
        sub = {p: int(binding[p]) for p in self.params if p in binding}
        kept = []
        for d in self.disjuncts:
            b = d.substitute(sub)
            if b is None or _quick_infeasible(b):
                continue
            kept.append(d)
        return IntSet(self.name, self.vars, self.params, kept)

    def __str__(self) -> str:
        return render_set(self)

    def __repr__(self) -> str:
        return f"IntSet({self})"


def _quick_infeasible(conj: Conj) -> bool:
    """Interval-propagation emptiness test; True means definitely empty."""
    rng: dict[str, tuple[int | None, int | None]] = {}
    for v in conj.free_vars():
        res = _single_var_bounds(conj, v)
        if res is _INFEASIBLE:
            return True
        rng[v] = res
    for e, is_eq in conj.constraints():
        hi = e.const
        lo = e.const
        ok_hi = ok_lo = True
        for n, c in e.coeffs.items():
            vlo, vhi = rng.get(n, (None, None))
            top = vhi if c > 0 else vlo
            bot = vlo if c > 0 else vhi
            if top is None:
                ok_hi = False
            else:
                hi += c * top
            if bot is None:
                ok_lo = False
            else:
                lo += c * bot
        if ok_hi and hi < 0:
            return True
        if is_eq and ok_lo and lo > 0:
            return True
    return False


def _lex_pieces(terms: Sequence[AffineExpr], bound: Sequence[int],
                strict: bool, greater: bool) -> list[Conj | None]:
    """Disjuncts of ``terms <lex bound`` (or <=, >, >=) over affine terms.

    Constant terms resolve statically, so schedule position columns never
    inflate the disjunct count.
    """
    pieces: list[Conj | None] = []
    prefix: list[AffineExpr] = []
    n = len(terms)
    for p in range(n):
        diff = terms[p] - bound[p]
        if diff.is_constant():
            c = diff.const
            decided = c < 0 if not greater else c > 0
            if decided:
                pieces.append(Conj.make(list(prefix), []))
                break
            if c != 0:
                break  # wrong direction; no further prefix possible
            continue  # equal constants: extend prefix implicitly
        if greater:
            pieces.append(Conj.make(list(prefix), [diff - 1]))
        else:
            pieces.append(Conj.make(list(prefix), [-diff - 1]))
        prefix.append(diff)
    else:
        # Every position consumed without a static decision: add the
        # all-equal disjunct for the non-strict comparison.
        if not strict:
            pieces.append(Conj.make(list(prefix), []))
    return pieces


def lex_terms_set(space: IntSet, terms: Sequence[AffineExpr], bound: Sequence[int],
                  strict: bool = False, greater: bool = False) -> IntSet:
    """Subset of ``space`` whose schedule terms compare lexicographically
    against a concrete vector.  Term lists of different lengths are padded
    with zero columns."""
    n = max(len(terms), len(bound))
    terms = list(terms) + [AffineExpr(const=0)] * (n - len(terms))
    bound = list(bound) + [0] * (n - len(bound))
    pieces = _lex_pieces(terms, bound, strict, greater)
    lex = IntSet(space.name, space.vars, space.params, pieces)
    return space.intersect(lex)


def _conj_minus(a: Conj, b: Conj) -> list[Conj]:
    """Ordered decomposition of ``a and not b`` into disjoint conjunctions."""
    rows: list[AffineExpr] = []
    for e in b.eqs:
        rows.append(e)
        rows.append(-e)
    rows.extend(b.ineqs)
    out: list[Conj] = []
    kept: list[AffineExpr] = []
    for r in rows:
        piece = Conj.make(a.eqs, a.ineqs + tuple(kept) + (-r - 1,), a.exists)
        if piece is not None and not _quick_infeasible(piece):
            out.append(piece)
        kept.append(r)
    return out


# ---------------------------------------------------------------------------
# IntRelation
# ---------------------------------------------------------------------------


class IntRelation:
    """Map from input tuples to output tuples constrained by affine conditions."""

    __slots__ = ("in_name", "in_vars", "out_name", "out_vars", "params", "disjuncts")

    def __init__(self, in_name: str, in_vars: Sequence[str],
                 out_name: str, out_vars: Sequence[str],
                 params: Sequence[str] = (), disjuncts: Iterable[Conj | None] = ()):
        self.in_name = in_name
        self.in_vars = tuple(in_vars)
        self.out_name = out_name
        self.out_vars = tuple(out_vars)
        self.params = tuple(params)
        self.disjuncts = tuple(d for d in disjuncts if d is not None)
        if set(self.in_vars) & set(self.out_vars):
            raise PolysetError("input and output variable names must be disjoint")

    @classmethod
    def from_exprs(cls, in_name: str, in_vars: Sequence[str], out_name: str,
                   out_exprs: Sequence[AffineExpr], params: Sequence[str] = (),
                   guard: Conj | None = None) -> "IntRelation":
        """Access-function style relation: out_i = expr_i(in)."""
        taken = set(in_vars) | set(params)
        out_vars = []
        for i in range(len(out_exprs)):
            v = f"{out_name.lower()}{i}" if out_name else f"o{i}"
            while v in taken:
                v = v + "_"
            taken.add(v)
            out_vars.append(v)
        eqs = [AffineExpr.var(v) - e for v, e in zip(out_vars, out_exprs)]
        base = Conj.make(eqs, [])
        if guard is not None:
            base = base.conjoin(guard) if base is not None else None
        return cls(in_name, in_vars, out_name, out_vars, params, [base])

    def as_set(self) -> IntSet:
        """View the relation as a set over input ++ output variables."""
        return IntSet(self.in_name, self.in_vars + self.out_vars, self.params,
                      self.disjuncts)

    def domain(self) -> IntSet:
        return IntSet(self.in_name, self.in_vars, self.params,
                      [_hide_vars(d, self.out_vars) for d in self.disjuncts])

    def range(self) -> IntSet:
        return IntSet(self.out_name, self.out_vars, self.params,
                      [_hide_vars(d, self.in_vars) for d in self.disjuncts])

    def apply(self, s: IntSet) -> IntSet:
        """Image of ``s``; exact even when elimination keeps hidden existentials."""
        if s.vars != self.in_vars:
            raise SpaceMismatchError(f"relation input {self.in_vars} vs set {s.vars}")
        params = self.params + tuple(p for p in s.params if p not in self.params)
        out = []
        for dr in self.disjuncts:
            for ds in s.disjuncts:
                both = dr.conjoin(ds)
                if both is None:
                    continue
                out.append(_hide_vars(both, self.in_vars))
        return IntSet(self.out_name, self.out_vars, params, out)

    def apply_point(self, point: Point) -> IntSet:
        if len(point) != len(self.in_vars):
            raise SpaceMismatchError("point arity mismatch")
        env = dict(zip(self.in_vars, point))
        return IntSet(self.out_name, self.out_vars, self.params,
                      [d.substitute(env) for d in self.disjuncts])

    def intersect_domain(self, s: IntSet) -> "IntRelation":
        if s.vars != self.in_vars:
            raise SpaceMismatchError(f"relation input {self.in_vars} vs set {s.vars}")
        params = self.params + tuple(p for p in s.params if p not in self.params)
        return IntRelation(
            self.in_name, self.in_vars, self.out_name, self.out_vars, params,
            [dr.conjoin(ds) for dr in self.disjuncts for ds in s.disjuncts])

    def enumerate_pairs(self, binding: Binding = {}) -> set[tuple[Point, Point]]:
        n = len(self.in_vars)
        pairs = self.as_set().enumerate_points(binding)
        return {(p[:n], p[n:]) for p in pairs}

    def is_empty(self, binding: Binding = {}) -> bool:
        return self.as_set().is_empty(binding)

    def __str__(self) -> str:
        return render_relation(self)

    def __repr__(self) -> str:
        return f"IntRelation({self})"


# ---------------------------------------------------------------------------
# Module-level operation aliases
# ---------------------------------------------------------------------------


def intersect(a: IntSet, b: IntSet) -> IntSet:
    return a.intersect(b)


def union(a: IntSet, b: IntSet) -> IntSet:
    return a.union(b)


def subtract(a: IntSet, b: IntSet) -> IntSet:
    return a.subtract(b)


def apply(r: IntRelation, s: IntSet) -> IntSet:
    return r.apply(s)


def lexmin(s: IntSet, binding: Binding = {}) -> Point | None:
    return s.lexmin(binding)


def lexmax(s: IntSet, binding: Binding = {}) -> Point | None:
    return s.lexmax(binding)


def lex_lt_set(a: IntSet, bound: Point) -> IntSet:
    return a.lex_lt_set(bound)


def lex_le_set(a: IntSet, bound: Point) -> IntSet:
    return a.lex_le_set(bound)


def cardinality(s: IntSet, binding: Binding = {}) -> int:
    return s.cardinality(binding)


def project_out(s: IntSet, var: str) -> IntSet:
    return s.project_out(var)


# ---------------------------------------------------------------------------
# Textual form: printing and parsing
# ---------------------------------------------------------------------------


def _render_constraint(e: AffineExpr, is_eq: bool, order: Sequence[str]) -> str:
    """Render ``e >= 0`` / ``e = 0`` with negative terms moved across."""
    pos = {n: c for n, c in e.coeffs.items() if c > 0}
    neg = {n: -c for n, c in e.coeffs.items() if c < 0}
    op = "=" if is_eq else ">="
    lhs = AffineExpr(pos, e.const if e.const > 0 else 0)
    rhs = AffineExpr(neg, -e.const if e.const < 0 else 0)
    return f"{lhs.render(order)} {op} {rhs.render(order)}"


def render_set(s: IntSet) -> str:
    head = f"[{', '.join(s.params)}] -> " if s.params else ""
    tup = f"{s.name}[{', '.join(s.vars)}]"
    if not s.disjuncts:
        return f"{head}{{ {tup} : 1 = 0 }}"
    order = list(s.vars) + list(s.params)
    groups = [_render_conj(d, order) for d in s.disjuncts]
    body = " or ".join(groups)
    if all(g == "" for g in groups):
        return f"{head}{{ {tup} }}"
    return f"{head}{{ {tup} : {body} }}"


def _render_conj(d: Conj, order: Sequence[str]) -> str:
    order = list(order) + list(d.exists)
    parts = []
    for e in d.eqs:
        parts.append(_render_constraint(e, True, order))
    for e in d.ineqs:
        parts.append(_render_constraint(e, False, order))
    body = " and ".join(parts) if parts else "0 = 0"
    if d.exists:
        return f"(exists {', '.join(d.exists)} : {body})"
    if len(parts) > 1:
        return f"({body})"
    return body


def render_relation(r: IntRelation) -> str:
    head = f"[{', '.join(r.params)}] -> " if r.params else ""
    order = list(r.in_vars) + list(r.out_vars) + list(r.params)
    compact = _compact_out_exprs(r)
    if compact is not None:
        exprs, remaining = compact
        tup = (f"{r.in_name}[{', '.join(r.in_vars)}] -> "
               f"{r.out_name}[{', '.join(e.render(order) for e in exprs)}]")
        groups = [_render_conj(d, order) for d in remaining]
        body = " or ".join(g for g in groups)
        if not body or body == "0 = 0":
            return f"{head}{{ {tup} }}"
        return f"{head}{{ {tup} : {body} }}"
    tup = f"{r.in_name}[{', '.join(r.in_vars)}] -> {r.out_name}[{', '.join(r.out_vars)}]"
    groups = [_render_conj(d, order) for d in r.disjuncts]
    if not groups:
        return f"{head}{{ {tup} : 1 = 0 }}"
    return f"{head}{{ {tup} : {' or '.join(groups)} }}"


def _compact_out_exprs(r: IntRelation):
    """Inline output tuple exprs when each out var has a unit defining equality."""
    if len(r.disjuncts) != 1:
        return None
    d = r.disjuncts[0]
    if d.exists:
        return None
    exprs = []
    used = []
    for v in r.out_vars:
        found = None
        for e in d.eqs:
            c = e.coeffs.get(v, 0)
            if abs(c) == 1 and not any(
                    o != v and o in e.coeffs for o in r.out_vars):
                rest = AffineExpr({n: k for n, k in e.coeffs.items() if n != v}, e.const)
                found = -rest if c == 1 else rest
                used.append(e)
                break
        if found is None:
            return None
        exprs.append(found)
    remaining = Conj.make([e for e in d.eqs if e not in used], d.ineqs)
    return exprs, [remaining] if remaining else []


_TOKEN = re.compile(
    r"\s*(?:(?P<int>\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_']*)|"
    r"(?P<op><=|>=|==|->|[\[\]{}():,;*+=<>-]))")


def _tokenize_set(text: str) -> list[str]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise SetParseError(f"bad token at: {text[pos:pos + 20]!r}")
            break
        out.append(m.group("int") or m.group("name") or m.group("op"))
        pos = m.end()
    return out


_RESERVED = {"and", "or", "exists"}


class _SetParser:
    """Recursive-descent parser for the brace/colon set and relation notation."""

    def __init__(self, tokens: list[str]):
        self.toks = tokens
        self.i = 0

    def peek(self) -> str | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self) -> str:
        if self.i >= len(self.toks):
            raise SetParseError("unexpected end of input")
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, tok: str):
        t = self.next()
        if t != tok:
            raise SetParseError(f"expected {tok!r}, found {t!r}")

    def parse(self):
        params: list[str] = []
        if self.peek() == "[":
            self.next()
            params = self._namelist("]")
            self.expect("->")
        self.expect("{")
        in_name, in_vars = self._tuple()
        if self.peek() == "->":
            self.next()
            out_name, out_entries = self._tuple_exprs(dict.fromkeys(in_vars))
            return self._finish_relation(in_name, in_vars, out_name, out_entries, params)
        disjuncts = [Conj.make([], [])]
        if self.peek() == ":":
            self.next()
            disjuncts = self._or_expr(set(in_vars) | set(params))
        self.expect("}")
        return IntSet(in_name, in_vars, params, disjuncts)

    def _finish_relation(self, in_name, in_vars, out_name, out_entries, params):
        taken = set(in_vars) | set(params)
        out_vars = []
        eqs = []
        for entry in out_entries:
            if isinstance(entry, str) and entry not in taken:
                out_vars.append(entry)
                taken.add(entry)
            else:
                expr = entry if isinstance(entry, AffineExpr) else AffineExpr.var(entry)
                v = f"o{len(out_vars)}"
                while v in taken:
                    v += "_"
                taken.add(v)
                out_vars.append(v)
                eqs.append(AffineExpr.var(v) - expr)
        disjuncts = [Conj.make(eqs, [])]
        if self.peek() == ":":
            self.next()
            names = taken | set(out_vars)
            ors = self._or_expr(names)
            disjuncts = [d for base in disjuncts for d in
                         (base.conjoin(o) for o in ors)]
        self.expect("}")
        return IntRelation(in_name, in_vars, out_name, out_vars, params, disjuncts)

    def _tuple(self) -> tuple[str, list[str]]:
        name = ""
        if self.peek() != "[":
            name = self.next()
        self.expect("[")
        return name, self._namelist("]")

    def _tuple_exprs(self, scope) -> tuple[str, list]:
        name = ""
        if self.peek() != "[":
            name = self.next()
        self.expect("[")
        entries: list = []
        if self.peek() != "]":
            while True:
                save = self.i
                tok = self.peek()
                if tok and re.match(r"[A-Za-z_]", tok):
                    nxt = self.toks[self.i + 1] if self.i + 1 < len(self.toks) else None
                    if nxt in (",", "]") and tok not in scope:
                        entries.append(self.next())
                        if self.peek() == ",":
                            self.next()
                            continue
                        break
                self.i = save
                entries.append(self._affine(set(scope)))
                if self.peek() == ",":
                    self.next()
                    continue
                break
        self.expect("]")
        return name, entries

    def _namelist(self, closer: str) -> list[str]:
        names = []
        while self.peek() != closer:
            names.append(self.next())
            if self.peek() == ",":
                self.next()
        self.expect(closer)
        return names

    def _or_expr(self, scope: set[str]) -> list[Conj]:
        out = self._and_expr(scope)
        while self.peek() == "or":
            self.next()
            out.extend(self._and_expr(scope))
        return [d for d in out if d is not None]

    def _and_expr(self, scope: set[str]) -> list[Conj]:
        groups = [self._primary(scope)]
        while self.peek() == "and":
            self.next()
            groups.append(self._primary(scope))
        # conjunction distributes over the unions returned by primaries
        acc = groups[0]
        for g in groups[1:]:
            acc = [a.conjoin(b) for a in acc for b in g
                   if a is not None and b is not None]
            acc = [x for x in acc if x is not None]
        return acc

    def _primary(self, scope: set[str]) -> list[Conj]:
        if self.peek() == "(":
            self.next()
            out = self._or_expr(scope)
            self.expect(")")
            return out
        if self.peek() == "exists":
            self.next()
            names = []
            while self.peek() != ":":
                names.append(self.next())
                if self.peek() == ",":
                    self.next()
            self.expect(":")
            inner = self._and_expr(scope | set(names))
            return [Conj(d.eqs, d.ineqs, d.exists + tuple(names))
                    for d in inner if d is not None]
        return [self._chain(scope)]

    def _chain(self, scope: set[str]) -> Conj | None:
        eqs: list[AffineExpr] = []
        ineqs: list[AffineExpr] = []
        left = self._affine(scope)
        seen_op = False
        while self.peek() in ("<", "<=", ">", ">=", "=", "=="):
            op = self.next()
            right = self._affine(scope)
            if op in ("=", "=="):
                eqs.append(left - right)
            elif op == "<":
                ineqs.append(right - left - 1)
            elif op == "<=":
                ineqs.append(right - left)
            elif op == ">":
                ineqs.append(left - right - 1)
            else:
                ineqs.append(left - right)
            left = right
            seen_op = True
        if not seen_op:
            raise SetParseError("expected a comparison")
        return Conj.make(eqs, ineqs)

    def _affine(self, scope: set[str]) -> AffineExpr:
        expr = self._term(scope)
        while self.peek() in ("+", "-"):
            op = self.next()
            t = self._term(scope)
            expr = expr + t if op == "+" else expr - t
        return expr

    def _term(self, scope: set[str]) -> AffineExpr:
        sign = 1
        while self.peek() in ("+", "-"):
            if self.next() == "-":
                sign = -sign
        tok = self.next()
        if tok.isdigit():
            value = int(tok)
            if self.peek() == "*":
                self.next()
                name = self.next()
                return AffineExpr({name: sign * value})
            nxt = self.peek()
            if nxt is not None and nxt not in _RESERVED and re.match(r"[A-Za-z_]", nxt):
                name = self.next()
                return AffineExpr({name: sign * value})
            return AffineExpr(const=sign * value)
        if tok not in _RESERVED and re.match(r"[A-Za-z_]", tok):
            if self.peek() == "*":
                raise SetParseError(f"non-affine product involving {tok!r}")
            return AffineExpr({tok: sign})
        raise SetParseError(f"unexpected token {tok!r}")


def parse_set(text: str) -> IntSet:
    result = _SetParser(_tokenize_set(text)).parse()
    if not isinstance(result, IntSet):
        raise SetParseError("expected a set, found a relation")
    return result


def parse_relation(text: str) -> IntRelation:
    result = _SetParser(_tokenize_set(text)).parse()
    if not isinstance(result, IntRelation):
        raise SetParseError("expected a relation, found a set")
    return result
