"""Parser and IR for a small C-like affine loop-nest language.

Source files (`.pdl`) declare integer size parameters and arrays, then one
or more loop nests.  Bounds and subscripts must be affine in the enclosing
iterators and parameters; anything else is rejected with a positioned
error, never approximated.  A nest may carry one microkernel pragma whose
block gives the loop-based equivalent of an opaque tuned routine:

    param M, N, K;
    array C[M][N]; array A[M][K]; array B[K][N];

    gemm: parallel for (i = 0; i < M; i++) {
      for (j = 0; j < N; j++) {
        for (k = 0; k < K; k++) {
          S: C[i][j] += A[i][k] * B[k][j];
        }
      }
    }

`parallel` stands in for `#pragma omp parallel for` (both spellings parse).
Derived iterators (`ij = oj * 2;`) are folded into the subscripts at parse
time, keeping the IR purely affine in loop iterators.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, replace
from typing import Iterator, Mapping, Sequence

from .polyset import AffineExpr, Conj, IntRelation, IntSet


class LoopDslError(Exception):
    pass


class ParseError(LoopDslError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.line = line
        self.col = col


class NonAffineError(ParseError):
    pass


# ---------------------------------------------------------------------------
# IR
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Loop:
    iterator: str
    lower: AffineExpr
    upper: tuple[AffineExpr, ...]  # run while iterator < min(upper)
    step: int = 1
    parallel: bool = False


@dataclass(frozen=True)
class Access:
    array: str
    indices: tuple[AffineExpr, ...]
    kind: str  # "read" | "write"


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str  # min | max
    args: tuple


@dataclass(frozen=True)
class Statement:
    label: str
    target: Access
    op: str  # "=" | "+="
    expr: object

    def read_accesses(self) -> tuple[Access, ...]:
        """Reads in evaluation order: expression left-to-right, then the
        target itself for compound assignment."""
        reads = list(_expr_accesses(self.expr))
        if self.op == "+=":
            reads.append(replace(self.target, kind="read"))
        return tuple(reads)


def _expr_accesses(expr) -> Iterator[Access]:
    if isinstance(expr, Access):
        yield expr
    elif isinstance(expr, Neg):
        yield from _expr_accesses(expr.operand)
    elif isinstance(expr, BinOp):
        yield from _expr_accesses(expr.left)
        yield from _expr_accesses(expr.right)
    elif isinstance(expr, Call):
        for a in expr.args:
            yield from _expr_accesses(a)


@dataclass(frozen=True)
class LoopNode:
    loop: Loop
    body: tuple


@dataclass(frozen=True)
class StmtNode:
    stmt: Statement


@dataclass(frozen=True)
class KernelCall:
    name: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class KernelRegion:
    name: str
    args: tuple[str, ...]
    body: tuple


@dataclass(frozen=True)
class MicrokernelSpec:
    name: str
    args: tuple[str, ...]
    body: tuple


@dataclass(frozen=True)
class LoopNest:
    name: str
    params: tuple[str, ...]
    arrays: tuple[tuple[str, tuple[AffineExpr, ...]], ...]
    body: tuple
    microkernel: MicrokernelSpec | None = None

    def array_extents(self) -> dict[str, tuple[AffineExpr, ...]]:
        return dict(self.arrays)

    def loops(self) -> list[Loop]:
        """All loops in preorder, looking through kernel regions."""
        out: list[Loop] = []
        def visit(nodes):
            for n in nodes:
                if isinstance(n, LoopNode):
                    out.append(n.loop)
                    visit(n.body)
                elif isinstance(n, KernelRegion):
                    visit(n.body)
        visit(self.body)
        return out

    def statements(self) -> list[Statement]:
        out: list[Statement] = []
        def visit(nodes):
            for n in nodes:
                if isinstance(n, LoopNode):
                    visit(n.body)
                elif isinstance(n, KernelRegion):
                    visit(n.body)
                elif isinstance(n, StmtNode):
                    out.append(n.stmt)
        visit(self.body)
        return out

    def has_kernel_call(self) -> bool:
        return any(True for _ in _find_nodes(self.body, KernelCall))

    def has_kernel_region(self) -> bool:
        return any(True for _ in _find_nodes(self.body, KernelRegion))


@dataclass(frozen=True)
class Program:
    params: tuple[str, ...]
    arrays: tuple[tuple[str, tuple[AffineExpr, ...]], ...]
    nests: tuple[LoopNest, ...]


def _find_nodes(nodes, cls) -> Iterator:
    for n in nodes:
        if isinstance(n, cls):
            yield n
        if isinstance(n, (LoopNode, KernelRegion)):
            yield from _find_nodes(n.body, cls)


def map_body(nodes, fn) -> tuple:
    """Rebuild a body tuple, replacing each node with fn(node) (which may
    return a node, a list of nodes, or None to drop)."""
    out = []
    for n in nodes:
        if isinstance(n, LoopNode):
            n = LoopNode(n.loop, map_body(n.body, fn))
        elif isinstance(n, KernelRegion):
            n = KernelRegion(n.name, n.args, map_body(n.body, fn))
        r = fn(n)
        if r is None:
            continue
        if isinstance(r, (list, tuple)):
            out.extend(r)
        else:
            out.append(r)
    return tuple(out)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_KEYWORDS = {"for", "param", "array", "parallel", "min", "max"}

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<comment>//[^\n]*)"
    r"|(?P<pragma>\#pragma[^\n]*)"
    r"|(?P<float>\d+\.\d+)"
    r"|(?P<int>\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>\+\+|\+=|<=|>=|==|[-+*/%(){}\[\];:,=<>])"
)

_OMP_RE = re.compile(r"#pragma\s+omp\s+parallel\s+for\b")
_MK_RE = re.compile(r"#pragma\s+microkernel\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int
    payload: object = None


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            col = pos - start + 1
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        col = pos - start + 1
        grp = m.lastgroup
        tok = m.group()
        if grp == "ws" or grp == "comment":
            pass
        elif grp == "pragma":
            if _OMP_RE.match(tok):
                toks.append(_Tok("pragma_omp", tok, line, col))
            else:
                mk = _MK_RE.match(tok)
                if mk:
                    args = tuple(a.strip() for a in mk.group(2).split(",") if a.strip())
                    toks.append(_Tok("pragma_mk", tok, line, col,
                                     payload=(mk.group(1), args)))
                else:
                    raise ParseError(f"malformed pragma: {tok.strip()!r}", line, col)
        elif grp == "name":
            toks.append(_Tok("name", tok, line, col))
        elif grp == "int":
            toks.append(_Tok("int", tok, line, col))
        elif grp == "float":
            toks.append(_Tok("float", tok, line, col))
        else:
            toks.append(_Tok(tok, tok, line, col))
        line += tok.count("\n")
        if "\n" in tok:
            start = pos + tok.rindex("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - start + 1))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Scope:
    """Lexical scope for iterators and folded derived iterators."""

    def __init__(self, params: Sequence[str]):
        self.params = set(params)
        self.frames: list[dict[str, AffineExpr]] = [dict()]

    def push(self):
        self.frames.append({})

    def pop(self):
        self.frames.pop()

    def lookup(self, name: str) -> AffineExpr | None:
        for frame in reversed(self.frames):
            if name in frame:
                return frame[name]
        if name in self.params:
            return AffineExpr.var(name)
        return None

    def declare(self, name: str, value: AffineExpr, tok: _Tok):
        if self.lookup(name) is not None:
            raise ParseError(f"identifier {name!r} shadows an existing one",
                             tok.line, tok.col)
        self.frames[-1][name] = value


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def expect(self, kind: str) -> _Tok:
        t = self.next()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text!r}", t.line, t.col)
        return t

    def expect_name(self) -> _Tok:
        t = self.expect("name")
        if t.text in _KEYWORDS:
            raise ParseError(f"keyword {t.text!r} used as identifier", t.line, t.col)
        return t

    # -- top level ----------------------------------------------------------

    def program(self) -> Program:
        params: list[str] = []
        arrays: dict[str, tuple[AffineExpr, ...]] = {}
        nests: list[LoopNest] = []
        scope = _Scope(())
        while self.peek().kind != "eof":
            t = self.peek()
            if t.kind == "name" and t.text == "param":
                self.next()
                while True:
                    params.append(self.expect_name().text)
                    if self.peek().kind == ",":
                        self.next()
                        continue
                    break
                self.expect(";")
                scope.params = set(params)
            elif t.kind == "name" and t.text == "array":
                self.next()
                name = self.expect_name().text
                dims = []
                while self.peek().kind == "[":
                    self.next()
                    dims.append(self.affine(scope))
                    self.expect("]")
                self.expect(";")
                arrays[name] = tuple(dims)
            else:
                nests.append(self.nest(params, arrays, default_name=f"op{len(nests)}"))
        if not nests:
            t = self.peek()
            raise ParseError("statement required: no loop nest found", t.line, t.col)
        nests = [self._finalize(n, arrays) for n in nests]
        all_arrays = _merge_arrays(nests)
        nests = [replace(n, arrays=all_arrays) for n in nests]
        return Program(tuple(params), all_arrays, tuple(nests))

    def nest(self, params, arrays, default_name: str) -> LoopNest:
        name = default_name
        if (self.peek().kind == "name" and self.peek().text not in _KEYWORDS
                and self.peek(1).kind == ":"):
            name = self.next().text
            self.next()
        scope = _Scope(params)
        mk_box: list[MicrokernelSpec] = []
        node = self.decorated_loop(scope, mk_box)
        if node is None:
            t = self.peek()
            raise ParseError("expected a loop", t.line, t.col)
        return LoopNest(name, tuple(params), tuple(arrays.items()), (node,),
                        mk_box[0] if mk_box else None)

    def _finalize(self, nest: LoopNest, declared) -> LoopNest:
        inferred = _infer_arrays(nest, dict(declared))
        return replace(nest, arrays=tuple(inferred.items()))

    # -- loops and bodies ----------------------------------------------------

    def decorated_loop(self, scope: _Scope, mk_box) -> LoopNode | None:
        parallel = False
        t = self.peek()
        if t.kind == "pragma_omp":
            self.next()
            parallel = True
        elif t.kind == "name" and t.text == "parallel":
            self.next()
            parallel = True
        if not (self.peek().kind == "name" and self.peek().text == "for"):
            if parallel:
                t = self.peek()
                raise ParseError("expected 'for' after parallel marker", t.line, t.col)
            return None
        return self.for_loop(scope, parallel, mk_box)

    def for_loop(self, scope: _Scope, parallel: bool, mk_box) -> LoopNode:
        self.next()  # 'for'
        self.expect("(")
        it_tok = self.expect_name()
        it = it_tok.text
        self.expect("=")
        lower = self.affine(scope)
        self.expect(";")
        cond_tok = self.expect_name()
        if cond_tok.text != it:
            raise ParseError(f"loop condition must test {it!r}",
                             cond_tok.line, cond_tok.col)
        self.expect("<")
        upper = self.upper_bound(scope)
        self.expect(";")
        step_tok = self.expect_name()
        if step_tok.text != it:
            raise ParseError(f"loop increment must update {it!r}",
                             step_tok.line, step_tok.col)
        t = self.next()
        if t.kind == "++":
            step = 1
        elif t.kind == "+=":
            s = self.expect("int")
            step = int(s.text)
            if step < 1:
                raise ParseError("loop step must be positive", s.line, s.col)
        else:
            raise ParseError("expected '++' or '+= <int>'", t.line, t.col)
        self.expect(")")
        scope.push()
        scope.declare(it, AffineExpr.var(it), it_tok)
        body = self.block(scope, mk_box)
        scope.pop()
        if not body:
            raise ParseError("statement required: empty loop body",
                             it_tok.line, it_tok.col)
        return LoopNode(Loop(it, lower, upper, step, parallel), body)

    def upper_bound(self, scope: _Scope) -> tuple[AffineExpr, ...]:
        t = self.peek()
        if t.kind == "name" and t.text == "min":
            self.next()
            self.expect("(")
            terms = [self.affine(scope)]
            while self.peek().kind == ",":
                self.next()
                terms.append(self.affine(scope))
            self.expect(")")
            return tuple(terms)
        return (self.affine(scope),)

    def block(self, scope: _Scope, mk_box) -> tuple:
        if self.peek().kind == "{":
            self.next()
            items: list = []
            while self.peek().kind != "}":
                items.extend(self.item(scope, mk_box))
            self.next()
            return tuple(items)
        return tuple(self.item(scope, mk_box))

    def item(self, scope: _Scope, mk_box) -> list:
        t = self.peek()
        if t.kind == "pragma_mk":
            self.next()
            name, args = t.payload
            if mk_box:
                raise ParseError("at most one microkernel region per nest",
                                 t.line, t.col)
            scope.push()
            body = self.block(scope, mk_box)
            scope.pop()
            if not body or not all(isinstance(n, LoopNode) for n in body):
                raise ParseError("microkernel body must be a loop band", t.line, t.col)
            mk_box.append(MicrokernelSpec(name, args, body))
            return [KernelCall(name, args)]
        loop = self.decorated_loop(scope, mk_box)
        if loop is not None:
            return [loop]
        if t.kind != "name":
            raise ParseError(f"expected statement, found {t.text!r}", t.line, t.col)
        # NAME ':' -> labeled statement; NAME '[' -> assignment;
        # NAME '=' affine ';' -> derived iterator.
        label = ""
        if self.peek(1).kind == ":":
            label = self.next().text
            self.next()
        if self.peek(1).kind == "=" and not label:
            name_tok = self.next()
            self.next()
            value = self.affine(scope)
            self.expect(";")
            scope.declare(name_tok.text, value, name_tok)
            return []
        return [StmtNode(self.statement(scope, label))]

    def statement(self, scope: _Scope, label: str) -> Statement:
        arr_tok = self.expect_name()
        indices = []
        while self.peek().kind == "[":
            self.next()
            indices.append(self.affine(scope))
            self.expect("]")
        if not indices:
            raise ParseError(f"expected subscripts on {arr_tok.text!r}",
                             arr_tok.line, arr_tok.col)
        t = self.next()
        if t.kind == "=":
            op = "="
        elif t.kind == "+=":
            op = "+="
        else:
            raise ParseError("expected '=' or '+='", t.line, t.col)
        expr = self.value_expr(scope)
        self.expect(";")
        target = Access(arr_tok.text, tuple(indices), "write")
        return Statement(label, target, op, expr)

    # -- affine expressions (bounds, subscripts) ------------------------------

    def affine(self, scope: _Scope) -> AffineExpr:
        expr = self.affine_term(scope)
        while self.peek().kind in ("+", "-"):
            op = self.next().kind
            t = self.affine_term(scope)
            expr = expr + t if op == "+" else expr - t
        return expr

    def affine_term(self, scope: _Scope) -> AffineExpr:
        left = self.affine_factor(scope)
        while self.peek().kind == "*":
            star = self.next()
            right = self.affine_factor(scope)
            if left.is_constant():
                left = right * left.const
            elif right.is_constant():
                left = left * right.const
            else:
                raise NonAffineError(
                    "non-affine index: product of two non-constant expressions",
                    star.line, star.col)
        return left

    def affine_factor(self, scope: _Scope) -> AffineExpr:
        t = self.next()
        if t.kind == "-":
            return -self.affine_factor(scope)
        if t.kind == "+":
            return self.affine_factor(scope)
        if t.kind == "int":
            return AffineExpr(const=int(t.text))
        if t.kind == "(":
            inner = self.affine(scope)
            self.expect(")")
            return inner
        if t.kind == "name":
            if t.text in _KEYWORDS:
                raise ParseError(f"keyword {t.text!r} in expression", t.line, t.col)
            value = scope.lookup(t.text)
            if value is None:
                raise ParseError(f"undeclared identifier {t.text!r}", t.line, t.col)
            return value
        raise ParseError(f"expected affine expression, found {t.text!r}",
                         t.line, t.col)

    # -- scalar value expressions ---------------------------------------------

    def value_expr(self, scope: _Scope):
        expr = self.value_term(scope)
        while self.peek().kind in ("+", "-"):
            op = self.next().kind
            expr = BinOp(op, expr, self.value_term(scope))
        return expr

    def value_term(self, scope: _Scope):
        expr = self.value_factor(scope)
        while self.peek().kind in ("*", "/"):
            op = self.next().kind
            expr = BinOp(op, expr, self.value_factor(scope))
        return expr

    def value_factor(self, scope: _Scope):
        t = self.next()
        if t.kind == "-":
            inner = self.value_factor(scope)
            if isinstance(inner, Num):
                return Num(-inner.value)
            return Neg(inner)
        if t.kind in ("int", "float"):
            return Num(float(t.text))
        if t.kind == "(":
            inner = self.value_expr(scope)
            self.expect(")")
            return inner
        if t.kind == "name" and t.text in ("min", "max"):
            fn = t.text
            self.expect("(")
            args = [self.value_expr(scope)]
            while self.peek().kind == ",":
                self.next()
                args.append(self.value_expr(scope))
            self.expect(")")
            return Call(fn, tuple(args))
        if t.kind == "name":
            if t.text in _KEYWORDS:
                raise ParseError(f"keyword {t.text!r} in expression", t.line, t.col)
            if self.peek().kind != "[":
                raise ParseError(
                    f"scalar operand {t.text!r}: only array references and "
                    "numeric literals are allowed", t.line, t.col)
            indices = []
            while self.peek().kind == "[":
                self.next()
                indices.append(self.affine(scope))
                self.expect("]")
            return Access(t.text, tuple(indices), "read")
        raise ParseError(f"expected expression, found {t.text!r}", t.line, t.col)


def _merge_arrays(nests: Sequence[LoopNest]):
    merged: dict[str, tuple[AffineExpr, ...]] = {}
    for n in nests:
        for name, dims in n.arrays:
            if name in merged:
                if len(merged[name]) != len(dims):
                    raise ParseError(f"array {name!r} used with inconsistent rank")
                merged[name] = tuple(
                    a if a == b else _interval_max(a, b)
                    for a, b in zip(merged[name], dims))
            else:
                merged[name] = dims
    return tuple(merged.items())


def _interval_max(a: AffineExpr, b: AffineExpr) -> AffineExpr:
    # Extents only size simulation buffers; a sound over-approximation is fine.
    return a if (a - b).const >= 0 and not (a - b).coeffs else (
        b if (b - a).const >= 0 and not (b - a).coeffs else a + b)


def _infer_arrays(nest: LoopNest, declared: dict) -> dict:
    """Check declared ranks and infer missing extents from subscript ranges."""
    bounds: dict[str, list[AffineExpr]] = {}

    def visit(nodes, env: dict[str, tuple[AffineExpr, AffineExpr]]):
        for n in nodes:
            if isinstance(n, LoopNode):
                lo = _interval_sub(n.loop.lower, env, want_max=False)
                hi = _interval_sub(n.loop.upper[0] - 1, env, want_max=True)
                visit(n.body, {**env, n.loop.iterator: (lo, hi)})
            elif isinstance(n, KernelRegion):
                visit(n.body, env)
            elif isinstance(n, StmtNode):
                for acc in (n.stmt.target, *n.stmt.read_accesses()):
                    dims = bounds.setdefault(acc.array, [])
                    for d, idx in enumerate(acc.indices):
                        hi = _interval_sub(idx, env, want_max=True)
                        while len(dims) <= d:
                            dims.append(AffineExpr(const=0))
                        dims[d] = _interval_max(dims[d], hi + 1)
                    if acc.array in declared and len(declared[acc.array]) != len(acc.indices):
                        raise ParseError(
                            f"array {acc.array!r} has rank {len(declared[acc.array])}, "
                            f"subscripted with {len(acc.indices)} indices")

    body = nest.body
    if nest.microkernel is not None:
        body = map_body(body, lambda n: KernelRegion(
            n.name, n.args, nest.microkernel.body) if isinstance(n, KernelCall) else n)
    visit(body, {})
    out = dict(declared)
    for name, dims in bounds.items():
        if name not in out:
            out[name] = tuple(dims)
    return out


def _interval_sub(e: AffineExpr, env, want_max: bool) -> AffineExpr:
    out = AffineExpr(const=e.const)
    for n, c in e.coeffs.items():
        if n in env:
            lo, hi = env[n]
            pick = hi if (c > 0) == want_max else lo
            out = out + pick * c
        else:
            out = out + AffineExpr({n: c})  # parameter
    return out


def parse_program(text: str) -> Program:
    return _Parser(text).program()


def parse(text: str, name: str | None = None) -> LoopNest:
    prog = parse_program(text)
    if len(prog.nests) != 1:
        raise ParseError(f"expected one loop nest, found {len(prog.nests)}")
    nest = prog.nests[0]
    if name is not None and re.fullmatch(r"op\d+", nest.name):
        nest = replace(nest, name=name)
    return nest


# ---------------------------------------------------------------------------
# Microkernel substitution
# ---------------------------------------------------------------------------


def substitute_microkernel(nest: LoopNest) -> LoopNest:
    """Inline the pragma's loop-equivalent body, marking the band."""
    if nest.microkernel is None or not nest.has_kernel_call():
        if nest.microkernel is None:
            warnings.warn(f"nest {nest.name!r} has no microkernel pragma")
        return nest
    spec = nest.microkernel

    def swap(n):
        if isinstance(n, KernelCall) and n.name == spec.name:
            return KernelRegion(spec.name, spec.args, spec.body)
        return n

    return replace(nest, body=map_body(nest.body, swap))


def reinstate_microkernel(nest: LoopNest) -> LoopNest:
    """Replace the marked band with the opaque call again.

    Refuses when the band was disturbed (it must still equal the spec body
    and sit innermost)."""
    if nest.microkernel is None:
        raise LoopDslError(f"nest {nest.name!r} has no microkernel spec")
    spec = nest.microkernel
    regions = list(_find_nodes(nest.body, KernelRegion))
    if not regions:
        raise LoopDslError(f"nest {nest.name!r} has no marked band to reinstate")
    for region in regions:
        if region.body != spec.body:
            raise LoopDslError(
                "microkernel band was modified; refusing to reinstate")

    def swap(n):
        if isinstance(n, KernelRegion) and n.name == spec.name:
            return KernelCall(spec.name, spec.args)
        return n

    return replace(nest, body=map_body(nest.body, swap))


# ---------------------------------------------------------------------------
# Polyhedral extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RefInfo:
    ref_id: str
    stmt_label: str
    array: str
    kind: str  # "read" | "write"
    relation: IntRelation  # statement space -> array space
    index_exprs: tuple[AffineExpr, ...]  # subscripts over the space variables


@dataclass(frozen=True)
class StmtInfo:
    label: str
    space: IntSet
    sched_terms: tuple[AffineExpr, ...]  # interleaved positions and counters
    reads: tuple[RefInfo, ...]
    writes: tuple[RefInfo, ...]
    parallel_iters: tuple[str, ...]  # space vars of enclosing parallel loops
    loop_iters: tuple[str, ...]

    def refs(self) -> tuple[RefInfo, ...]:
        return self.reads + self.writes


@dataclass(frozen=True)
class PolyInfo:
    nest: LoopNest
    statements: tuple[StmtInfo, ...]

    def statement(self, label: str) -> StmtInfo:
        for s in self.statements:
            if s.label == label:
                return s
        raise KeyError(label)

    def iteration_space(self) -> IntSet:
        """Union space when the nest has a single statement."""
        if len(self.statements) == 1:
            return self.statements[0].space
        raise LoopDslError("nest has multiple statements; use per-statement spaces")

    def all_refs(self) -> list[RefInfo]:
        return [r for s in self.statements for r in s.refs()]


def extract_polyhedral(nest: LoopNest) -> PolyInfo:
    """Iteration spaces, per-reference access relations and schedules.

    Loops with non-unit step are normalized: the space variable is the trip
    counter and the source-level iterator value is folded into subscripts
    and bounds, keeping everything affine.
    """
    if nest.has_kernel_call():
        raise LoopDslError(
            f"nest {nest.name!r} still has an opaque kernel call; "
            "run substitute_microkernel first")
    params = nest.params
    statements: list[StmtInfo] = []
    auto = [0]

    def visit(nodes, env, ineqs, space_vars, terms, par_iters):
        for pos, n in enumerate(nodes):
            if isinstance(n, LoopNode):
                lp = n.loop
                it = lp.iterator
                lo = lp.lower.substitute(env)
                ups = [u.substitute(env) for u in lp.upper]
                v = AffineExpr.var(it)
                if lp.step == 1:
                    value = v
                    lower_c = [value - lo]
                else:
                    value = lo + lp.step * v
                    lower_c = [v]
                new_ineqs = ineqs + lower_c + [u - value - 1 for u in ups]
                visit(n.body, {**env, it: value}, new_ineqs,
                      space_vars + [it],
                      terms + [AffineExpr(const=pos), v],
                      par_iters + ([it] if lp.parallel else []))
            elif isinstance(n, KernelRegion):
                visit(n.body, env, ineqs, space_vars,
                      terms + [AffineExpr(const=pos)], par_iters)
            elif isinstance(n, StmtNode):
                stmt = n.stmt
                label = stmt.label or f"S{auto[0]}"
                auto[0] += 1
                space = IntSet.from_constraints(label, space_vars,
                                                ineqs=ineqs, params=params)
                if not space.disjuncts:
                    continue  # statically empty iteration space
                guard = space.disjuncts[0]
                reads = []
                for k, acc in enumerate(stmt.read_accesses()):
                    exprs = tuple(ix.substitute(env) for ix in acc.indices)
                    rel = IntRelation.from_exprs(label, space_vars, acc.array,
                                                 exprs, params, guard)
                    reads.append(RefInfo(f"{label}:r{k}", label, acc.array,
                                         "read", rel, exprs))
                wexprs = tuple(ix.substitute(env) for ix in stmt.target.indices)
                wrel = IntRelation.from_exprs(label, space_vars, stmt.target.array,
                                              wexprs, params, guard)
                writes = (RefInfo(f"{label}:w0", label, stmt.target.array,
                                  "write", wrel, wexprs),)
                statements.append(StmtInfo(
                    label, space, tuple(terms + [AffineExpr(const=pos)]),
                    tuple(reads), writes, tuple(par_iters), tuple(space_vars)))

    visit(nest.body, {}, [], [], [], [])
    if not statements:
        raise LoopDslError(f"nest {nest.name!r} has no statements")
    labels = [s.label for s in statements]
    if len(set(labels)) != len(labels):
        raise LoopDslError(f"duplicate statement labels in {nest.name!r}")
    return PolyInfo(nest, tuple(statements))


def schedule_vector(info_stmt: StmtInfo, point: Sequence[int]) -> tuple[int, ...]:
    """Concrete 2d+1 schedule vector of one iteration of a statement."""
    env = dict(zip(info_stmt.loop_iters, point))
    return tuple(t.evaluate(env) for t in info_stmt.sched_terms)


# ---------------------------------------------------------------------------
# Pretty printer and JSON dump
# ---------------------------------------------------------------------------


def _render_expr(expr, prec: int = 0) -> str:
    if isinstance(expr, Num):
        v = expr.value
        return str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)
    if isinstance(expr, Neg):
        return f"-{_render_expr(expr.operand, 3)}"
    if isinstance(expr, Access):
        idx = "".join(f"[{ix.render(star=True)}]" for ix in expr.indices)
        return f"{expr.array}{idx}"
    if isinstance(expr, Call):
        return f"{expr.fn}({', '.join(_render_expr(a) for a in expr.args)})"
    if isinstance(expr, BinOp):
        mine = 1 if expr.op in "+-" else 2
        s = (f"{_render_expr(expr.left, mine)} {expr.op} "
             f"{_render_expr(expr.right, mine + 1)}")
        return f"({s})" if mine < prec else s
    raise TypeError(f"unknown expression node {expr!r}")


def _render_upper(upper: tuple[AffineExpr, ...]) -> str:
    if len(upper) == 1:
        return upper[0].render(star=True)
    return f"min({', '.join(u.render(star=True) for u in upper)})"


def pretty(nest: LoopNest) -> str:
    out: list[str] = []
    if nest.params:
        out.append(f"param {', '.join(nest.params)};")
    for name, dims in nest.arrays:
        out.append(f"array {name}{''.join(f'[{d.render(star=True)}]' for d in dims)};")
    if out:
        out.append("")

    def emit(nodes, depth):
        pad = "  " * depth
        for n in nodes:
            if isinstance(n, LoopNode):
                lp = n.loop
                inc = f"{lp.iterator}++" if lp.step == 1 else f"{lp.iterator} += {lp.step}"
                head = (f"for ({lp.iterator} = {lp.lower.render(star=True)}; "
                        f"{lp.iterator} < {_render_upper(lp.upper)}; {inc}) {{")
                if lp.parallel:
                    out.append(f"{pad}parallel {head}")
                else:
                    out.append(f"{pad}{head}")
                emit(n.body, depth + 1)
                out.append(f"{pad}}}")
            elif isinstance(n, (KernelRegion, KernelCall)):
                out.append(f"{pad}#pragma microkernel {n.name}({', '.join(n.args)})")
                body = n.body if isinstance(n, KernelRegion) else (
                    nest.microkernel.body if nest.microkernel else ())
                out.append(f"{pad}{{")
                emit(body, depth + 1)
                out.append(f"{pad}}}")
            elif isinstance(n, StmtNode):
                s = n.stmt
                label = f"{s.label}: " if s.label else ""
                tgt = _render_expr(replace(s.target, kind="read"))
                out.append(f"{pad}{label}{tgt} {s.op} {_render_expr(s.expr)};")

    start = len(out)
    emit(nest.body, 0)
    out[start] = f"{nest.name}: {out[start]}"
    return "\n".join(out) + "\n"


def pretty_program(prog: Program) -> str:
    head: list[str] = []
    if prog.params:
        head.append(f"param {', '.join(prog.params)};")
    for name, dims in prog.arrays:
        head.append(f"array {name}{''.join(f'[{d.render(star=True)}]' for d in dims)};")
    chunks = ["\n".join(head) + "\n"] if head else []
    for nest in prog.nests:
        bare = replace(nest, params=(), arrays=())
        chunks.append(pretty(bare))
    return "\n".join(chunks)


def to_json(nest: LoopNest) -> dict:
    def node_json(n):
        if isinstance(n, LoopNode):
            lp = n.loop
            return {"kind": "loop", "iterator": lp.iterator,
                    "lower": lp.lower.render(star=True),
                    "upper": [u.render(star=True) for u in lp.upper],
                    "step": lp.step, "parallel": lp.parallel,
                    "body": [node_json(c) for c in n.body]}
        if isinstance(n, KernelRegion):
            return {"kind": "kernel_region", "name": n.name, "args": list(n.args),
                    "body": [node_json(c) for c in n.body]}
        if isinstance(n, KernelCall):
            return {"kind": "kernel_call", "name": n.name, "args": list(n.args)}
        s = n.stmt
        return {"kind": "statement", "label": s.label, "op": s.op,
                "accesses": [
                    {"array": a.array, "kind": a.kind,
                     "indices": [ix.render(star=True) for ix in a.indices]}
                    for a in (s.target, *s.read_accesses())],
                "expr": _render_expr(s.expr)}

    mk = None
    if nest.microkernel is not None:
        mk = {"name": nest.microkernel.name,
              "args": list(nest.microkernel.args),
              "body": [node_json(n) for n in nest.microkernel.body]}
    loops = [{"iterator": l.iterator, "step": l.step, "parallel": l.parallel}
             for l in nest.loops()]
    stmts = [{"label": s.label or f"S{i}"} for i, s in enumerate(nest.statements())]
    return {"version": 1, "name": nest.name, "params": list(nest.params),
            "arrays": {name: [d.render(star=True) for d in dims] for name, dims in nest.arrays},
            "loops": loops, "statements": stmts,
            "body": [node_json(n) for n in nest.body], "microkernel": mk}


def dump_json(nest: LoopNest) -> str:
    return json.dumps(to_json(nest), indent=2, sort_keys=True)
