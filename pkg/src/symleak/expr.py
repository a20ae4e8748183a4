"""Fixed-width bitvector expressions with hash consing.

Every node is immutable and interned: structurally equal expressions are
the same Python object, so identity comparison, memoised traversal and
set membership are all cheap.  Smart constructors apply local
simplifications only (constant folding, x == x, masking identities);
they deliberately do no interval or solver reasoning, which belongs to
the cache model where it can be switched on and off.

Widths are in bits.  All arithmetic is unsigned and wraps modulo 2**w.
Comparisons produce width-1 values, and the usual bitwise operators
double as boolean connectives at width 1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Op(enum.Enum):
    CONST = "const"
    VAR = "var"
    ADD = "add"
    SUB = "sub"
    AND = "and"
    OR = "or"
    XOR = "xor"
    SHL = "shl"
    LSHR = "lshr"
    MULC = "mulc"
    EQ = "eq"
    NE = "ne"
    ULT = "ult"
    ULE = "ule"
    ITE = "ite"
    ZEXT = "zext"
    EXTRACT = "extract"


_COMMUTATIVE = {Op.ADD, Op.AND, Op.OR, Op.XOR, Op.EQ, Op.NE}


@dataclass(frozen=True, eq=False)
class Expr:
    """One interned DAG node.  Do not construct directly; use the builders."""

    op: Op
    width: int
    args: tuple["Expr", ...] = ()
    # CONST value, MULC factor or EXTRACT low bit; unused otherwise.
    value: int | None = None
    name: str | None = None
    # Creation serial; stable within a process, used for canonical ordering.
    serial: int = field(default=0, compare=False)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        if self.op is Op.CONST:
            return f"{self.value}:{self.width}"
        if self.op is Op.VAR:
            return f"{self.name}:{self.width}"
        extra = f" {self.value}" if self.value is not None else ""
        return f"({self.op.value}{extra} " + " ".join(map(repr, self.args)) + ")"

    @property
    def is_const(self) -> bool:
        return self.op is Op.CONST


_table: dict[tuple, Expr] = {}
_serial = 0


def _intern(op: Op, width: int, args: tuple[Expr, ...] = (),
            value: int | None = None, name: str | None = None) -> Expr:
    global _serial
    key = (op, width, value, name, tuple(id(a) for a in args))
    node = _table.get(key)
    if node is None:
        _serial += 1
        node = Expr(op, width, args, value, name, _serial)
        _table[key] = node
    return node


def const(value: int, width: int) -> Expr:
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    return _intern(Op.CONST, width, value=value & ((1 << width) - 1))


def var(name: str, width: int) -> Expr:
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    return _intern(Op.VAR, width, name=name)


TRUE = None  # populated below, after const() exists
FALSE = None


def _mask(width: int) -> int:
    return (1 << width) - 1


def _require_same_width(a: Expr, b: Expr, what: str) -> None:
    if a.width != b.width:
        raise ValueError(f"{what}: width mismatch {a.width} vs {b.width}")


def _binary(op: Op, a: Expr, b: Expr) -> Expr:
    if op in _COMMUTATIVE and b.serial < a.serial:
        a, b = b, a
    return _intern(op, a.width, (a, b))


def add(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "add")
    if a.is_const and b.is_const:
        return const(a.value + b.value, a.width)
    if a.is_const and a.value == 0:
        return b
    if b.is_const and b.value == 0:
        return a
    return _binary(Op.ADD, a, b)


def sub(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "sub")
    if a.is_const and b.is_const:
        return const(a.value - b.value, a.width)
    if b.is_const and b.value == 0:
        return a
    if a is b:
        return const(0, a.width)
    return _intern(Op.SUB, a.width, (a, b))


def and_(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "and")
    if a.is_const and b.is_const:
        return const(a.value & b.value, a.width)
    for x, y in ((a, b), (b, a)):
        if x.is_const:
            if x.value == 0:
                return const(0, y.width)
            if x.value == _mask(y.width):
                return y
    if a is b:
        return a
    return _binary(Op.AND, a, b)


def or_(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "or")
    if a.is_const and b.is_const:
        return const(a.value | b.value, a.width)
    for x, y in ((a, b), (b, a)):
        if x.is_const:
            if x.value == 0:
                return y
            if x.value == _mask(y.width):
                return x
    if a is b:
        return a
    return _binary(Op.OR, a, b)


def xor(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "xor")
    if a.is_const and b.is_const:
        return const(a.value ^ b.value, a.width)
    for x, y in ((a, b), (b, a)):
        if x.is_const and x.value == 0:
            return y
    if a is b:
        return const(0, a.width)
    return _binary(Op.XOR, a, b)


def not_(a: Expr) -> Expr:
    if a.width != 1:
        raise ValueError("not_ requires a width-1 operand")
    return xor(a, const(1, 1))


def shl(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "shl")
    if b.is_const:
        if b.value == 0:
            return a
        if b.value >= a.width:
            return const(0, a.width)
        if a.is_const:
            return const(a.value << b.value, a.width)
    return _intern(Op.SHL, a.width, (a, b))


def lshr(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "lshr")
    if b.is_const:
        if b.value == 0:
            return a
        if b.value >= a.width:
            return const(0, a.width)
        if a.is_const:
            return const(a.value >> b.value, a.width)
    return _intern(Op.LSHR, a.width, (a, b))


def mulc(a: Expr, factor: int) -> Expr:
    """Multiply by a non-negative constant factor."""
    if factor < 0:
        raise ValueError("mulc factor must be non-negative")
    if factor == 0:
        return const(0, a.width)
    if factor == 1:
        return a
    if a.is_const:
        return const(a.value * factor, a.width)
    return _intern(Op.MULC, a.width, (a,), value=factor)


def eq(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "eq")
    if a.is_const and b.is_const:
        return const(int(a.value == b.value), 1)
    if a is b:
        return const(1, 1)
    if b.serial < a.serial:
        a, b = b, a
    return _intern(Op.EQ, 1, (a, b))


def ne(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "ne")
    if a.is_const and b.is_const:
        return const(int(a.value != b.value), 1)
    if a is b:
        return const(0, 1)
    if b.serial < a.serial:
        a, b = b, a
    return _intern(Op.NE, 1, (a, b))


def ult(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "ult")
    if a.is_const and b.is_const:
        return const(int(a.value < b.value), 1)
    if a is b:
        return const(0, 1)
    if b.is_const and b.value == 0:
        return const(0, 1)
    return _intern(Op.ULT, 1, (a, b))


def ule(a: Expr, b: Expr) -> Expr:
    _require_same_width(a, b, "ule")
    if a.is_const and b.is_const:
        return const(int(a.value <= b.value), 1)
    if a is b:
        return const(1, 1)
    if b.is_const and b.value == _mask(b.width):
        return const(1, 1)
    return _intern(Op.ULE, 1, (a, b))


def ite(c: Expr, t: Expr, f: Expr) -> Expr:
    if c.width != 1:
        raise ValueError("ite condition must have width 1")
    _require_same_width(t, f, "ite")
    if c.is_const:
        return t if c.value else f
    if t is f:
        return t
    return _intern(Op.ITE, t.width, (c, t, f))


def zext(a: Expr, width: int) -> Expr:
    if width < a.width:
        raise ValueError(f"zext target {width} narrower than operand {a.width}")
    if width == a.width:
        return a
    if a.is_const:
        return const(a.value, width)
    if a.op is Op.ZEXT:
        return zext(a.args[0], width)
    return _intern(Op.ZEXT, width, (a,))


def extract(a: Expr, lo: int, width: int) -> Expr:
    if lo < 0 or width <= 0 or lo + width > a.width:
        raise ValueError(f"extract [{lo}, {lo + width}) out of range for width {a.width}")
    if lo == 0 and width == a.width:
        return a
    if a.is_const:
        return const(a.value >> lo, width)
    if a.op is Op.ZEXT and lo == 0:
        inner = a.args[0]
        if width == inner.width:
            return inner
        if width > inner.width:
            return zext(inner, width)
    return _intern(Op.EXTRACT, width, (a,), value=lo)


def conj(terms: list[Expr]) -> Expr:
    """Conjunction of width-1 terms; the empty conjunction is true."""
    out = const(1, 1)
    for t in terms:
        out = and_(out, t)
    return out


def disj(terms: list[Expr]) -> Expr:
    """Disjunction of width-1 terms; the empty disjunction is false."""
    out = const(0, 1)
    for t in terms:
        out = or_(out, t)
    return out


def evaluate(e: Expr, env: dict[str, int], _memo: dict[Expr, int] | None = None) -> int:
    """Evaluate under a complete valuation of the free variables."""
    memo: dict[Expr, int] = {} if _memo is None else _memo
    # Iterative post-order so deep or-chains cannot hit the recursion limit.
    stack = [e]
    while stack:
        node = stack[-1]
        if node in memo:
            stack.pop()
            continue
        pending = [a for a in node.args if a not in memo]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        memo[node] = _eval_node(node, env, memo)
    return memo[e]


def _eval_node(e: Expr, env: dict[str, int], memo: dict[Expr, int]) -> int:
    m = _mask(e.width)
    op = e.op
    if op is Op.CONST:
        return e.value
    if op is Op.VAR:
        try:
            return env[e.name] & m
        except KeyError:
            raise KeyError(f"no value for variable {e.name!r}") from None
    a = memo[e.args[0]]
    if op is Op.ZEXT:
        return a
    if op is Op.EXTRACT:
        return (a >> e.value) & m
    if op is Op.MULC:
        return (a * e.value) & m
    if op is Op.ITE:
        return memo[e.args[1]] if a else memo[e.args[2]]
    b = memo[e.args[1]]
    if op is Op.ADD:
        return (a + b) & m
    if op is Op.SUB:
        return (a - b) & m
    if op is Op.AND:
        return a & b
    if op is Op.OR:
        return a | b
    if op is Op.XOR:
        return a ^ b
    if op is Op.SHL:
        return (a << b) & m if b < e.width else 0
    if op is Op.LSHR:
        return (a >> b) & m if b < e.width else 0
    if op is Op.EQ:
        return int(a == b)
    if op is Op.NE:
        return int(a != b)
    if op is Op.ULT:
        return int(a < b)
    if op is Op.ULE:
        return int(a <= b)
    raise AssertionError(f"unhandled op {op}")


def free_vars(e: Expr) -> frozenset[str]:
    """Names of all variables reachable from e."""
    seen: set[Expr] = set()
    names: set[str] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if node.op is Op.VAR:
            names.add(node.name)
        stack.extend(node.args)
    return frozenset(names)


def var_widths(e: Expr) -> dict[str, int]:
    """Width of every free variable in e."""
    seen: set[Expr] = set()
    widths: dict[str, int] = {}
    stack = [e]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        if node.op is Op.VAR:
            widths[node.name] = node.width
        stack.extend(node.args)
    return widths


def substitute(e: Expr, env: dict[str, Expr]) -> Expr:
    """Replace free variables by expressions, rebuilding through the folders."""
    memo: dict[Expr, Expr] = {}
    stack = [e]
    while stack:
        node = stack[-1]
        if node in memo:
            stack.pop()
            continue
        pending = [a for a in node.args if a not in memo]
        if pending:
            stack.extend(pending)
            continue
        stack.pop()
        memo[node] = _subst_node(node, env, memo)
    return memo[e]


def _subst_node(e: Expr, env: dict[str, Expr], memo: dict[Expr, Expr]) -> Expr:
    op = e.op
    if op is Op.CONST:
        return e
    if op is Op.VAR:
        repl = env.get(e.name)
        if repl is None:
            return e
        if repl.width != e.width:
            raise ValueError(f"substitute {e.name!r}: width {repl.width} != {e.width}")
        return repl
    args = tuple(memo[a] for a in e.args)
    if args == e.args:
        return e
    if op is Op.ADD:
        return add(*args)
    if op is Op.SUB:
        return sub(*args)
    if op is Op.AND:
        return and_(*args)
    if op is Op.OR:
        return or_(*args)
    if op is Op.XOR:
        return xor(*args)
    if op is Op.SHL:
        return shl(*args)
    if op is Op.LSHR:
        return lshr(*args)
    if op is Op.MULC:
        return mulc(args[0], e.value)
    if op is Op.EQ:
        return eq(*args)
    if op is Op.NE:
        return ne(*args)
    if op is Op.ULT:
        return ult(*args)
    if op is Op.ULE:
        return ule(*args)
    if op is Op.ITE:
        return ite(*args)
    if op is Op.ZEXT:
        return zext(args[0], e.width)
    if op is Op.EXTRACT:
        return extract(args[0], e.value, e.width)
    raise AssertionError(f"unhandled op {op}")


TRUE = const(1, 1)
FALSE = const(0, 1)
