"""Program representation for the concurrent mini-IR.

A program is a set of memory declarations, secret and public inputs,
and one thread body per thread id.  Exactly one thread is the critical
thread whose accesses the adversary observes.  Statement and expression
nodes are frozen dataclasses, so parsed programs compare structurally,
which the round-trip tests rely on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Sensitivity(enum.Enum):
    SECRET = "secret"
    PUBLIC = "public"
    DERIVED = "derived"


@dataclass(frozen=True)
class Fixed:
    base: int


@dataclass(frozen=True)
class SymbolicBase:
    var: str


Placement = Fixed | SymbolicBase


@dataclass(frozen=True)
class Declaration:
    name: str
    kind: str  # "array" | "scalar"
    elem_size: int
    length: int
    placement: Placement
    sensitivity: Sensitivity = Sensitivity.DERIVED
    # Optional concrete contents, one value per element.  The grammar can
    # only express a uniform fill; richer tables are set programmatically.
    contents: tuple[int, ...] | None = None

    @property
    def byte_size(self) -> int:
        return self.elem_size * self.length

    def block_range(self, line_size: int) -> tuple[int, int] | None:
        """Inclusive block-number range, or None for a symbolic base."""
        if not isinstance(self.placement, Fixed):
            return None
        lo = self.placement.base
        hi = lo + self.byte_size - 1
        return (lo // line_size, hi // line_size)


@dataclass(frozen=True)
class SecretInput:
    name: str
    width: int


@dataclass(frozen=True)
class PublicInput:
    name: str
    width: int
    value: int


# ---------------------------------------------------------------------------
# Expressions (syntactic; resolved against registers and inputs at run time)

@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "IRExpr"
    rhs: "IRExpr"


IRExpr = Num | Name | BinOp

# Binary operators by increasing binding strength, C style: bitwise ops
# bind more loosely than comparisons, shifts more tightly than both.
PRECEDENCE: tuple[tuple[str, ...], ...] = (
    ("|",),
    ("^",),
    ("&",),
    ("==", "!="),
    ("<", "<="),
    ("<<", ">>"),
    ("+", "-"),
)


# ---------------------------------------------------------------------------
# Statements

@dataclass(frozen=True)
class Assign:
    dst: str
    expr: IRExpr
    line: int = 0


@dataclass(frozen=True)
class Load:
    dst: str
    decl: str
    index: IRExpr
    line: int = 0


@dataclass(frozen=True)
class Store:
    decl: str
    index: IRExpr
    value: IRExpr
    line: int = 0


@dataclass(frozen=True)
class If:
    cond: IRExpr
    then_body: tuple["Stmt", ...]
    else_body: tuple["Stmt", ...] = ()
    line: int = 0


@dataclass(frozen=True)
class For:
    var: str
    lo: int
    hi: int
    body: tuple["Stmt", ...]
    line: int = 0


Stmt = Assign | Load | Store | If | For


@dataclass(frozen=True)
class Thread:
    tid: int
    body: tuple[Stmt, ...]
    critical: bool = False


@dataclass(frozen=True)
class Program:
    decls: tuple[Declaration, ...]
    secret_inputs: tuple[SecretInput, ...]
    public_inputs: tuple[PublicInput, ...]
    threads: tuple[Thread, ...]
    critical_tid: int

    def decl(self, name: str) -> Declaration:
        for d in self.decls:
            if d.name == name:
                return d
        raise KeyError(name)

    def thread(self, tid: int) -> Thread:
        for t in self.threads:
            if t.tid == tid:
                return t
        raise KeyError(tid)

    @property
    def has_symbolic_base(self) -> bool:
        return any(isinstance(d.placement, SymbolicBase) for d in self.decls)

    @property
    def secret_names(self) -> frozenset[str]:
        return frozenset(s.name for s in self.secret_inputs)


# ---------------------------------------------------------------------------
# Pretty printing

_PREC_OF: dict[str, int] = {op: i for i, level in enumerate(PRECEDENCE) for op in level}


def _expr_str(e: IRExpr, parent_prec: int = -1) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Name):
        return e.ident
    prec = _PREC_OF[e.op]
    # Same-level operands associate left, so the right child needs parens.
    lhs = _expr_str(e.lhs, prec - 1)
    rhs = _expr_str(e.rhs, prec)
    text = f"{lhs} {e.op} {rhs}"
    if prec <= parent_prec:
        return f"({text})"
    return text


def _ref_str(decl_name: str, index: IRExpr, decls: dict[str, Declaration]) -> str:
    d = decls.get(decl_name)
    if d is not None and d.kind == "scalar" and index == Num(0):
        return decl_name
    return f"{decl_name}[{_expr_str(index)}]"


def _stmt_lines(s: Stmt, indent: int, decls: dict[str, Declaration]) -> list[str]:
    pad = "  " * indent
    if isinstance(s, Assign):
        return [f"{pad}{s.dst} := {_expr_str(s.expr)}"]
    if isinstance(s, Load):
        return [f"{pad}load {s.dst}, {_ref_str(s.decl, s.index, decls)}"]
    if isinstance(s, Store):
        return [f"{pad}store {_ref_str(s.decl, s.index, decls)}, {_expr_str(s.value)}"]
    if isinstance(s, If):
        out = [f"{pad}if ({_expr_str(s.cond)}) {{"]
        for inner in s.then_body:
            out.extend(_stmt_lines(inner, indent + 1, decls))
        if s.else_body:
            out.append(f"{pad}}} else {{")
            for inner in s.else_body:
                out.extend(_stmt_lines(inner, indent + 1, decls))
        out.append(f"{pad}}}")
        return out
    if isinstance(s, For):
        out = [f"{pad}for {s.var} in {s.lo}..{s.hi} {{"]
        for inner in s.body:
            out.extend(_stmt_lines(inner, indent + 1, decls))
        out.append(f"{pad}}}")
        return out
    raise AssertionError(f"unhandled statement {s!r}")


def pretty(p: Program) -> str:
    """Render a program as parseable source text."""
    decls = {d.name: d for d in p.decls}
    lines: list[str] = []
    for d in p.decls:
        head = f"array {d.name} [{d.length}]" if d.kind == "array" else f"scalar {d.name}"
        place = "symbolic" if isinstance(d.placement, SymbolicBase) else str(d.placement.base)
        item = f"{head} elem {d.elem_size} at {place}"
        if d.sensitivity is Sensitivity.SECRET:
            item += " secret"
        elif d.sensitivity is Sensitivity.PUBLIC:
            fill = d.contents[0] if d.contents else 0
            item += f" public = {fill}"
        lines.append(item)
    for s in p.secret_inputs:
        lines.append(f"input {s.name} width {s.width} secret")
    for s in p.public_inputs:
        lines.append(f"input {s.name} width {s.width} public = {s.value}")
    for t in p.threads:
        mark = " critical" if t.tid == p.critical_tid and len(p.threads) > 1 else ""
        lines.append(f"thread {t.tid}{mark} {{")
        for s in t.body:
            lines.extend(_stmt_lines(s, 1, decls))
        lines.append("}")
    return "\n".join(lines) + "\n"
