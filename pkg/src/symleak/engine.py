"""Symbolic execution of a concurrent program, one memory access at a time.

The stepping model splits statements into three classes.  Register
assignments are invisible to other threads and run automatically until
every thread sits at a branch, a memory access or its end.  Branches
split the path: each arm contributes its condition to the path
constraint.  Loads and stores are the only scheduling points; when all
live threads sit at one, the caller picks which thread's access runs
next, and that choice is what the interleaving search enumerates.

States are immutable.  Stepping functions return new states that share
structure with the old one, so a depth-first search can keep many open
states without copying register files.

Loads resolve their value in this order: the most recent store to the
same concrete cell, then the declaration's initial contents, then a
fresh unconstrained variable standing for whatever the cell held.  A
fresh variable read out of secret-typed memory is itself treated as a
secret downstream.  Symbolic-index stores clobber the whole array:
later reads that may touch it become fresh variables too.  Reads past
the end of an initialised array clamp to its last element.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import expr as ex
from .cache import ADDR_WIDTH, AccessRecord, CacheConfig, Site, Trace, probe_window
from .errors import UnrollError
from .expr import Expr
from .ir import (
    Assign,
    BinOp,
    Declaration,
    Fixed,
    For,
    If,
    IRExpr,
    Load,
    Name,
    Num,
    Program,
    Sensitivity,
    Stmt,
    Store,
    SymbolicBase,
)

MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class Frame:
    body: tuple[Stmt, ...]
    at: int


# A cursor is a stack of frames; empty means the thread finished.
Cursor = tuple[Frame, ...]


@dataclass(frozen=True)
class StoreEntry:
    """One store in program order.  ``cell`` is the concrete element index
    when the store's index folded to a constant, else None (a clobber)."""

    decl: str
    index: Expr
    value: Expr
    cell: int | None


@dataclass(frozen=True)
class AccessEvent:
    """A memory access that is ready to run: address and value are already
    evaluated in the issuing thread's registers."""

    tid: int
    kind: str  # "load" | "store"
    decl: Declaration
    addr: Expr
    value: Expr | None
    stmt: Stmt
    site: Site


@dataclass(frozen=True)
class BranchEvent:
    tid: int
    cond: Expr  # width 1, true-arm condition
    stmt: If


@dataclass(frozen=True)
class SymbolicState:
    program: Program
    cfg: CacheConfig
    # Register files by thread position.  Treated as copy-on-write: never
    # mutate a dict reachable from a state.
    regs: tuple[dict[str, Expr], ...]
    cursors: tuple[Cursor, ...]
    pcon: Expr
    stores: tuple[StoreEntry, ...]
    trace: Trace
    # First-touch names for cells read before any write: (decl, cell, var).
    init_cells: tuple[tuple[str, int, str], ...]
    fresh_secret: tuple[str, ...]
    fresh_public: tuple[str, ...]
    branch_path: tuple[bool, ...]

    @property
    def finished(self) -> bool:
        return all(not c for c in self.cursors)

    def thread_pos(self, tid: int) -> int:
        for i, t in enumerate(self.program.threads):
            if t.tid == tid:
                return i
        raise KeyError(f"no thread {tid}")


def _normalize(cursor: Cursor) -> Cursor:
    while cursor and cursor[-1].at >= len(cursor[-1].body):
        cursor = cursor[:-1]
    return cursor


def _current(cursor: Cursor) -> Stmt | None:
    return cursor[-1].body[cursor[-1].at] if cursor else None


def _step_over(cursor: Cursor) -> Cursor:
    top = cursor[-1]
    return _normalize(cursor[:-1] + (Frame(top.body, top.at + 1),))


def _enter(cursor: Cursor, body: tuple[Stmt, ...]) -> Cursor:
    return _normalize(_step_over(cursor) + (Frame(body, 0),)) if body else _step_over(cursor)


def lower(e: IRExpr, env: dict[str, Expr]) -> Expr:
    """Translate a source expression to a 32-bit term over ``env``."""
    if isinstance(e, Num):
        return ex.const(e.value & MASK32, 32)
    if isinstance(e, Name):
        try:
            return env[e.ident]
        except KeyError:
            raise KeyError(f"unbound name {e.ident!r}") from None
    assert isinstance(e, BinOp)
    a = lower(e.lhs, env)
    b = lower(e.rhs, env)
    if e.op == "+":
        return ex.add(a, b)
    if e.op == "-":
        return ex.sub(a, b)
    if e.op == "&":
        return ex.and_(a, b)
    if e.op == "|":
        return ex.or_(a, b)
    if e.op == "^":
        return ex.xor(a, b)
    if e.op == "<<":
        return ex.shl(a, b)
    if e.op == ">>":
        return ex.lshr(a, b)
    # Comparisons yield 0 or 1 as a full-width value, like C.
    if e.op == "==":
        return ex.zext(ex.eq(a, b), 32)
    if e.op == "!=":
        return ex.zext(ex.ne(a, b), 32)
    if e.op == "<":
        return ex.zext(ex.ult(a, b), 32)
    if e.op == "<=":
        return ex.zext(ex.ule(a, b), 32)
    raise ValueError(f"unknown operator {e.op!r}")


def _base_expr(d: Declaration) -> Expr:
    if isinstance(d.placement, Fixed):
        return ex.const(d.placement.base & MASK32, ADDR_WIDTH)
    assert isinstance(d.placement, SymbolicBase)
    return ex.var(d.placement.var, ADDR_WIDTH)


def _address(d: Declaration, index: Expr) -> Expr:
    return ex.add(_base_expr(d), ex.mulc(index, d.elem_size))


def _truncate(value: Expr, elem_size: int) -> Expr:
    if elem_size >= 4:
        return value
    return ex.zext(ex.extract(value, 0, 8 * elem_size), 32)


def initial_state(p: Program, cfg: CacheConfig) -> SymbolicState:
    """Bind inputs, point every thread at its body, assume placement
    constraints for symbolically based declarations, then run the leading
    register assignments."""
    inputs: dict[str, Expr] = {}
    for s in p.secret_inputs:
        v = ex.var(s.name, s.width)
        inputs[s.name] = ex.zext(v, 32)
    for q in p.public_inputs:
        inputs[q.name] = ex.const(q.value & MASK32, 32)

    pcon = ex.TRUE
    for d in p.decls:
        if isinstance(d.placement, SymbolicBase):
            base = ex.var(d.placement.var, ADDR_WIDTH)
            if d.elem_size > 1:
                aligned = ex.eq(ex.and_(base, ex.const(d.elem_size - 1, ADDR_WIDTH)),
                                ex.const(0, ADDR_WIDTH))
                pcon = ex.and_(pcon, aligned)
            window = ex.ult(base, ex.const(probe_window(cfg), ADDR_WIDTH))
            pcon = ex.and_(pcon, window)

    regs = tuple(dict(inputs) for _ in p.threads)
    cursors = tuple(_normalize((Frame(t.body, 0),)) for t in p.threads)
    st = SymbolicState(
        program=p,
        cfg=cfg,
        regs=regs,
        cursors=cursors,
        pcon=pcon,
        stores=(),
        trace=(),
        init_cells=(),
        fresh_secret=(),
        fresh_public=(),
        branch_path=(),
    )
    return advance_locals(st)


def advance_locals(st: SymbolicState) -> SymbolicState:
    """Run register assignments in every thread, lowest tid first, until
    each thread rests at a branch, an access or its end."""
    regs = list(st.regs)
    cursors = list(st.cursors)
    changed = False
    for i in range(len(cursors)):
        cur = cursors[i]
        env = regs[i]
        while True:
            s = _current(cur)
            if isinstance(s, For):
                raise UnrollError("loops must be unrolled before execution")
            if not isinstance(s, Assign):
                break
            env = {**env, s.dst: lower(s.expr, env)}
            cur = _step_over(cur)
            changed = True
        regs[i] = env
        cursors[i] = cur
    if not changed:
        return st
    return SymbolicState(
        program=st.program, cfg=st.cfg, regs=tuple(regs), cursors=tuple(cursors),
        pcon=st.pcon, stores=st.stores, trace=st.trace, init_cells=st.init_cells,
        fresh_secret=st.fresh_secret, fresh_public=st.fresh_public,
        branch_path=st.branch_path,
    )


def branch_events(st: SymbolicState) -> tuple[BranchEvent, ...]:
    out = []
    for i, t in enumerate(st.program.threads):
        s = _current(st.cursors[i])
        if isinstance(s, If):
            cond32 = lower(s.cond, st.regs[i])
            out.append(BranchEvent(t.tid, ex.ne(cond32, ex.const(0, 32)), s))
    return tuple(out)


def enabled_events(st: SymbolicState) -> tuple[AccessEvent, ...]:
    """Memory accesses ready to run, ascending tid.  Empty while some
    thread still sits at a branch."""
    if branch_events(st):
        return ()
    out = []
    for i, t in enumerate(st.program.threads):
        s = _current(st.cursors[i])
        if isinstance(s, Load):
            d = st.program.decl(s.decl)
            addr = _address(d, lower(s.index, st.regs[i]))
            out.append(AccessEvent(t.tid, "load", d, addr, None, s,
                                   Site(t.tid, s.line, "load", d.name)))
        elif isinstance(s, Store):
            d = st.program.decl(s.decl)
            addr = _address(d, lower(s.index, st.regs[i]))
            val = _truncate(lower(s.value, st.regs[i]), d.elem_size)
            out.append(AccessEvent(t.tid, "store", d, addr, val, s,
                                   Site(t.tid, s.line, "store", d.name)))
    return tuple(out)


def take_branch(st: SymbolicState, ev: BranchEvent, arm: bool) -> SymbolicState:
    """Commit one arm of a pending branch and run the locals it exposes.
    The caller is responsible for checking feasibility of the new path."""
    pos = st.thread_pos(ev.tid)
    cond = ev.cond if arm else ex.not_(ev.cond)
    body = ev.stmt.then_body if arm else ev.stmt.else_body
    cursors = list(st.cursors)
    cursors[pos] = _enter(cursors[pos], body)
    nxt = SymbolicState(
        program=st.program, cfg=st.cfg, regs=st.regs, cursors=tuple(cursors),
        pcon=ex.and_(st.pcon, cond), stores=st.stores, trace=st.trace,
        init_cells=st.init_cells, fresh_secret=st.fresh_secret,
        fresh_public=st.fresh_public, branch_path=st.branch_path + (arm,),
    )
    return advance_locals(nxt)


def _contents_value(d: Declaration, index: Expr) -> Expr:
    vals = d.contents
    mask = (1 << (8 * d.elem_size)) - 1
    if index.is_const:
        cell = index.value if index.value < d.length else d.length - 1
        return ex.const(vals[cell] & mask, 32)
    out = ex.const(vals[-1] & mask, 32)
    for i in range(d.length - 2, -1, -1):
        out = ex.ite(ex.eq(index, ex.const(i, 32)), ex.const(vals[i] & mask, 32), out)
    return out


def _load_value(st: SymbolicState, d: Declaration, index: Expr):
    """Value produced by a load, plus bookkeeping for fresh variables.

    Returns (value, init_cells, fresh_name or None).  The store log is
    scanned newest-first; a clobber or a may-alias against a symbolic
    index gives up and reads an unconstrained value.
    """
    cell = index.value if index.is_const else None
    for entry in reversed(st.stores):
        if entry.decl != d.name:
            continue
        if entry.cell is not None and cell is not None:
            if entry.cell == cell:
                return entry.value, st.init_cells, None
            continue  # definitely a different cell
        # Symbolic store index, or symbolic load index over any store:
        # the cell's content is unknown here.
        name = f"ld{len(st.trace)}_{d.name}"
        return _fresh(d, name), st.init_cells, name
    if d.contents is not None:
        return _contents_value(d, index), st.init_cells, None
    if cell is not None:
        for dn, c, name in st.init_cells:
            if dn == d.name and c == cell:
                return _fresh(d, name), st.init_cells, None
        name = f"cell_{d.name}_{cell}"
        return _fresh(d, name), st.init_cells + ((d.name, cell, name),), name
    name = f"ld{len(st.trace)}_{d.name}"
    return _fresh(d, name), st.init_cells, name


def _fresh(d: Declaration, name: str) -> Expr:
    return ex.zext(ex.var(name, 8 * d.elem_size), 32)


def perform_access(st: SymbolicState, ev: AccessEvent) -> SymbolicState:
    """Run one enabled load or store, record it in the trace, and advance
    the issuing thread through its following register assignments."""
    pos = st.thread_pos(ev.tid)
    regs = list(st.regs)
    stores = st.stores
    init_cells = st.init_cells
    fresh_secret = st.fresh_secret
    fresh_public = st.fresh_public
    rec_value: Expr | None

    if ev.kind == "load":
        assert isinstance(ev.stmt, Load)
        index = lower(ev.stmt.index, regs[pos])
        value, init_cells, fresh_name = _load_value(st, ev.decl, index)
        if fresh_name is not None and fresh_name not in fresh_secret + fresh_public:
            if ev.decl.sensitivity is Sensitivity.SECRET:
                fresh_secret = fresh_secret + (fresh_name,)
            else:
                fresh_public = fresh_public + (fresh_name,)
        regs[pos] = {**regs[pos], ev.stmt.dst: value}
        rec_value = value
    else:
        assert isinstance(ev.stmt, Store)
        index = lower(ev.stmt.index, regs[pos])
        assert ev.value is not None
        stores = stores + (StoreEntry(ev.decl.name, index, ev.value,
                                      index.value if index.is_const else None),)
        rec_value = ev.value

    record = AccessRecord(
        index=len(st.trace), tid=ev.tid, kind=ev.kind, addr=ev.addr,
        pcon=st.pcon, site=ev.site, decl=ev.decl.name, value=rec_value,
    )
    cursors = list(st.cursors)
    cursors[pos] = _step_over(cursors[pos])
    nxt = SymbolicState(
        program=st.program, cfg=st.cfg, regs=tuple(regs), cursors=tuple(cursors),
        pcon=st.pcon, stores=stores, trace=st.trace + (record,),
        init_cells=init_cells, fresh_secret=fresh_secret,
        fresh_public=fresh_public, branch_path=st.branch_path,
    )
    return advance_locals(nxt)


def feasible(st: SymbolicState, backend, timeout_ms: int | None = None) -> bool:
    """True unless the backend refutes the path constraint.  Unknown counts
    as feasible so timeouts never silence a path."""
    if st.pcon.is_const:
        return bool(st.pcon.value)
    return backend.check(st.pcon, timeout_ms=timeout_ms).status != "unsat"


def run_schedule(p: Program, cfg: CacheConfig, tids, arms=()) -> SymbolicState:
    """Drive one complete execution: take branch arms from ``arms`` (true
    when exhausted) and accesses in ``tids`` order (lowest enabled tid when
    exhausted).  Intended for tests and trace replay, not search."""
    st = initial_state(p, cfg)
    arm_iter = iter(arms)
    tid_iter = iter(tids)
    while not st.finished:
        bes = branch_events(st)
        if bes:
            st = take_branch(st, bes[0], next(arm_iter, True))
            continue
        evs = enabled_events(st)
        if not evs:
            break
        want = next(tid_iter, None)
        if want is None:
            st = perform_access(st, evs[0])
            continue
        match = [e for e in evs if e.tid == want]
        if not match:
            raise ValueError(f"thread {want} has no enabled access")
        st = perform_access(st, match[0])
    return st
