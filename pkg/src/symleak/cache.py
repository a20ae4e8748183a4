"""Cache geometry and symbolic hit/miss constraints.

An access hits when some earlier access brought the same memory block
into the cache and nothing evicted it in between.  For a direct-mapped
cache the in-between condition is simply that no intermediate access
touched the victim's line.  For a W-way LRU cache the block survives as
long as fewer than W distinct other blocks mapped to its set were
touched since it was last loaded; that count is encoded with per-pair
equality indicators and a small bitvector sum.

The module also hosts the constraint reductions.  They are switchable
because each is an engineering shortcut layered over the plain
encoding: rewriting input-independent addresses to constants, pruning
hit clauses between provably distinct blocks, and dropping intermediate
accesses that the address layout keeps out of the victim's set.  All
interval reasoning lives here, not in the expression folders, so the
unreduced encodings stay faithful to their definitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import expr as ex
from .errors import ConstraintWindowError
from .expr import Expr

ADDR_WIDTH = 32


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    """Size in bytes, line size in bytes and associativity (ways)."""

    cache_size: int = 65536
    line_size: int = 64
    assoc: int = 1
    policy: str = "lru"

    def __post_init__(self) -> None:
        if not (_is_pow2(self.cache_size) and _is_pow2(self.line_size) and _is_pow2(self.assoc)):
            raise ValueError("cache_size, line_size and assoc must be powers of two")
        if self.policy != "lru":
            raise ValueError(f"unsupported replacement policy {self.policy!r}")
        if self.line_size * self.assoc > self.cache_size:
            raise ValueError("cache smaller than one set")

    @property
    def num_sets(self) -> int:
        return self.cache_size // (self.line_size * self.assoc)

    @property
    def line_bits(self) -> int:
        return self.line_size.bit_length() - 1

    @property
    def num_lines(self) -> int:
        return self.cache_size // self.line_size


@dataclass(frozen=True)
class Site:
    """A static access site: thread, source line, kind and target."""

    tid: int
    line: int
    kind: str  # "load" | "store"
    decl: str

    def __str__(self) -> str:
        return f"t{self.tid}:L{self.line}:{self.kind}:{self.decl}"


@dataclass(frozen=True)
class AccessRecord:
    """One executed memory access of a symbolic interleaving."""

    index: int
    tid: int
    kind: str
    addr: Expr
    pcon: Expr
    site: Site
    decl: str
    value: Expr | None = None


Trace = tuple[AccessRecord, ...]


@dataclass(frozen=True)
class ReduceOptions:
    concretize: bool = True
    tables: bool = True
    layout: bool = True

    @classmethod
    def none(cls) -> "ReduceOptions":
        return cls(False, False, False)


def probe_window(cfg: CacheConfig) -> int:
    """Upper bound for symbolically placed base addresses.

    Four times the cache covers every distinct set/tag relation an attacker
    placement can realise, and keeps enumeration over candidate bases small.
    """
    return 4 * cfg.cache_size


def tag(addr: Expr, cfg: CacheConfig) -> Expr:
    """Block number of an address; equal tags mean the same memory block."""
    return ex.lshr(addr, ex.const(cfg.line_bits, addr.width))


def line(addr: Expr, cfg: CacheConfig) -> Expr:
    """Cache set index of an address."""
    return ex.and_(tag(addr, cfg), ex.const(cfg.num_sets - 1, addr.width))


# ---------------------------------------------------------------------------
# Interval analysis (unsigned, conservative)

_interval_memo: dict[Expr, tuple[int, int]] = {}


def interval(e: Expr) -> tuple[int, int]:
    """Conservative unsigned bounds of e, ignoring path conditions."""
    hit = _interval_memo.get(e)
    if hit is not None:
        return hit
    mask = (1 << e.width) - 1
    full = (0, mask)
    op = e.op
    if op is ex.Op.CONST:
        out = (e.value, e.value)
    elif op is ex.Op.VAR:
        out = full
    elif op in (ex.Op.EQ, ex.Op.NE, ex.Op.ULT, ex.Op.ULE):
        out = (0, 1)
    elif op is ex.Op.ZEXT:
        out = interval(e.args[0])
    elif op is ex.Op.ADD:
        (a0, a1), (b0, b1) = interval(e.args[0]), interval(e.args[1])
        out = (a0 + b0, a1 + b1)
        if out[1] > mask:
            out = full if out[1] - out[0] >= mask else (out[0] & mask, out[1] & mask)
            if out[0] > out[1]:
                out = full
    elif op is ex.Op.SUB:
        (a0, a1), (b0, b1) = interval(e.args[0]), interval(e.args[1])
        lo, hi = a0 - b1, a1 - b0
        if lo >= 0:
            out = (lo, hi)
        elif hi < 0:
            out = (lo & mask, hi & mask)
            if out[0] > out[1]:
                out = full
        else:
            out = full
    elif op is ex.Op.MULC:
        a0, a1 = interval(e.args[0])
        out = (a0 * e.value, a1 * e.value)
        if out[1] > mask:
            out = full
    elif op is ex.Op.AND:
        (a0, a1), (b0, b1) = interval(e.args[0]), interval(e.args[1])
        out = (0, min(a1, b1))
    elif op in (ex.Op.OR, ex.Op.XOR):
        (a0, a1), (b0, b1) = interval(e.args[0]), interval(e.args[1])
        bits = max(a1.bit_length(), b1.bit_length())
        out = (0, (1 << bits) - 1)
    elif op is ex.Op.SHL:
        a0, a1 = interval(e.args[0])
        b = e.args[1]
        if b.is_const and (a1 << b.value) <= mask:
            out = (a0 << b.value, a1 << b.value)
        else:
            out = full
    elif op is ex.Op.LSHR:
        a0, a1 = interval(e.args[0])
        b = e.args[1]
        out = (a0 >> b.value, a1 >> b.value) if b.is_const else (0, a1)
    elif op is ex.Op.EXTRACT:
        a0, a1 = interval(e.args[0])
        if e.value == 0 and a1 <= mask:
            out = (a0, a1)
        else:
            out = full
    elif op is ex.Op.ITE:
        (a0, a1), (b0, b1) = interval(e.args[1]), interval(e.args[2])
        out = (min(a0, b0), max(a1, b1))
    else:
        out = full
    _interval_memo[e] = out
    return out


def _block_range(e: Expr, cfg: CacheConfig) -> tuple[int, int]:
    lo, hi = interval(e)
    return lo >> cfg.line_bits, hi >> cfg.line_bits


def _in_arc(x: int, lo: int, hi: int) -> bool:
    if lo <= hi:
        return lo <= x <= hi
    return x >= lo or x <= hi


def _sets_may_overlap(a: tuple[int, int], b: tuple[int, int], num_sets: int) -> bool:
    """Can two consecutive block ranges share a set index mod num_sets?"""
    if a[1] - a[0] + 1 >= num_sets or b[1] - b[0] + 1 >= num_sets:
        return True
    a0, a1 = a[0] % num_sets, a[1] % num_sets
    b0, b1 = b[0] % num_sets, b[1] % num_sets
    return _in_arc(b0, a0, a1) or _in_arc(a0, b0, b1)


def blocks_may_alias(a: Expr, b: Expr, cfg: CacheConfig) -> bool:
    """Can the two addresses fall into the same cache set?  Interval check
    only; no solver involved."""
    return _sets_may_overlap(_block_range(a, cfg), _block_range(b, cfg), cfg.num_sets)


def blocks_disjoint(a: Expr, b: Expr, cfg: CacheConfig) -> bool:
    """True when the two addresses provably touch different memory blocks."""
    (a0, a1), (b0, b1) = _block_range(a, cfg), _block_range(b, cfg)
    return a1 < b0 or b1 < a0


def _can_evict(mid: Expr, victim: Expr, cfg: CacheConfig) -> bool:
    """Can mid touch the victim's set with a different block?  Happens only
    when the block numbers can differ by a nonzero multiple of num_sets."""
    (m0, m1), (v0, v1) = _block_range(mid, cfg), _block_range(victim, cfg)
    s = cfg.num_sets
    k_hi = (m1 - v0) // s
    k_lo = -((v1 - m0) // s)
    return k_hi >= 1 or k_lo <= -1


# ---------------------------------------------------------------------------
# Hit constraints

def prune_distinct_table_pairs(tr: Trace, i: int, j: int,
                               layout: dict[str, tuple[int, int] | None]) -> bool:
    """True when accesses i and j target declarations whose fixed address
    ranges cover disjoint block sets, so a hit clause between them is
    impossible.  Symbolic-base declarations are never pruned."""
    bi = layout.get(tr[i].decl)
    bj = layout.get(tr[j].decl)
    if bi is None or bj is None:
        return False
    return bi[1] < bj[0] or bj[1] < bi[0]


def layout_reduce(tr: Trace, i: int, j: int, cfg: CacheConfig) -> tuple[tuple[int, ...], bool]:
    """Intermediate accesses between j and i that could evict access i's
    line, judged by address intervals.  The flag reports whether anything
    was dropped; callers treat a reduced hit as provisional and re-check
    against the unreduced constraint before acting on it."""
    victim = tr[i].addr
    kept = tuple(l for l in range(j + 1, i) if _can_evict(tr[l].addr, victim, cfg))
    return kept, len(kept) < i - j - 1


def concretize_addresses(tr: Trace) -> Trace:
    """Rewrite every input-independent address to a literal constant."""
    out = []
    changed = False
    for rec in tr:
        if not rec.addr.is_const and not ex.free_vars(rec.addr):
            addr = ex.const(ex.evaluate(rec.addr, {}), rec.addr.width)
            rec = AccessRecord(rec.index, rec.tid, rec.kind, addr, rec.pcon,
                               rec.site, rec.decl, rec.value)
            changed = True
        out.append(rec)
    return tuple(out) if changed else tr


def _hit_clause_sources(tr: Trace, i: int, cfg: CacheConfig,
                        reductions: ReduceOptions | None) -> list[int]:
    """Candidate predecessors j whose block could equal access i's, most
    recent first."""
    out = []
    for j in range(i - 1, -1, -1):
        if reductions is not None and reductions.tables \
                and blocks_disjoint(tr[j].addr, tr[i].addr, cfg):
            continue
        out.append(j)
    return out


def hit_constraint(tr: Trace, i: int, cfg: CacheConfig,
                   reductions: ReduceOptions | None = None) -> Expr:
    """Direct-mapped hit condition for access i over the trace prefix.

    The access hits when some earlier access j touched the same block
    and no access in between touched the same line.  Predecessors are
    scanned most recent first; once a predecessor's block equality is
    literally true, older ones cannot add satisfying assignments and the
    disjunction stops there.  The first access of a trace always yields
    the constant false: the cache starts empty.
    """
    rec = tr[i]
    t_i = tag(rec.addr, cfg)
    l_i = line(rec.addr, cfg)
    disjuncts: list[Expr] = []
    for j in _hit_clause_sources(tr, i, cfg, reductions):
        tag_eq = ex.eq(tag(tr[j].addr, cfg), t_i)
        if tag_eq is ex.FALSE:
            continue
        mids = range(j + 1, i)
        if reductions is not None and reductions.layout:
            mids, _ = layout_reduce(tr, i, j, cfg)
        terms = [tag_eq]
        for l in mids:
            terms.append(ex.ne(line(tr[l].addr, cfg), l_i))
        disjuncts.append(ex.conj(terms))
        if tag_eq is ex.TRUE:
            break
    return ex.disj(disjuncts)


def hit_constraint_assoc(tr: Trace, i: int, cfg: CacheConfig, window: int = 64,
                         reductions: ReduceOptions | None = None) -> Expr:
    """W-way LRU hit condition for access i.

    Access i hits when some earlier access j brought its block in and
    fewer than W distinct other blocks mapped to the same set were
    touched after j.  Distinctness is encoded by counting only the first
    occurrence of each intermediate block, and the count is a bitvector
    sum of indicator bits compared against W.  With assoc=1 the result
    is logically equivalent to hit_constraint.

    Traces containing symbolic addresses are refused beyond ``window``
    accesses; the quadratic indicator encoding is only meant for short
    prefixes.
    """
    rec = tr[i]
    if i > window and any(not r.addr.is_const for r in tr[:i + 1]):
        raise ConstraintWindowError(
            f"access {i} exceeds the {window}-access window for symbolic traces")
    w = cfg.assoc
    t_i = tag(rec.addr, cfg)
    s_i = line(rec.addr, cfg)
    disjuncts: list[Expr] = []
    for j in _hit_clause_sources(tr, i, cfg, reductions):
        tag_eq = ex.eq(tag(tr[j].addr, cfg), t_i)
        if tag_eq is ex.FALSE:
            continue
        mids = list(range(j + 1, i))
        if reductions is not None and reductions.layout:
            kept, _ = layout_reduce(tr, i, j, cfg)
            mids = list(kept)
        if len(mids) < w:
            disjuncts.append(tag_eq)
        else:
            tags = {l: tag(tr[l].addr, cfg) for l in mids}
            cw = (len(mids) + 1).bit_length()
            count = ex.const(0, cw)
            for pos, l in enumerate(mids):
                ind_terms = [ex.eq(line(tr[l].addr, cfg), s_i), ex.ne(tags[l], t_i)]
                for l2 in mids[:pos]:
                    ind_terms.append(ex.ne(tags[l2], tags[l]))
                count = ex.add(count, ex.zext(ex.conj(ind_terms), cw))
            disjuncts.append(ex.and_(tag_eq, ex.ult(count, ex.const(w, cw))))
        if tag_eq is ex.TRUE:
            break
    return ex.disj(disjuncts)


def may_same_line(a: AccessRecord, b: AccessRecord, cfg: CacheConfig,
                  backend=None, timeout_ms: int | None = None) -> bool:
    """Can the two accesses touch the same cache set on a common path?

    Decided by the interval pre-check whenever possible; otherwise the
    question goes to the solver backend.  Without a backend, and on
    solver timeout, the answer is conservatively True.
    """
    if not blocks_may_alias(a.addr, b.addr, cfg):
        return False
    if a.addr.is_const and b.addr.is_const:
        return True  # point intervals: overlap is equality
    q = ex.conj([ex.eq(line(a.addr, cfg), line(b.addr, cfg)), a.pcon, b.pcon])
    if q.is_const:
        return bool(q.value)
    if backend is None:
        return True
    res = backend.check(q, timeout_ms=timeout_ms)
    return res.status != "unsat"
