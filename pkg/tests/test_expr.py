"""Expression layer: interning, folding and evaluation."""

import pytest

from symleak import expr as ex


def test_interning_returns_identical_objects():
    k = ex.var("k", 8)
    assert ex.var("k", 8) is k
    assert ex.add(k, ex.const(3, 8)) is ex.add(k, ex.const(3, 8))
    assert ex.const(5, 8) is ex.const(5, 8)
    assert ex.const(5, 8) is not ex.const(5, 16)


def test_commutative_argument_order_is_canonical():
    a = ex.var("a", 8)
    b = ex.var("b", 8)
    assert ex.add(a, b) is ex.add(b, a)
    assert ex.xor(a, b) is ex.xor(b, a)
    assert ex.eq(a, b) is ex.eq(b, a)
    assert ex.ne(a, b) is ex.ne(b, a)


def test_constant_masking_and_folding():
    assert ex.const(256, 8).value == 0
    assert ex.const(-1, 8).value == 255
    assert ex.add(ex.const(200, 8), ex.const(100, 8)).value == 44
    assert ex.sub(ex.const(0, 8), ex.const(1, 8)).value == 255
    assert ex.mulc(ex.const(7, 8), 40).value == 24


def test_identity_folds():
    k = ex.var("k", 8)
    zero = ex.const(0, 8)
    ones = ex.const(255, 8)
    assert ex.add(k, zero) is k
    assert ex.sub(k, zero) is k
    assert ex.sub(k, k) is zero
    assert ex.and_(k, ones) is k
    assert ex.and_(k, zero) is zero
    assert ex.or_(k, zero) is k
    assert ex.or_(k, ones) is ones
    assert ex.xor(k, zero) is k
    assert ex.xor(k, k) is zero
    assert ex.mulc(k, 1) is k
    assert ex.mulc(k, 0) is zero


def test_comparisons_have_width_one():
    # Regression: comparisons once inherited their operands' width, which
    # broke conjunction with path conditions.
    k = ex.var("k", 32)
    j = ex.var("j", 32)
    for node in (ex.eq(k, j), ex.ne(k, j), ex.ult(k, j), ex.ule(k, j)):
        assert node.width == 1
    assert ex.and_(ex.eq(k, j), ex.TRUE) is ex.eq(k, j)


def test_comparison_folds():
    k = ex.var("k", 8)
    assert ex.eq(k, k) is ex.TRUE
    assert ex.ne(k, k) is ex.FALSE
    assert ex.ult(k, k) is ex.FALSE
    assert ex.ule(k, k) is ex.TRUE
    assert ex.ult(k, ex.const(0, 8)) is ex.FALSE
    assert ex.ule(k, ex.const(255, 8)) is ex.TRUE
    assert ex.eq(ex.const(3, 8), ex.const(3, 8)) is ex.TRUE
    assert ex.eq(ex.const(3, 8), ex.const(4, 8)) is ex.FALSE


def test_shifts_saturate_at_width():
    k = ex.var("k", 8)
    assert ex.shl(k, ex.const(8, 8)) is ex.const(0, 8)
    assert ex.lshr(k, ex.const(200, 8)) is ex.const(0, 8)
    assert ex.shl(k, ex.const(0, 8)) is k
    assert ex.evaluate(ex.shl(ex.var("x", 8), ex.var("s", 8)), {"x": 1, "s": 9}) == 0


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        ex.add(ex.var("a", 8), ex.var("b", 16))
    with pytest.raises(ValueError):
        ex.eq(ex.var("a", 8), ex.const(0, 32))
    with pytest.raises(ValueError):
        ex.ite(ex.var("c", 8), ex.const(0, 8), ex.const(1, 8))


def test_ite_folding():
    c = ex.var("c", 1)
    t = ex.const(1, 8)
    f = ex.const(2, 8)
    assert ex.ite(ex.TRUE, t, f) is t
    assert ex.ite(ex.FALSE, t, f) is f
    assert ex.ite(c, t, t) is t
    assert ex.evaluate(ex.ite(c, t, f), {"c": 1}) == 1


def test_zext_and_extract():
    k = ex.var("k", 8)
    w = ex.zext(k, 32)
    assert w.width == 32
    assert ex.zext(w, 64).args[0] is k  # collapses nested widening
    assert ex.extract(w, 0, 8) is k
    assert ex.extract(ex.const(0xAB, 8), 4, 4).value == 0xA
    with pytest.raises(ValueError):
        ex.extract(k, 4, 8)
    with pytest.raises(ValueError):
        ex.zext(w, 8)


def test_conj_disj():
    k = ex.var("k", 8)
    p = ex.eq(k, ex.const(1, 8))
    assert ex.conj([]) is ex.TRUE
    assert ex.disj([]) is ex.FALSE
    assert ex.conj([p]) is p
    assert ex.conj([p, ex.FALSE]) is ex.FALSE
    assert ex.disj([p, ex.TRUE]) is ex.TRUE
    assert ex.not_(ex.TRUE) is ex.FALSE
    for k in (0, 1):
        assert ex.evaluate(ex.not_(ex.not_(p)), {"k": k}) == ex.evaluate(p, {"k": k})


def test_evaluate_matches_uint_semantics():
    k = ex.var("k", 8)
    e = ex.add(ex.mulc(k, 3), ex.const(250, 8))
    assert ex.evaluate(e, {"k": 10}) == (30 + 250) % 256
    assert ex.evaluate(ex.sub(ex.const(0, 8), k), {"k": 1}) == 255
    assert ex.evaluate(ex.ule(k, ex.const(127, 8)), {"k": 128}) == 0
    with pytest.raises(KeyError):
        ex.evaluate(e, {})


def test_evaluate_masks_oversized_env_values():
    k = ex.var("k", 8)
    assert ex.evaluate(k, {"k": 0x1FF}) == 0xFF


def test_substitute_refolds():
    k = ex.var("k", 8)
    e = ex.eq(ex.add(k, ex.const(1, 8)), ex.const(4, 8))
    assert ex.substitute(e, {"k": ex.const(3, 8)}) is ex.TRUE
    assert ex.substitute(e, {"k": ex.const(5, 8)}) is ex.FALSE
    j = ex.var("j", 8)
    swapped = ex.substitute(e, {"k": j})
    assert ex.free_vars(swapped) == {"j"}
    with pytest.raises(ValueError):
        ex.substitute(e, {"k": ex.const(0, 16)})


def test_free_vars_and_widths():
    k = ex.var("k", 8)
    b = ex.var("base", 32)
    e = ex.eq(ex.add(ex.zext(k, 32), b), ex.const(99, 32))
    assert ex.free_vars(e) == {"k", "base"}
    assert ex.var_widths(e) == {"k": 8, "base": 32}


def test_deep_chain_evaluation_is_iterative():
    # A disjunction of thousands of terms must not hit the recursion limit.
    k = ex.var("k", 16)
    e = ex.disj([ex.eq(k, ex.const(i, 16)) for i in range(4000)])
    assert ex.evaluate(e, {"k": 3999}) == 1
    assert ex.evaluate(e, {"k": 4001}) == 0
