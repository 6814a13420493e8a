import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import A, B, C, D, I, p0, random_bitmatrix_slp, random_slp
from xorslp.compress import PairKey, apply_pair, rebuild, repair, xor_repair
from xorslp.slp import (Slp, SlpError, const, count_xor, evaluate, result, result_masks, temp,
                        value_masks, var)


def test_pair_key_orders_terms():
    k = PairKey.of(B, temp(3))
    assert k == (temp(3), B)
    assert PairKey.of(A, B).rank() < PairKey.of(B, C).rank()
    assert PairKey.of(temp(9), D).rank() < PairKey.of(A, B).rank()


def test_apply_pair_on_p0():
    q = apply_pair(p0(), A, B)
    assert [(str(i.target), i.operands) for i in q.instructions] == [
        ("t0", (A, B)), ("v2", (temp(0), C)), ("v3", (temp(0), C, D)), ("v4", (B, C, D))]
    assert q.returns == (temp(0), var(2), var(3), var(4))
    assert result(q) == result(p0())
    with pytest.raises(SlpError):
        apply_pair(q, A, B)  # no longer occurs below the temporaries


def test_apply_pair_xor_counts():
    once = Slp(4, [I(var(0), (A, B, C)), I(var(1), (C, D))], [var(0), var(1)])
    assert count_xor(apply_pair(once, A, B)) == count_xor(once)
    thrice = Slp(4, [I(var(0), (A, B, C)), I(var(1), (A, B, D)), I(var(2), (A, B, C, D))],
                 [var(0), var(1), var(2)])
    assert count_xor(apply_pair(thrice, A, B)) == count_xor(thrice) - 2


def test_repair_p0_trace():
    q = repair(p0())
    assert count_xor(q) == 5
    assert [i.operands for i in q.instructions] == [
        (A, B), (temp(0), C), (temp(1), D), (B, C), (temp(3), D)]
    assert result(q) == result(p0())


def test_rebuild_example():
    q = apply_pair(apply_pair(apply_pair(p0(), A, B), temp(0), C), temp(1), D)
    assert rebuild(q, var(4)) == frozenset({A, temp(2)})
    # no temporaries: the definition comes back unchanged
    assert rebuild(p0(), var(4)) == frozenset({B, C, D})


def _rebuild_oracle(p, v):
    # literal transcription of the greedy loop, over evaluated sets
    vals = evaluate(p)
    temps = [i.target for i in p.instructions if i.target.kind == "t"]
    rem, chosen = set(vals[v]), set()
    while True:
        best = min(temps, key=lambda t: (len(rem ^ vals[t]), t.index), default=None)
        if best is None or len(rem ^ vals[best]) >= len(rem):
            return frozenset({type(v)("c", i) for i in rem} | chosen)
        rem ^= vals[best]
        chosen.add(best)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rebuild_matches_greedy_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_bitmatrix_slp(rng, rows=8, cols=10)
    for _ in range(int(rng.integers(1, 5))):
        origs = [i for i in p.instructions if i.target.kind == "v" and len(i.operands) >= 2]
        if not origs:
            return
        ins = origs[int(rng.integers(len(origs)))]
        p = apply_pair(p, *PairKey.of(*ins.operands[:2]))
    for ins in p.instructions:
        if ins.target.kind == "v":
            got = rebuild(p, ins.target)
            assert got == _rebuild_oracle(p, ins.target)
            vals = evaluate(p)
            acc = set()
            for t in got:
                acc ^= {t.index} if t.kind == "c" else set(vals[t])
            assert acc == set(vals[ins.target])


def test_xor_repair_p0():
    q = xor_repair(p0())
    assert count_xor(q) == 4
    assert result(q) == result(p0())
    assert q.instructions[-1].operands == (temp(2), A)


def test_no_cancellation_means_same_as_repair():
    # disjoint goals: no temporary can ever shrink another goal
    p = Slp(12, [I(var(i), (const(3 * i), const(3 * i + 1), const(3 * i + 2))) for i in range(4)],
            [var(i) for i in range(4)])
    assert xor_repair(p) == repair(p)
    rng = np.random.default_rng(11)
    for _ in range(20):
        q = random_bitmatrix_slp(rng, rows=2, cols=12, density=0.9)
        assert count_xor(xor_repair(q)) <= count_xor(q)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compression_preserves_results(seed):
    rng = np.random.default_rng(seed)
    p = random_bitmatrix_slp(rng, rows=int(rng.integers(1, 16)), cols=int(rng.integers(2, 20)),
                             density=float(rng.uniform(0.2, 0.8)))
    for f in (repair, xor_repair):
        q = f(p)
        assert result_masks(q) == result_masks(p)
        assert count_xor(q) <= count_xor(p)
        assert all(len(i.operands) == 2 for i in q.instructions)
        assert f(p) == q  # deterministic


def test_compression_of_general_programs():
    rng = np.random.default_rng(2)
    done = 0
    while done < 50:
        p = random_slp(rng, multi=False)  # goals read other goals
        if 0 in value_masks(p).values():
            continue  # a zero array has no XOR expression
        done += 1
        for f in (repair, xor_repair):
            assert result_masks(f(p)) == result_masks(p)
    twice = Slp(3, [I(var(0), (A, B)), I(var(0), (var(0), C))], [var(0)])
    with pytest.raises(SlpError):
        repair(twice)
    zero = Slp(2, [I(var(0), (A, B)), I(var(1), (var(0), A, B))], [var(1)])
    with pytest.raises(SlpError):
        xor_repair(zero)
    copy = Slp(2, [I(var(0), (A, B)), I(var(1), (var(0), B))], [var(1), var(0)])
    assert xor_repair(copy).returns[0] == A


def test_thousand_random_bitmatrices():
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        p = random_bitmatrix_slp(rng, rows=int(rng.integers(1, 9)), cols=int(rng.integers(2, 12)))
        want = result_masks(p)
        assert result_masks(repair(p)) == want
        assert result_masks(xor_repair(p)) == want
