import numpy as np
import pytest

from conftest import A, B, I, onehot_check, random_slp, small_p
from xorslp.codec import CodecParams, PipelineConfig, encode_slp, optimize
from xorslp.executor import (BLOCK_SIZES, LANE, PAGE, BlockLayout, Runner, compile_program,
                             have_jit, run, xor_blocks, xor_blocks_scalar)
from xorslp.slp import Slp, SlpError, const, nvar, var

KERNELS = ["numpy"] + (["wide", "bytes"] if have_jit() else [])


def test_xor_blocks_examples():
    x = np.arange(64, dtype=np.uint8)
    for f in (xor_blocks, xor_blocks_scalar):
        d = np.empty(64, dtype=np.uint8)
        f(d, [x])
        assert np.array_equal(d, x)
        f(d, [x, x])
        assert not d.any()
    with pytest.raises(ValueError):
        xor_blocks(np.empty(8, dtype=np.uint8), [np.empty(9, dtype=np.uint8)])


def test_wide_path_matches_scalar():
    rng = np.random.default_rng(0)
    buf = np.zeros(8 * 4096 + 64, dtype=np.uint8)
    for _ in range(10_000):
        n = int(rng.choice([32, 64, 96, 128, 17, 40]))
        k = int(rng.integers(1, 7))
        # aligned slices of one buffer, possibly aliasing the destination
        offs = rng.integers(0, 64, k + 1) * 64 if rng.random() < 0.8 else rng.integers(0, 4000, k + 1)
        buf[:] = rng.integers(0, 256, len(buf), dtype=np.uint8)
        srcs = [buf[o:o + n].copy() for o in offs[1:]]
        want = np.empty(n, dtype=np.uint8)
        xor_blocks_scalar(want, srcs)
        dst = buf[offs[0]:offs[0] + n]
        xor_blocks(dst, [buf[o:o + n] for o in offs[1:]])
        assert np.array_equal(dst, want)


def test_block_layout():
    for bs in BLOCK_SIZES:
        lay = BlockLayout(bs, 40)
        assert lay.check()
        sets = {}
        for i in range(40):
            sets.setdefault(lay.offset(i) % PAGE, []).append(i)
        # blocks collide modulo the page only when i = j mod PAGE/bs
        for group in sets.values():
            assert len({i % (PAGE // bs) for i in group}) == 1
    with pytest.raises(ValueError):
        BlockLayout(48, 2)
    assert all(bs % LANE == 0 for bs in BLOCK_SIZES)


def test_runner_arena_is_page_aligned():
    prog = compile_program(optimize(encode_slp(CodecParams(10, 4)), PipelineConfig()))
    assert prog.n_scratch >= 2
    r = Runner(prog, 4096, 1024, "numpy")
    assert r.arena.ctypes.data % PAGE == 0
    first_scratch = prog.n_inputs + prog.n_outputs
    assert r._base[first_scratch] * 8 % PAGE == 0
    assert (r._base[first_scratch + 1] - r._base[first_scratch]) * 8 == 1024


def test_compile_copy_goal_and_aliasing():
    p = Slp(3, [I(var(0), (A, B))], [const(2), var(0), var(0)])
    prog = compile_program(p)
    assert prog.n_scratch == 0
    assert (3 + 0, (2,)) in prog.ops  # the copy of c2 into output 0
    out = run(prog, [np.full(32, 1, np.uint8), np.full(32, 2, np.uint8), np.full(32, 4, np.uint8)], 32)
    assert out[:, 0].tolist() == [4, 3, 3]


def test_scratch_count():
    q = optimize(encode_slp(CodecParams(10, 4)), PipelineConfig())
    prog = compile_program(q)
    goal_vars = len({t for t in q.returns if t.is_var})
    assert prog.n_scratch == nvar(q) - goal_vars


@pytest.mark.parametrize("kernel", KERNELS)
def test_small_program_one_hot(kernel):
    assert onehot_check(small_p(), 32, kernel)
    assert onehot_check(small_p().replace(multi=True), 64, kernel)


def test_xor_of_two_arrays():
    rng = np.random.default_rng(1)
    a, b = rng.integers(0, 256, (2, 4096), dtype=np.uint8)
    out = run(compile_program(Slp(2, [I(var(0), (A, B))], [var(0)])), [a, b], 1024)
    assert np.array_equal(out[0], a ^ b)


@pytest.mark.parametrize("kernel", KERNELS)
def test_random_programs_one_hot(kernel):
    rng = np.random.default_rng(7)
    for _ in range(60):
        p = random_slp(rng, num_constants=int(rng.integers(2, 40)), length=int(rng.integers(1, 30)),
                       max_width=8, ssa=bool(rng.integers(2)))
        assert onehot_check(p, 64, kernel)


def test_output_independent_of_block_size_and_kernel():
    q = optimize(encode_slp(CodecParams(10, 4)), PipelineConfig())
    prog = compile_program(q)
    rng = np.random.default_rng(3)
    inputs = rng.integers(0, 256, (80, 4096), dtype=np.uint8)
    ref = run(prog, inputs, 4096, "numpy")
    for bs in BLOCK_SIZES:
        for kernel in KERNELS:
            assert np.array_equal(run(prog, inputs, bs, kernel), ref)
    unopt = compile_program(encode_slp(CodecParams(10, 4)))
    assert np.array_equal(run(unopt, inputs, 64), ref)


def test_runner_errors():
    prog = compile_program(small_p())
    with pytest.raises(ValueError):
        Runner(prog, 100, 64)
    with pytest.raises(ValueError):
        Runner(prog, 128, 48)
    with pytest.raises(SlpError):
        run(prog, [np.zeros(64, np.uint8)], 64)
    with pytest.raises(ValueError):
        run(prog, [np.zeros(64, np.uint8)] * 3 + [np.zeros(128, np.uint8)], 64)
