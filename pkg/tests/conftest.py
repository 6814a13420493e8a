import time

import numpy as np
import pytest

from xorslp.codec import CodecParams, PipelineConfig, dataset_metrics
from xorslp.executor import compile_program, run
from xorslp.slp import Instruction, Slp, const, result_masks, var

I = Instruction
A, B, C, D, E, F, G = (const(i) for i in range(7))

ACCEPTANCE = []  # (criterion, ok, detail) filled by test_acceptance


def report(num, ok, detail):
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


# ----------------------------------------------------------- small programs

def small_p():
    """v1 = a^b, v2 = b^c^d, v3 = v1^v2; returns (v2, v3, v1)."""
    return Slp(4, [I(var(1), (A, B)), I(var(2), (B, C, D)), I(var(3), (var(1), var(2)))],
               [var(2), var(3), var(1)])


def p0():
    return Slp(4, [I(var(1), (A, B)), I(var(2), (A, B, C)), I(var(3), (A, B, C, D)),
                   I(var(4), (B, C, D))], [var(1), var(2), var(3), var(4)])


def p_eg():
    """The five-instruction cache example over constants A..G, goals v2, v3, v5."""
    v = var
    return Slp(7, [I(v(1), (A, B)), I(v(2), (C, D)), I(v(3), (v(1), E, F)),
                   I(v(4), (v(3), G, A)), I(v(5), (v(1), v(3), v(4)))],
               [v(2), v(3), v(5)], multi=True)


def q_eg():
    """Hand-scheduled P_eg with three variables."""
    v = var
    return Slp(7, [I(v(1), (B, A)), I(v(2), (E, F, v(1))), I(v(3), (A, G, v(2))),
                   I(v(1), (v(1), v(2), v(3))), I(v(3), (C, D))],
               [v(3), v(2), v(1)], multi=True)


def random_slp(rng, num_constants=8, length=12, max_width=5, multi=None, ssa=True):
    multi = bool(rng.integers(2)) if multi is None else multi
    instrs, defined = [], []
    for i in range(length):
        pool = [const(j) for j in range(num_constants)] + defined
        k = int(rng.integers(2, min(max_width, len(pool)) + 1))
        ops = [pool[j] for j in rng.choice(len(pool), k, replace=False)]
        target = var(i) if ssa or not defined or rng.random() < 0.7 else \
            defined[int(rng.integers(len(defined)))]
        instrs.append(I(target, tuple(ops)))
        if target not in defined:
            defined.append(target)
    nret = int(rng.integers(1, len(defined) + 1))
    rets = [defined[j] for j in rng.choice(len(defined), nret, replace=False)]
    return Slp(num_constants, instrs, rets, multi)


def random_bitmatrix_slp(rng, rows=12, cols=16, density=0.5):
    from xorslp.slp import from_bitmatrix
    m = (rng.random((rows, cols)) < density).astype(np.uint8)
    m[m.sum(axis=1) == 0, 0] = 1
    return from_bitmatrix(m)


def onehot_check(p, block_size=32, kernel="auto"):
    """Run ``p`` on one-hot inputs: output r must be the indicator of result r."""
    k = p.num_constants
    inputs = np.zeros((k, block_size * max(1, -(-k // block_size))), dtype=np.uint8)
    inputs[np.arange(k), np.arange(k)] = 1
    out = run(compile_program(p), inputs, block_size, kernel)
    for r, mask in enumerate(result_masks(p)):
        want = np.array([(mask >> j) & 1 for j in range(inputs.shape[1])], dtype=np.uint8)
        if not np.array_equal(out[r], want):
            return False
    return True


# ---------------------------------------------------------------- dataset

RS104 = CodecParams(10, 4)


@pytest.fixture(scope="session")
def rs_dataset():
    """All 1002 RS(10,4) programs through every stage, checked for semantics.

    Also seeds the shared program cache used by the codec tests.
    """
    t = time.perf_counter()
    rep = dataset_metrics(RS104, PipelineConfig(), check=True,
                          extra_stages=("repair", "greedy"))
    return rep, time.perf_counter() - t
