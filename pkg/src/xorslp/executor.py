"""Blocked execution of XOR programs over byte arrays.

Every constant is an input array and every returned variable an output
array of the same length ``N``.  The arrays are cut into blocks of
``block_size`` bytes, and the whole program runs once per block index, so
that intermediate variables only ever need one block each.  Those
intermediate blocks live in a scratch area whose slot ``k`` starts at
``k * block_size`` from a 4096-aligned base, which spreads them over cache
sets (addresses congruent modulo 4 KiB collide in a set-associative L1).

Binary-form programs run as chains of two-input XORs; fused programs run
each variadic XOR as one pass that reads every operand once.
"""

from dataclasses import dataclass

import numpy as np

from .slp import CONST, SlpError

try:  # compiled inner loop; the numpy path below is the fallback
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

__all__ = [
    "BLOCK_SIZES", "LANE", "BlockLayout", "Program", "Runner",
    "xor_blocks", "xor_blocks_scalar", "compile_program", "run", "have_jit",
]

BLOCK_SIZES = (64, 128, 256, 512, 1024, 2048, 4096)
LANE = 32  # bytes per wide XOR
PAGE = 4096


def have_jit():
    return numba is not None


# ---------------------------------------------------------------- kernels

def xor_blocks_scalar(dst, srcs):
    """Bytewise reference: ``dst[j] = srcs[0][j] ^ srcs[1][j] ^ ...``."""
    n = len(dst)
    if not srcs or any(len(s) != n for s in srcs):
        raise ValueError("blocks must be non-empty and equally long")
    vals = [bytes(s) for s in srcs]  # read everything first: dst may alias
    for j in range(n):
        acc = 0
        for s in vals:
            acc ^= s[j]
        dst[j] = acc


def xor_blocks(dst, srcs):
    """XOR ``srcs`` into ``dst`` using 8-byte words when the length allows."""
    n = len(dst)
    if not srcs or any(len(s) != n for s in srcs):
        raise ValueError("blocks must be non-empty and equally long")
    if n % LANE == 0 and all(_aligned(a) for a in (dst, *srcs)):
        d = dst.view(np.uint64)
        ss = [s.view(np.uint64) for s in srcs]
    else:
        d, ss = dst, list(srcs)
    if len(ss) == 1:
        np.copyto(d, ss[0])
        return
    acc = np.bitwise_xor(ss[0], ss[1])
    for s in ss[2:]:
        np.bitwise_xor(acc, s, out=acc)
    np.copyto(d, acc)


def _aligned(a):
    return a.dtype == np.uint8 and a.flags.c_contiguous and a.ctypes.data % 8 == 0


# ---------------------------------------------------------------- compile

@dataclass(frozen=True)
class Program:
    """A program over numbered slots.

    Slots ``[0, n_inputs)`` are inputs, the next ``n_outputs`` are outputs
    and the rest are scratch.  ``ops`` holds ``(dst, srcs)`` pairs; a single
    source means a copy.
    """
    n_inputs: int
    n_outputs: int
    n_scratch: int
    ops: tuple

    @property
    def n_slots(self):
        return self.n_inputs + self.n_outputs + self.n_scratch

    def xor_count(self):
        return sum(len(s) - 1 for _, s in self.ops)


def compile_program(p):
    """Assign slots to the terms of ``p``.

    The first return slot of each variable becomes that variable's storage,
    so results are written straight into the output arrays; returned
    constants and repeated returns become trailing copies.
    """
    nin, nout = p.num_constants, len(p.returns)
    slot = {}
    tail = []
    for r, t in enumerate(p.returns):
        out = nin + r
        if t.kind == CONST:
            tail.append((out, (t.index,)))
        elif t in slot:
            tail.append((out, (slot[t],)))
        else:
            slot[t] = out
    nscratch = 0
    for ins in p.instructions:
        if ins.target not in slot:
            slot[ins.target] = nin + nout + nscratch
            nscratch += 1

    def at(t):
        return t.index if t.kind == CONST else slot[t]

    ops = []
    for ins in p.instructions:
        d = slot[ins.target]
        srcs = [at(t) for t in ins.operands]
        if d in srcs:  # read the target before it is overwritten
            srcs.remove(d)
            srcs.insert(0, d)
        if p.multi or len(srcs) == 2:
            ops.append((d, tuple(srcs)))
            continue
        ops.append((d, (srcs[0], srcs[1])))
        ops.extend((d, (d, s)) for s in srcs[2:])
    return Program(nin, nout, nscratch, tuple(ops + tail))


# ----------------------------------------------------------------- layout

@dataclass(frozen=True)
class BlockLayout:
    """Offsets of the scratch blocks inside one page-aligned arena."""
    block_size: int
    count: int

    def __post_init__(self):
        if self.block_size <= 0 or self.block_size % LANE:
            raise ValueError(f"block size {self.block_size} is not a multiple of {LANE}")

    def offset(self, i):
        return i * self.block_size

    @property
    def nbytes(self):
        return self.count * self.block_size

    def check(self):
        offs = [self.offset(i) for i in range(self.count)]
        assert all(o % PAGE == (i * self.block_size) % PAGE for i, o in enumerate(offs))
        assert all(b - a >= self.block_size for a, b in zip(offs, offs[1:]))
        return True


def _page_aligned(nbytes):
    raw = np.zeros(nbytes + PAGE, dtype=np.uint8)
    start = (-raw.ctypes.data) % PAGE
    return raw[start:start + nbytes]


# ----------------------------------------------------------------- runner

def _flatten(prog, n, block_size):
    """Word offsets of every slot and per-block strides, plus the op table."""
    words, bw = n // 8, block_size // 8
    io = prog.n_inputs + prog.n_outputs
    io_words = io * words
    scratch0 = -(-io_words // (PAGE // 8)) * (PAGE // 8)  # page-align scratch
    base = np.empty(prog.n_slots, dtype=np.int64)
    stride = np.empty(prog.n_slots, dtype=np.int64)
    base[:io] = np.arange(io) * words
    stride[:io] = bw
    base[io:] = scratch0 + np.arange(prog.n_scratch) * bw
    stride[io:] = 0
    ptr = np.zeros(len(prog.ops) + 1, dtype=np.int64)
    dst = np.empty(len(prog.ops), dtype=np.int64)
    src = []
    for i, (d, s) in enumerate(prog.ops):
        dst[i] = d
        src.extend(s)
        ptr[i + 1] = len(src)
    return base, stride, dst, np.array(src, dtype=np.int64), ptr, scratch0 + prog.n_scratch * bw


class Runner:
    """Reusable arena for running one program on arrays of a fixed length.

    Fill ``inputs`` (shape ``(n_inputs, N)``), call ``execute()``, read
    ``outputs``.  ``kernel`` is ``"wide"`` (64-bit words), ``"bytes"``
    (one byte at a time) or ``"numpy"`` (no compiled loop).
    """

    def __init__(self, prog, length, block_size=1024, kernel="auto"):
        if block_size % LANE or block_size <= 0:
            raise ValueError(f"block size {block_size} is not a multiple of {LANE}")
        if length % block_size:
            raise ValueError(f"length {length} is not a multiple of block size {block_size}")
        if kernel == "auto":
            kernel = "wide" if numba is not None else "numpy"
        if kernel in ("wide", "bytes") and numba is None:
            raise RuntimeError("numba is not installed")
        self.prog, self.length, self.block_size, self.kernel = prog, length, block_size, kernel
        self.layout = BlockLayout(block_size, prog.n_scratch)
        (self._base, self._stride, self._dst, self._src, self._ptr,
         total_words) = _flatten(prog, length, block_size)
        self.arena = _page_aligned(total_words * 8)
        io = prog.n_inputs + prog.n_outputs
        rows = self.arena[:io * length].reshape(io, length)
        self.inputs = rows[:prog.n_inputs]
        self.outputs = rows[prog.n_inputs:]

    def execute(self):
        nblocks = self.length // self.block_size if self.length else 0
        if not len(self._dst) or not nblocks:
            return self.outputs
        if self.kernel == "wide":
            _jit()(self.arena.view(np.uint64), nblocks, self.block_size // 8,
                        self._base, self._stride, self._dst, self._src, self._ptr)
        elif self.kernel == "bytes":
            _jit()(self.arena, nblocks, self.block_size,
                         self._base * 8, self._stride * 8, self._dst, self._src, self._ptr)
        elif self.kernel == "numpy":
            self._execute_numpy(nblocks)
        else:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        return self.outputs

    def _execute_numpy(self, nblocks):
        a = self.arena.view(np.uint64)
        bw = self.block_size // 8
        ops = [(int(self._dst[i]), [int(s) for s in self._src[self._ptr[i]:self._ptr[i + 1]]])
               for i in range(len(self._dst))]
        tmp = np.empty(bw, dtype=np.uint64)
        for blk in range(nblocks):
            def view(s):
                o = self._base[s] + blk * self._stride[s]
                return a[o:o + bw]
            for d, srcs in ops:
                if len(srcs) == 1:
                    np.copyto(view(d), view(srcs[0]))
                    continue
                np.bitwise_xor(view(srcs[0]), view(srcs[1]), out=tmp)
                for s in srcs[2:]:
                    np.bitwise_xor(tmp, view(s), out=tmp)
                np.copyto(view(d), tmp)


def run(prog, inputs, block_size=1024, kernel="auto"):
    """Run ``prog`` on equally long byte arrays; returns ``(n_outputs, N)``."""
    inputs = [np.asarray(x, dtype=np.uint8) for x in inputs]
    if len(inputs) != prog.n_inputs:
        raise SlpError(f"expected {prog.n_inputs} inputs, got {len(inputs)}")
    n = len(inputs[0]) if inputs else 0
    if any(len(x) != n for x in inputs):
        raise ValueError("inputs have different lengths")
    r = Runner(prog, n, block_size, kernel)
    for i, x in enumerate(inputs):
        r.inputs[i] = x
    return r.execute().copy()


# ------------------------------------------------------------ jit kernels

_JIT = []


def _jit():
    if not _JIT:
        _JIT.append(numba.njit(cache=True, nogil=True)(_block_loop))
    return _JIT[0]


def _block_loop(a, nblocks, bw, base, stride, dst, src, ptr):
    # ``a`` is the arena as 64-bit words (or bytes, for the bytewise
    # kernel); offsets and strides are in the same unit.  An in-place
    # target is always the first source, so it is read before written.
    for blk in range(nblocks):
        for op in range(len(dst)):
            d = base[dst[op]] + blk * stride[dst[op]]
            lo = ptr[op]
            hi = ptr[op + 1]
            s0 = base[src[lo]] + blk * stride[src[lo]]
            if hi - lo == 1:
                for j in range(bw):
                    a[d + j] = a[s0 + j]
                continue
            s1 = base[src[lo + 1]] + blk * stride[src[lo + 1]]
            if hi - lo == 2:
                for j in range(bw):
                    a[d + j] = a[s0 + j] ^ a[s1 + j]
                continue
            s2 = base[src[lo + 2]] + blk * stride[src[lo + 2]]
            if hi - lo == 3:
                for j in range(bw):
                    a[d + j] = a[s0 + j] ^ a[s1 + j] ^ a[s2 + j]
                continue
            s3 = base[src[lo + 3]] + blk * stride[src[lo + 3]]
            for j in range(bw):
                a[d + j] = a[s0 + j] ^ a[s1 + j] ^ a[s2 + j] ^ a[s3 + j]
            # wider XORs fold in up to three more operands per pass
            t = lo + 4
            while t < hi:
                x = base[src[t]] + blk * stride[src[t]]
                if t + 2 < hi:
                    y = base[src[t + 1]] + blk * stride[src[t + 1]]
                    z = base[src[t + 2]] + blk * stride[src[t + 2]]
                    for j in range(bw):
                        a[d + j] ^= a[x + j] ^ a[y + j] ^ a[z + j]
                    t += 3
                elif t + 1 < hi:
                    y = base[src[t + 1]] + blk * stride[src[t + 1]]
                    for j in range(bw):
                        a[d + j] ^= a[x + j] ^ a[y + j]
                    t += 2
                else:
                    for j in range(bw):
                        a[d + j] ^= a[x + j]
                    t += 1
