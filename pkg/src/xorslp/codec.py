"""Reed-Solomon erasure coding through optimised XOR programs.

Data is split into ``n`` shards and ``p`` parity shards are added.  Each
shard is cut into 8 equal packets; packet ``k`` of shard ``s`` is constant
``8*s + k`` of the coding program, and the program is the bitmatrix of the
coding matrix pushed through the optimisation pipeline.

Per byte offset the XOR code is the GF(2^8) code applied bit-sliced: bit
``b`` of the 8 packets of a shard, packet 0 as the most significant bit,
forms one field element.  ``gf_reference_parity`` computes exactly that
with table arithmetic and serves as the oracle for the XOR path.
"""

import functools
import itertools
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import gf256
from .compress import repair, xor_repair
from .executor import Runner, compile_program
from .fuse import fuse
from .schedule import ccap, dfs_schedule, greedy_schedule, min_capacity
from .slp import Slp, count_mem, count_ops, count_xor, from_bitmatrix, nvar, result_masks

__all__ = [
    "CodecParams", "PipelineConfig", "Codec", "UnrecoverableError",
    "coding_matrix", "encode_slp", "decode_slp", "optimize", "pipeline_stages",
    "build_encode_program", "build_decode_program", "encode", "decode",
    "pack_shard", "unpack_shard", "HEADER", "gf_reference_parity",
    "erasure_patterns", "dataset_metrics", "slp_metrics", "optimized_slp", "PROGRAMS",
    "decode_rows", "UNOPTIMIZED",
]


class UnrecoverableError(ValueError):
    pass


@dataclass(frozen=True)
class CodecParams:
    """RS(n, p).  ``matrix`` picks the systematic coding matrix:

    ``"isal"`` is identity over the rows ``(1, g, g^2, ...)`` for
    ``g = 2^i`` (ISA-L's RS matrix), ``"vandermonde"`` the reduced form of
    the ``(n+p) x n`` Vandermonde matrix, which is MDS for every size.
    """
    n: int
    p: int
    matrix: str = "isal"

    def __post_init__(self):
        if not (1 <= self.n and 0 <= self.p and self.n + self.p <= 255):
            raise ValueError(f"invalid RS parameters n={self.n}, p={self.p}")
        if self.matrix not in ("isal", "vandermonde"):
            raise ValueError(f"unknown matrix {self.matrix!r}")

    @property
    def total(self):
        return self.n + self.p


@dataclass(frozen=True)
class PipelineConfig:
    compression: str = "xor_repair"  # none | repair | xor_repair
    fuse: bool = True
    scheduler: str = "dfs"  # none | dfs | greedy
    capacity: int = None  # greedy only; defaults to 32 KiB of blocks
    block_size: int = 1024

    def __post_init__(self):
        if self.compression not in ("none", "repair", "xor_repair"):
            raise ValueError(f"unknown compression {self.compression!r}")
        if self.scheduler not in ("none", "dfs", "greedy"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.block_size <= 0 or self.block_size % 32:
            raise ValueError(f"block size must be a positive multiple of 32, got {self.block_size}")

    @classmethod
    def parse(cls, text, **kw):
        """Parse ``"xorrepair,fuse,dfs"``-style pipeline strings."""
        comp, do_fuse, sched = "none", False, "none"
        for tok in filter(None, (t.strip().lower() for t in text.split(","))):
            if tok in ("none", "repair", "xorrepair", "xor_repair"):
                comp = "xor_repair" if tok.startswith("xor") else tok
            elif tok == "fuse":
                do_fuse = True
            elif tok in ("dfs", "greedy"):
                sched = tok
            else:
                raise ValueError(f"unknown pipeline stage {tok!r}")
        return cls(comp, do_fuse, sched, **kw)

    def label(self):
        parts = [self.compression.replace("_", "")] if self.compression != "none" else []
        parts += ["fuse"] if self.fuse else []
        parts += [self.scheduler] if self.scheduler != "none" else []
        return ",".join(parts) or "none"

    def greedy_capacity(self, p):
        cap = self.capacity if self.capacity is not None else 32768 // self.block_size
        return max(cap, min_capacity(p))


UNOPTIMIZED = PipelineConfig("none", False, "none")


# ----------------------------------------------------------------- matrices

def coding_matrix(params):
    if params.matrix == "isal":
        return gf256.rs_matrix(params.n, params.p)
    return gf256.systematize(gf256.vandermonde(params.n, params.p))


def _pattern(params, lost):
    lost = tuple(sorted(set(int(i) for i in lost)))
    if any(not 0 <= i < params.total for i in lost):
        raise ValueError(f"shard index out of range in {lost}")
    if len(lost) > params.p:
        raise UnrecoverableError(f"{len(lost)} shards lost but only {params.p} parity shards")
    return lost


def _survivors(params, lost):
    return [i for i in range(params.total) if i not in lost][:params.n]


def _empty(num_constants):
    return Slp(num_constants, (), ())


def encode_slp(params):
    """Parity packets as XORs of data packets (unoptimised)."""
    if params.p == 0:
        return _empty(8 * params.n)
    return from_bitmatrix(gf256.to_bitmatrix(coding_matrix(params)[params.n:]))


def decode_rows(params, lost):
    """GF(2^8) rows giving the lost shards from the first n survivors."""
    lost = _pattern(params, lost)
    m = coding_matrix(params)
    inv = gf256.invert(m[_survivors(params, lost)])
    rows = [inv[i] if i < params.n else gf256.gf_matmul(m[i:i + 1], inv)[0] for i in lost]
    return np.array(rows, dtype=np.uint8).reshape(len(lost), params.n)


def decode_slp(params, lost):
    lost = _pattern(params, lost)
    if not lost:
        return _empty(8 * params.n)
    return from_bitmatrix(gf256.to_bitmatrix(decode_rows(params, lost)))


# ----------------------------------------------------------------- pipeline

def pipeline_stages(p, config):
    """``[(stage name, program)]`` starting with the input program."""
    out = [("input", p)]
    if config.compression == "repair":
        p = repair(p)
        out.append(("repair", p))
    elif config.compression == "xor_repair":
        p = xor_repair(p)
        out.append(("xorrepair", p))
    if config.fuse:
        p = fuse(p)
        out.append(("fuse", p))
    if config.scheduler == "dfs":
        p = dfs_schedule(p)
        out.append(("dfs", p))
    elif config.scheduler == "greedy":
        p = greedy_schedule(p, config.greedy_capacity(p))
        out.append(("greedy", p))
    return out


def optimize(p, config):
    return pipeline_stages(p, config)[-1][1]


class _ProgramCache:
    """Bounded LRU map from (params, pattern, config) to optimised programs.

    Shared by codecs and dataset sweeps so each program is optimised once.
    """

    def __init__(self, maxsize=2048):
        self.maxsize = maxsize
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()


PROGRAMS = _ProgramCache()


def optimized_slp(params, lost, config):
    """The pipeline output for the encoder (``lost=None``) or a decoder."""
    lost = None if lost is None else _pattern(params, lost)
    key = (params, lost, config)
    p = PROGRAMS.get(key)
    if p is None:
        src = encode_slp(params) if lost is None else decode_slp(params, lost)
        p = optimize(src, config)
        PROGRAMS.put(key, p)
    return p


def build_encode_program(params, config=PipelineConfig()):
    return compile_program(optimized_slp(params, None, config))


def build_decode_program(params, lost, config=PipelineConfig()):
    return compile_program(optimized_slp(params, lost, config))


# -------------------------------------------------------------------- codec

class Codec:
    """Encoder/decoder for one RS(n, p) code and pipeline.

    Decode programs are built on first use of an erasure pattern and kept
    in a bounded LRU cache.
    """

    def __init__(self, params, config=PipelineConfig(), kernel="auto"):
        self.params, self.config, self.kernel = params, config, kernel
        self.encode_program = build_encode_program(params, config)
        self._decoder = functools.lru_cache(maxsize=1024)(self._build_decoder)

    @property
    def unit(self):
        return self.params.n * 8 * self.config.block_size

    def padded_length(self, length):
        return _padded(length, self.unit)

    def shard_length(self, length):
        return self.padded_length(length) // self.params.n

    def _run(self, prog, packets, packet_len):
        r = Runner(prog, packet_len, self.config.block_size, self.kernel)
        r.inputs[:] = packets
        return r.execute()

    def encode(self, data):
        """Split ``data`` into ``n + p`` equally long shards (numpy arrays)."""
        data = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
        n, p = self.params.n, self.params.p
        total = self.padded_length(len(data))
        buf = np.zeros(total, dtype=np.uint8)
        buf[:len(data)] = data
        shard = total // n
        shards = list(buf.reshape(n, shard))
        if p:
            out = self._run(self.encode_program, buf.reshape(8 * n, shard // 8), shard // 8)
            shards += list(out.reshape(p, shard).copy())
        return shards

    def _build_decoder(self, lost):
        return build_decode_program(self.params, lost, self.config)

    def reconstruct(self, shards):
        """Fill in missing (``None``) shards; returns all ``n + p`` shards."""
        n, total = self.params.n, self.params.total
        if len(shards) != total:
            raise ValueError(f"expected {total} shard slots, got {len(shards)}")
        shards = [None if s is None else np.frombuffer(bytes(s), dtype=np.uint8)
                  if not isinstance(s, np.ndarray) else s for s in shards]
        present = [i for i, s in enumerate(shards) if s is not None]
        if len(present) < n:
            raise UnrecoverableError(f"unrecoverable: {len(present)} shards present, need {n}")
        lengths = {len(shards[i]) for i in present}
        if len(lengths) != 1:
            raise ValueError(f"inconsistent shard lengths {sorted(lengths)}")
        (slen,) = lengths
        if slen % (8 * self.config.block_size):
            raise ValueError(f"shard length {slen} is not a multiple of 8 * block size")
        lost = tuple(i for i in range(total) if shards[i] is None)
        if not lost:
            return shards
        lost = _pattern(self.params, lost)
        surv = _survivors(self.params, lost)
        packets = np.stack([shards[i] for i in surv]).reshape(8 * n, slen // 8)
        out = self._run(self._decoder(lost), packets, slen // 8).reshape(len(lost), slen)
        shards = list(shards)
        for k, i in enumerate(lost):
            shards[i] = out[k].copy()
        return shards

    def decode(self, shards, original_length):
        full = self.reconstruct(shards)
        data = np.concatenate(full[:self.params.n])
        if original_length > len(data):
            raise ValueError(f"original length {original_length} exceeds shard data {len(data)}")
        return data[:original_length].tobytes()

    def cache_info(self):
        return self._decoder.cache_info()


def _padded(length, unit):
    return max(1, -(-length // unit)) * unit


@functools.lru_cache(maxsize=16)
def _codec(params, config):
    return Codec(params, config)


def encode(params, config, data):
    return _codec(params, config).encode(data)


def decode(params, config, shards, original_length):
    return _codec(params, config).decode(shards, original_length)


# ------------------------------------------------------------------- oracle

def gf_reference_parity(params, data, block_size=1024):
    """Parity shards by table arithmetic over the bit-sliced packets."""
    n = params.n
    total = _padded(len(data), n * 8 * block_size)
    buf = np.zeros(total, dtype=np.uint8)
    buf[:len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)
    shard = total // n
    packets = buf.reshape(n, 8, shard // 8)
    bits = np.unpackbits(packets[..., None], axis=-1)  # (n, 8 packets, P, 8 bits)
    # element (s, j, b) has bit 7-k taken from packet k
    elems = np.packbits(bits.transpose(0, 2, 3, 1), axis=-1)[..., 0]  # (n, P, 8)
    par = gf256.gf_matmul(coding_matrix(params)[n:], elems.reshape(n, -1))
    pbits = np.unpackbits(par.reshape(params.p, shard // 8, 8)[..., None], axis=-1)
    back = np.packbits(pbits.transpose(0, 3, 1, 2), axis=-1)[..., 0]  # (p, 8, P)
    return list(back.reshape(params.p, shard))


# ---------------------------------------------------------------- wire format

HEADER = struct.Struct("<4sBBBBQI12x")
MAGIC = b"XSLP"
VERSION = 1


def pack_shard(params, index, original_length, block_size, payload):
    head = HEADER.pack(MAGIC, VERSION, params.n, params.p, index, original_length, block_size)
    return head + bytes(payload)


def unpack_shard(blob):
    """Returns ``(fields, payload)``; ``fields`` has n, p, index, length, block_size."""
    if len(blob) < HEADER.size:
        raise ValueError("shard shorter than its header")
    magic, version, n, p, index, length, bs = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("not a shard file (bad magic)")
    if version != VERSION:
        raise ValueError(f"unsupported shard format version {version}")
    fields = dict(n=n, p=p, index=index, length=length, block_size=bs)
    return fields, bytes(blob[HEADER.size:])


# ------------------------------------------------------------------ dataset

def erasure_patterns(params, size=None):
    size = params.p if size is None else size
    return list(itertools.combinations(range(params.total), size))


def slp_metrics(p, with_ccap=True):
    row = dict(xor=count_xor(p), ops=count_ops(p), mem=count_mem(p), nvar=nvar(p))
    if with_ccap:
        row["ccap"] = ccap(p) if p.instructions else 0
    return row


@dataclass
class DatasetReport:
    rows: list = field(default_factory=list)  # (name, {stage: metrics})

    def ratios(self, metric, stage, base="input"):
        vals = [m[stage][metric] / m[base][metric] for _, m in self.rows if m[base][metric]]
        return 100.0 * sum(vals) / len(vals)


def dataset_metrics(params, config=PipelineConfig(), with_ccap=False, check=True,
                    patterns=None, extra_stages=("repair",)):
    """Metrics of the encode program and every ``p``-loss decode program.

    Each row holds metrics of every pipeline stage; ``extra_stages`` adds
    stand-alone runs for comparison: ``"repair"`` (plain RePair, the
    default), ``"fuse_only"`` and ``"greedy"`` (greedy scheduling of the
    fused program instead of the configured scheduler).  With
    ``check`` every stage is verified against the input's semantics.
    """
    rep = DatasetReport()
    items = [("enc", encode_slp(params))]
    pats = erasure_patterns(params) if patterns is None else patterns
    items += [(tuple(pat), decode_slp(params, pat)) for pat in pats]
    for name, p in items:
        stages = pipeline_stages(p, config)
        PROGRAMS.put((params, None if name == "enc" else name, config), stages[-1][1])
        if "repair" in extra_stages and config.compression != "repair":
            stages.append(("repair", repair(p)))
        if "fuse_only" in extra_stages:
            stages.append(("fuse_only", fuse(p)))
        if "greedy" in extra_stages and config.scheduler != "greedy":
            base = dict(stages).get("fuse", p)
            stages.append(("greedy", greedy_schedule(base, config.greedy_capacity(base))))
        if check:
            want = result_masks(p)
            for sname, q in stages:
                if result_masks(q) != want:
                    raise AssertionError(f"stage {sname} changed the semantics of {name}")
        rep.rows.append((name, {s: slp_metrics(q, with_ccap) for s, q in stages}))
    return rep
