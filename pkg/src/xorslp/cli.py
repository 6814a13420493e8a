"""Command line: encode/decode files, report program metrics, benchmark.

Exit status is 0 on success, 1 on a usage error and 2 when the operation
itself fails (unreadable input, too few shards, failed self-test).
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import gf256
from .codec import (Codec, CodecParams, PipelineConfig, UnrecoverableError, decode_slp,
                    encode_slp, erasure_patterns, gf_reference_parity, pack_shard,
                    pipeline_stages, unpack_shard)
from .executor import BLOCK_SIZES, Runner, compile_program
from .schedule import iocost
from .slp import SlpError, count_mem, count_ops, count_xor, loads, nvar, result_masks
from .schedule import ccap

DEFAULT_PIPELINE = "xorrepair,fuse,dfs"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args):
    return PipelineConfig.parse(args.pipeline, block_size=args.block_size,
                                capacity=getattr(args, "capacity", None))


def _params(args):
    return CodecParams(args.n, args.p, args.matrix)


def _emit(args, obj, text):
    if args.json:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _table(header, rows):
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- encode

def cmd_encode(args):
    params, config = _params(args), _config(args)
    src = Path(args.file)
    data = src.read_bytes()
    shards = Codec(params, config).encode(data)
    out_dir = Path(args.out_dir) if args.out_dir else src.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for k, s in enumerate(shards):
        path = out_dir / f"{src.stem}.shard{k}"
        path.write_bytes(pack_shard(params, k, len(data), config.block_size, s))
        names.append(str(path))
    _emit(args, {"shards": names, "length": len(data)},
          f"wrote {len(names)} shards for {len(data)} bytes")
    return 0


# ---------------------------------------------------------------- decode

def cmd_decode(args):
    heads, payloads = [], {}
    for name in args.shards:
        head, payload = unpack_shard(Path(name).read_bytes())
        heads.append(head)
        if head["index"] in payloads:
            raise ValueError(f"shard {head['index']} given twice")
        payloads[head["index"]] = payload
    first = heads[0]
    for h in heads[1:]:
        for key in ("n", "p", "length", "block_size"):
            if h[key] != first[key]:
                raise ValueError(f"shard headers disagree on {key}")
    params = CodecParams(first["n"], first["p"], args.matrix)
    if len(payloads) < params.n:
        raise UnrecoverableError(
            f"unrecoverable: {len(payloads)} shards present, need {params.n}")
    config = PipelineConfig.parse(args.pipeline, block_size=first["block_size"])
    shards = [payloads.get(i) for i in range(params.total)]
    data = Codec(params, config).decode(shards, first["length"])
    out = Path(args.output)
    out.write_bytes(data)
    _emit(args, {"output": str(out), "length": len(data)},
          f"recovered {len(data)} bytes into {out}")
    return 0


# --------------------------------------------------------------- analyze

def _metrics(p, capacity):
    row = {"xor": count_xor(p), "ops": count_ops(p), "mem": count_mem(p), "nvar": nvar(p),
           "ccap": ccap(p) if p.instructions else 0}
    if capacity is not None:
        row["iocost"] = iocost(p, max(capacity, 1)) if p.instructions else 0
    return row


def cmd_analyze(args):
    config = _config(args)
    if args.slp:
        source = loads(Path(args.slp).read_text())
        what = args.slp
    else:
        params = _params(args)
        if args.pattern:
            lost = [int(x) for x in args.pattern.split(",") if x.strip()]
            source = decode_slp(params, lost)
            what = f"RS({params.n},{params.p}) decode, lost {lost}"
        else:
            source = encode_slp(params)
            what = f"RS({params.n},{params.p}) encode"
    stages = pipeline_stages(source, config)
    want = result_masks(source)
    for name, q in stages:
        if result_masks(q) != want:
            raise SlpError(f"stage {name} changed the program's result")
    rows = [(name, _metrics(q, args.capacity)) for name, q in stages]
    header = ["stage", "#xor", "#ops", "#M", "NVar", "CCap"]
    keys = ["xor", "ops", "mem", "nvar", "ccap"]
    if args.capacity is not None:
        header.append(f"IOcost({args.capacity})")
        keys.append("iocost")
    text = f"{what}; pipeline {config.label()}\n"
    text += _table(header, [[name] + [m[k] for k in keys] for name, m in rows])
    _emit(args, {"program": what, "pipeline": config.label(),
                 "stages": [dict(stage=n, **m) for n, m in rows]}, text)
    return 0


# ----------------------------------------------------------------- bench

def _throughput(prog, nin, size, block_size, reps, kernel):
    length = max(block_size, size // nin // block_size * block_size)
    r = Runner(prog, length, block_size, kernel)
    r.inputs[:] = np.random.default_rng(0).integers(0, 256, r.inputs.shape, dtype=np.uint8)
    r.execute()  # warm up (and compile)
    best = float("inf")
    for _ in range(reps):
        t = time.perf_counter()
        r.execute()
        best = min(best, time.perf_counter() - t)
    return nin * length / best / 1e9


def cmd_bench(args):
    params = _params(args)
    pipelines = args.pipelines.split(";")
    sizes = [int(b) for b in args.block_sizes.split(",")] if args.block_sizes else list(BLOCK_SIZES)
    progs = {}
    source = encode_slp(params)
    for pl in pipelines:
        progs[pl] = compile_program(pipeline_stages(source, PipelineConfig.parse(pl))[-1][1])
    rows, out = [], []
    for bs in sizes:
        row = [bs]
        rec = {"block_size": bs}
        for pl in pipelines:
            gbps = _throughput(progs[pl], source.num_constants, args.size, bs, args.reps, args.kernel)
            row.append(f"{gbps:.3f}")
            rec[pl] = gbps
        rows.append(row)
        out.append(rec)
    text = (f"RS({params.n},{params.p}) encode throughput, GB/s of data "
            f"({args.size} bytes, best of {args.reps}, kernel {args.kernel})\n")
    text += _table(["block"] + pipelines, rows)
    _emit(args, {"rows": out}, text)
    return 0


# -------------------------------------------------------------- selftest

def _suite_field(fault):
    table = gf256.MUL_TABLE.copy()
    if fault:
        table[3, 7] ^= 1
    for a in range(256):
        for b in range(256):
            if table[a, b] != gf256.mul_slow(a, b):
                return f"mul table wrong at ({a}, {b})"
    return None


def _suite_tilde(fault):
    mats = np.stack([gf256.tilde(x) for x in range(256)]).astype(np.int64)
    ys = np.stack([gf256.byte_to_bits(y) for y in range(256)], axis=1)  # (8, 256)
    prod = (mats @ ys) % 2  # (x, bit, y)
    weights = 1 << np.arange(7, -1, -1)  # row 0 is the most significant bit
    got = np.einsum("xby,b->xy", prod, weights)
    bad = np.argwhere(got != gf256.MUL_TABLE)
    if len(bad):
        x, y = bad[0]
        return f"bit-matrix of {x} wrong on {y}"
    return None


def _quick_params():
    return [CodecParams(n, p) for n in (8, 9, 10) for p in (2, 3, 4)]


def _suite_pipeline(fault):
    config = PipelineConfig()
    for params in _quick_params():
        sources = [encode_slp(params)] + [decode_slp(params, pat)
                                          for pat in erasure_patterns(params)[::97]]
        for src in sources:
            want = result_masks(src)
            for name, q in pipeline_stages(src, config):
                if result_masks(q) != want:
                    return f"{name} changed RS({params.n},{params.p}) program"
    return None


def _suite_roundtrip(fault):
    rng = np.random.default_rng(7)
    for params in _quick_params():
        codec = Codec(params, PipelineConfig(block_size=64))
        data = rng.integers(0, 256, 5000 + params.n, dtype=np.uint8).tobytes()
        shards = codec.encode(data)
        ref = gf_reference_parity(params, data, 64)
        if any((a != b).any() for a, b in zip(shards[params.n:], ref)):
            return f"RS({params.n},{params.p}) parity differs from table arithmetic"
        for pat in erasure_patterns(params)[::53]:
            part = [None if i in pat else s for i, s in enumerate(shards)]
            if codec.decode(part, len(data)) != data:
                return f"RS({params.n},{params.p}) failed to recover pattern {pat}"
    return None


SUITES = {"field": _suite_field, "tilde": _suite_tilde,
          "pipeline": _suite_pipeline, "roundtrip": _suite_roundtrip}


def cmd_selftest(args):
    chosen = args.suites.split(",") if args.suites else list(SUITES)
    results, failed = {}, False
    lines = []
    for name in chosen:
        if name not in SUITES:
            raise UsageError(f"unknown suite {name!r}")
        t = time.perf_counter()
        err = SUITES[name](args.inject_fault == name)
        results[name] = {"ok": err is None, "error": err, "seconds": time.perf_counter() - t}
        failed |= err is not None
        lines.append(f"{'PASS' if err is None else 'FAIL'} {name}"
                     + (f": {err}" if err else "") + f" ({results[name]['seconds']:.1f}s)")
    _emit(args, results, "\n".join(lines))
    return 2 if failed else 0


# ------------------------------------------------------------------ main

def build_parser():
    ap = _Parser(prog="xorslp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, code=True, pipeline=True):
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--matrix", default="isal", choices=["isal", "vandermonde"])
        if code:
            p.add_argument("--n", type=int, default=10, help="data shards")
            p.add_argument("--p", type=int, default=4, help="parity shards")
        if pipeline:
            p.add_argument("--pipeline", default=DEFAULT_PIPELINE,
                           help="comma list from {none,repair,xorrepair},fuse,{dfs,greedy}")
            p.add_argument("--block-size", type=int, default=1024)

    p = sub.add_parser("encode", help="split a file into shard files")
    common(p)
    p.add_argument("file")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="rebuild a file from shard files")
    common(p, code=False)
    p.add_argument("shards", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("analyze", help="metrics of each pipeline stage")
    common(p)
    p.add_argument("--pattern", help="lost shards, e.g. 2,4,5,6 (decode program)")
    p.add_argument("--slp", help="analyse a program file instead of an RS code")
    p.add_argument("--capacity", type=int, help="also report IOcost at this capacity")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="encode throughput per block size")
    common(p, pipeline=False)
    p.add_argument("--pipelines", default=f"none;{DEFAULT_PIPELINE}",
                   help="semicolon-separated pipelines to compare")
    p.add_argument("--block-sizes", help="comma list (default 64..4096)")
    p.add_argument("--size", type=int, default=10 * 2**20, help="data bytes per run")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--kernel", default="auto", choices=["auto", "wide", "bytes", "numpy"])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in consistency suites")
    p.add_argument("--json", action="store_true")
    p.add_argument("--suites", help=f"comma list from {','.join(SUITES)}")
    p.add_argument("--inject-fault", choices=list(SUITES), help="corrupt one suite's input")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("missing command")
        return args.func(args)
    except UsageError as e:
        print(f"xorslp: usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (OSError, ValueError) as e:
        print(f"xorslp: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
