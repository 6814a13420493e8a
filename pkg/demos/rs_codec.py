"""Optimize RS(10,4) encode and one decode, then round-trip a buffer.

    python3 demos/rs_codec.py
"""

import time

import numpy as np

from xorslp.codec import Codec, CodecParams, PipelineConfig, decode_slp, encode_slp, pipeline_stages
from xorslp.schedule import ccap
from xorslp.slp import count_mem, count_ops, count_xor, nvar

params, config = CodecParams(10, 4), PipelineConfig()

for label, src in (("encode", encode_slp(params)), ("decode lost 2,4,5,6", decode_slp(params, (2, 4, 5, 6)))):
    print(f"RS(10,4) {label}")
    print(f"  {'stage':<10} {'#xor':>5} {'#ops':>5} {'#M':>5} {'NVar':>5} {'CCap':>5}")
    for name, p in pipeline_stages(src, config):
        print(f"  {name:<10} {count_xor(p):>5} {count_ops(p):>5} {count_mem(p):>5} "
              f"{nvar(p):>5} {ccap(p):>5}")

codec = Codec(params, config)
data = np.random.default_rng(0).integers(0, 256, 10 * 2**20, dtype=np.uint8).tobytes()
t = time.perf_counter()
shards = codec.encode(data)
enc = time.perf_counter() - t
for lost in ((0, 1, 2, 3), (2, 4, 5, 6), (10, 11, 12, 13)):
    part = [None if i in lost else s for i, s in enumerate(shards)]
    t = time.perf_counter()
    assert codec.decode(part, len(data)) == data
    print(f"lost {lost}: recovered in {time.perf_counter() - t:.3f}s")
print(f"encoded 10 MiB in {enc:.3f}s (first call includes compiling the program)")
