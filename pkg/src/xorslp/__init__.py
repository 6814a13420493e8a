"""Optimising compiler for XOR-based erasure coding.

Coding matrices over GF(2^8) are lowered to straight-line XOR programs,
which are then shrunk (``compress``), fused (``fuse``) and rescheduled for
the cache (``schedule``) before running block by block (``executor``).
``codec`` ties the stages into a Reed-Solomon encoder and decoder.
"""

from . import codec, compress, executor, fuse, gf256, schedule, slp
from .codec import Codec, CodecParams, PipelineConfig

__version__ = "0.1.0"
