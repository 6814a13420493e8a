"""Walk the optimizer stages on a six-constant toy program.

    python3 demos/small_programs.py
"""

from xorslp.compress import repair, xor_repair
from xorslp.fuse import fuse
from xorslp.schedule import ccap, dfs_schedule, format_trace, greedy_schedule, iocost, simulate
from xorslp.slp import Instruction, Slp, const, count_mem, count_xor, dumps, nvar, result, var

a, b, c, d, e, f = (const(i) for i in range(6))

# three goals sharing the subterms a+b+c and b+c+d
src = Slp(6, [
    Instruction(var(1), (a, b, c, d)),
    Instruction(var(2), (b, c, d, e)),
    Instruction(var(3), (a, b, c, e, f)),
], [var(1), var(2), var(3)])


def show(name, p):
    print(f"--- {name}: #xor {count_xor(p)}, #M {count_mem(p)}, NVar {nvar(p)}, CCap {ccap(p)}")
    print(dumps(p), end="")


show("input", src)
show("repair", repair(src))
compressed = xor_repair(src)
show("xorrepair", compressed)
fused = fuse(compressed)
show("fused", fused)
for name, q in (("dfs", dfs_schedule(fused)), ("greedy(6)", greedy_schedule(fused, 6))):
    assert result(q) == result(src)
    show(name, q)
    print(f"IOcost at 6 blocks: {iocost(q, 6)}")

print("--- LRU trace of the dfs schedule with 6 blocks")
print(format_trace(simulate(dfs_schedule(fused), 6)), end="")
