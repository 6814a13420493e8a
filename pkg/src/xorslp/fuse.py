"""XOR fusion: inline variables that are read exactly once.

Unfolding ``v`` into its single reader saves one write and one read of
``v``, two memory accesses per unfold.  Variables read twice or more are
left alone: inlining them would repeat their XORs.  Returned variables
count as read by the return statement, so goals always materialise.

An unfold whose operands would collide with an operand already present in
the reader is skipped.  Splicing it would need the duplicate pair to
cancel, which changes the reader's operand count by more than the
two-access saving and can even collapse it to a plain copy.
"""

from collections import Counter

from .slp import Instruction, Slp, SlpError, count_mem

__all__ = ["fuse", "mem_savings", "use_counts"]


def use_counts(p):
    """Reads of each variable, counting each return slot as one read."""
    uses = Counter(t for ins in p.instructions for t in ins.operands if t.is_var)
    uses.update(t for t in p.returns if t.is_var)
    return uses


def fuse(p, order=None):
    """Fuse ``p`` into a program of variadic XORs (``multi=True``).

    Readers are processed in definition order, or in the permutation of
    instruction indices given by ``order`` (used to check that the result
    does not depend on the order; readers must still follow their defs).
    """
    if not p.is_ssa:
        raise SlpError("fusion needs each variable assigned once")
    uses = use_counts(p)
    defs = {ins.target: list(ins.operands) for ins in p.instructions}
    inlined = set()
    idx = range(len(p.instructions)) if order is None else order
    targets = [ins.target for ins in p.instructions]
    for i in idx:
        v = targets[i]
        ops = []
        for t in defs[v]:
            if t.is_var and uses[t] == 1 and _can_splice(defs[t], defs[v], ops, t):
                ops.extend(defs[t])
                inlined.add(t)
            else:
                ops.append(t)
        defs[v] = ops
    instrs = [Instruction(v, tuple(defs[v])) for v in targets if v not in inlined]
    return Slp(p.num_constants, tuple(instrs), p.returns, multi=True)


def _can_splice(inner, outer, done, skip):
    present = set(done) | set(outer)
    present.discard(skip)
    return present.isdisjoint(inner)


def mem_savings(p):
    return count_mem(p) - count_mem(fuse(p))
