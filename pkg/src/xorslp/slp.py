"""Straight-line XOR programs.

A program XORs constant input arrays into variables and returns some of
them.  Two readings of an instruction ``v = a ^ b ^ c`` are supported:

* binary form (``multi=False``): the right-hand side is a nest of binary
  XORs, ``(a ^ b) ^ c``, each of which writes an intermediate array;
* fused form (``multi=True``): one variadic XOR that reads every operand
  once and writes ``v`` once.

The reading only matters for the memory-access count and the cache model;
the set semantics is the same.  A constant in the return list is a copy
goal: the output is that input unchanged.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

CONST, TEMP, ORIG = "c", "t", "v"


class SlpError(ValueError):
    pass


class Term(NamedTuple):
    kind: str
    index: int

    def __str__(self):
        return f"{self.kind}{self.index}"

    @property
    def is_var(self):
        return self.kind != CONST


def const(i):
    return Term(CONST, i)


def temp(i):
    return Term(TEMP, i)


def var(i):
    return Term(ORIG, i)


class Instruction(NamedTuple):
    target: Term
    operands: tuple

    def __str__(self):
        return f"{self.target} = " + " ^ ".join(map(str, self.operands))


@dataclass(frozen=True)
class Slp:
    num_constants: int
    instructions: tuple
    returns: tuple
    multi: bool = False

    def __post_init__(self):
        object.__setattr__(self, "instructions",
                           tuple(Instruction(i.target, tuple(i.operands)) for i in self.instructions))
        object.__setattr__(self, "returns", tuple(self.returns))
        self._validate()

    def _validate(self):
        defined = set()
        for ins in self.instructions:
            if not ins.target.is_var:
                raise SlpError(f"cannot assign to constant {ins.target}")
            if len(ins.operands) < 2:
                raise SlpError(f"instruction {ins} needs at least two operands")
            if len(set(ins.operands)) != len(ins.operands):
                raise SlpError(f"duplicate operand in {ins}")
            for t in ins.operands:
                self._check_term(t, defined, ins)
            defined.add(ins.target)
        for t in self.returns:
            self._check_term(t, defined, "return")

    def _check_term(self, t, defined, where):
        if t.kind == CONST:
            if not 0 <= t.index < self.num_constants:
                raise SlpError(f"constant {t} out of range in {where}")
        elif t not in defined:
            raise SlpError(f"{t} used before definition in {where}")

    def __str__(self):
        return dumps(self)

    @property
    def variables(self):
        seen = {}
        for ins in self.instructions:
            seen.setdefault(ins.target, None)
        return list(seen)

    @property
    def is_ssa(self):
        targets = [ins.target for ins in self.instructions]
        return len(targets) == len(set(targets))

    def replace(self, **kw):
        fields = dict(num_constants=self.num_constants, instructions=self.instructions,
                      returns=self.returns, multi=self.multi)
        fields.update(kw)
        return Slp(**fields)


# ---------------------------------------------------------------- semantics

def value_masks(p):
    """Final value of every variable as a bitmask over constant indices."""
    env = {}

    def look(t):
        return 1 << t.index if t.kind == CONST else env[t]

    for ins in p.instructions:
        acc = 0
        for t in ins.operands:
            acc ^= look(t)
        env[ins.target] = acc
    return env


def _mask_to_set(m):
    out = []
    i = 0
    while m:
        if m & 1:
            out.append(i)
        m >>= 1
        i += 1
    return frozenset(out)


def evaluate(p):
    """Map each variable to its value: the set of constants XORed into it."""
    return {v: _mask_to_set(m) for v, m in value_masks(p).items()}


def result_masks(p):
    env = value_masks(p)
    return tuple(1 << t.index if t.kind == CONST else env[t] for t in p.returns)


def result(p):
    return tuple(_mask_to_set(m) for m in result_masks(p))


# ------------------------------------------------------------------ metrics

def count_xor(p):
    """Number of binary XORs the program performs."""
    return sum(len(ins.operands) - 1 for ins in p.instructions)


def count_ops(p):
    """XOR operators as written: one per variadic instruction when fused."""
    if p.multi:
        return len(p.instructions)
    return count_xor(p)


def count_mem(p):
    """Array reads plus writes.

    A fused instruction with n operands costs n + 1; in binary form every
    XOR reads two arrays and writes one.
    """
    if p.multi:
        return sum(len(ins.operands) + 1 for ins in p.instructions)
    return 3 * count_xor(p)


def nvar(p):
    return len({ins.target for ins in p.instructions})


def term_order(p):
    """Sort key realising the total order on the terms of ``p``.

    Temporals by index, then the other variables by first definition, then
    constants by index.
    """
    pos = {}
    for i, ins in enumerate(p.instructions):
        pos.setdefault(ins.target, i)

    def key(t):
        if t.kind == TEMP:
            return (0, t.index)
        if t.kind == CONST:
            return (2, t.index)
        return (1, pos.get(t, -1), t.index)

    return key


# --------------------------------------------------------------- lowering

def from_bitmatrix(m):
    """One goal per bitmatrix row: the XOR of the columns set in that row.

    Rows with a single set bit become copy goals (the constant is returned
    directly).  All-zero rows cannot be expressed and are rejected.
    """
    m = np.asarray(m, dtype=np.uint8)
    rows, cols = m.shape
    instrs, returns = [], []
    for r in range(rows):
        nz = np.flatnonzero(m[r])
        if len(nz) == 0:
            raise SlpError(f"row {r} is all zero")
        if len(nz) == 1:
            returns.append(const(int(nz[0])))
            continue
        v = var(len(instrs))
        instrs.append(Instruction(v, tuple(const(int(j)) for j in nz)))
        returns.append(v)
    return Slp(cols, tuple(instrs), tuple(returns))


def vcp_instance(nodes, edges):
    """Adversarial program built from an undirected graph.

    Each node ``a`` gets two private neighbours (lambda_a, mu_a); every edge
    ``(x, y)`` of the extended graph becomes a goal ``rho ^ x ^ y``.  Returns
    the program together with a name for each constant.
    """
    nodes = list(nodes)
    index = {a: i + 1 for i, a in enumerate(nodes)}
    names = ["rho"] + [str(a) for a in nodes]
    local = {}
    for a in nodes:
        local[a] = (len(names), len(names) + 1)
        names += [f"lambda_{a}", f"mu_{a}"]
    goal_pairs = []
    seen = set()
    for x, y in edges:
        if x == y or frozenset((x, y)) in seen:
            raise SlpError(f"not a simple graph: edge {(x, y)}")
        seen.add(frozenset((x, y)))
        goal_pairs.append((index[x], index[y]))
    for a in nodes:
        lam, mu = local[a]
        goal_pairs += [(index[a], lam), (index[a], mu)]
    instrs = []
    for k, (x, y) in enumerate(goal_pairs):
        ops = sorted((0, x, y))
        instrs.append(Instruction(var(k), tuple(const(i) for i in ops)))
    p = Slp(len(names), tuple(instrs), tuple(ins.target for ins in instrs))
    return p, names


# ------------------------------------------------------------ text format

def dumps(p):
    lines = ["# multislp"] if p.multi else []
    lines += [str(ins) for ins in p.instructions]
    lines.append("return " + " ".join(map(str, p.returns)))
    return "\n".join(lines) + "\n"


def _parse_term(tok):
    kind, digits = tok[:1], tok[1:]
    if kind not in (CONST, TEMP, ORIG) or not digits.isdigit():
        raise SlpError(f"bad term {tok!r}")
    return Term(kind, int(digits))


def loads(text, num_constants=None, multi=None):
    """Parse the line format written by :func:`dumps`.

    ``num_constants`` defaults to one more than the largest constant index.
    """
    instrs, returns, found_multi = [], None, False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            found_multi |= line[1:].strip() == "multislp"
            continue
        if returns is not None:
            raise SlpError(f"line {lineno}: text after return")
        toks = line.split()
        if toks[0] == "return":
            returns = [_parse_term(t) for t in toks[1:]]
            continue
        if len(toks) < 5 or toks[1] != "=" or any(t != "^" for t in toks[3::2]) or len(toks) % 2 == 0:
            raise SlpError(f"line {lineno}: cannot parse {line!r}")
        instrs.append(Instruction(_parse_term(toks[0]), tuple(_parse_term(t) for t in toks[2::2])))
    if returns is None:
        raise SlpError("missing return line")
    if num_constants is None:
        idx = [t.index for ins in instrs for t in ins.operands if t.kind == CONST]
        idx += [t.index for t in returns if t.kind == CONST]
        num_constants = max(idx, default=-1) + 1
    if multi is None:
        multi = found_multi
    return Slp(num_constants, tuple(instrs), tuple(returns), multi)
