"""Cache-aware rescheduling of XOR programs.

The cache model is an LRU sequence of blocks, each block holding one
constant or one variable.  Running ``v = t1 ^ ... ^ tk`` in fused form
touches (or loads) each operand in order and then touches (or allocates)
``v``.  In binary form the instruction is a chain of two-input XORs that
accumulate into ``v``: ``t1, t2, v`` then ``v, ti, v`` for each later
operand.  Loads and evictions are I/O transfers; touches and allocations
are free.

Scheduling plays a pebble game on the computation graph: pebbles are
buffers, putting a pebble on a node computes it, and a pebble can move off
a node whose parents are all computed.  The two heuristics here, DFS
postorder and a cache-greedy bottom-up pass, return ordinary programs whose
variables are the pebbles.
"""

import heapq
from collections import OrderedDict
from dataclasses import dataclass, field

from .slp import CONST, Instruction, Slp, SlpError, Term, const, term_order, var

__all__ = [
    "LOAD", "EVICT", "TOUCH", "ALLOC", "CacheTooSmall",
    "CompGraph", "Step", "Strategy", "build_graph", "simulate", "iocost", "ccap",
    "format_trace", "dfs_strategy", "greedy_strategy", "dfs_schedule", "greedy_schedule",
    "strategy_to_slp", "check_strategy", "min_capacity", "reloads", "cache_states",
]

LOAD, EVICT, TOUCH, ALLOC = "LOAD", "EVICT", "TOUCH", "ALLOC"


class CacheTooSmall(ValueError):
    pass


# ------------------------------------------------------------------ graph

@dataclass
class CompGraph:
    """Value-dependency DAG of a program.

    Inner nodes are the indices of the instructions they come from; leaves
    are constant terms.  ``returns`` mirrors the program's return list with
    each variable replaced by its node.
    """
    num_constants: int
    children: dict  # inner node -> tuple of children, operand order
    parents: dict  # node -> list of inner parents
    goals: list  # distinct goal nodes, return order
    returns: tuple
    rank: dict  # inner node -> sort key realising the term order
    multi: bool = False
    labels: dict = field(default_factory=dict)  # inner node -> source variable

    def key(self, x):
        if isinstance(x, Term):
            return (2, x.index)
        return self.rank[x]

    @property
    def inner(self):
        return list(self.children)

    @property
    def leaves(self):
        return sorted({c for cs in self.children.values() for c in cs if isinstance(c, Term)})


def build_graph(p):
    order = term_order(p)
    env = {}
    children, rank, labels = {}, {}, {}
    for i, ins in enumerate(p.instructions):
        children[i] = tuple(t if t.kind == CONST else env[t] for t in ins.operands)
        rank[i] = order(ins.target) + (i,)
        labels[i] = ins.target
        env[ins.target] = i
    returns = tuple(t if t.kind == CONST else env[t] for t in p.returns)
    goals = list(dict.fromkeys(r for r in returns if not isinstance(r, Term)))
    # keep only what the goals need
    live, stack = set(), list(goals)
    while stack:
        n = stack.pop()
        if n in live:
            continue
        live.add(n)
        stack.extend(c for c in children[n] if not isinstance(c, Term))
    children = {n: cs for n, cs in children.items() if n in live}
    parents = {}
    for n, cs in children.items():
        for c in cs:
            parents.setdefault(c, []).append(n)
    return CompGraph(p.num_constants, children, parents, goals, returns,
                     {n: rank[n] for n in children}, p.multi,
                     {n: labels[n] for n in children})


# ------------------------------------------------------------ cache model

def _accesses(ins, multi):
    """Block accesses of one instruction: (block, is_target) pairs."""
    ops, v = ins.operands, ins.target
    if multi or len(ops) == 2:
        return [(t, False) for t in ops] + [(v, True)]
    out = [(ops[0], False), (ops[1], False), (v, True)]
    for t in ops[2:]:
        out += [(v, False), (t, False), (v, False)]
    return out


def _width(ins, multi):
    return len(ins.operands) + 1 if multi else 3


def min_capacity(p):
    """Smallest cache that can hold one instruction's working set."""
    return max((_width(ins, p.multi) for ins in p.instructions), default=1)


class _Lru:
    def __init__(self, capacity, record=True):
        self.capacity = capacity
        self.blocks = OrderedDict()
        self.seen = set()
        self.events = [] if record else None
        self.loads = self.evicts = self.reloads = 0

    def _log(self, kind, b):
        if self.events is not None:
            self.events.append((kind, b))

    def _make_room(self):
        if len(self.blocks) >= self.capacity:
            b, _ = self.blocks.popitem(last=False)
            self.evicts += 1
            self._log(EVICT, b)

    def use(self, b, write=False):
        if b in self.blocks:
            self.blocks.move_to_end(b)
            self._log(TOUCH, b)
            return
        self._make_room()
        self.blocks[b] = None
        if write:
            self._log(ALLOC, b)
        else:
            if b in self.seen:
                self.reloads += 1
            self.loads += 1
            self._log(LOAD, b)
        self.seen.add(b)

    def run(self, ins, multi):
        for b, write in _accesses(ins, multi):
            self.use(b, write)


def _check_capacity(p, capacity):
    need = min_capacity(p)
    if capacity < need:
        raise CacheTooSmall(f"capacity {capacity} below working set {need}")


def simulate(p, capacity, final_state=False):
    """Event trace of running ``p`` on an LRU cache of ``capacity`` blocks.

    With ``final_state`` the cache content (LRU first) is returned as well.
    """
    _check_capacity(p, capacity)
    cache = _Lru(capacity)
    for ins in p.instructions:
        cache.run(ins, p.multi)
    if final_state:
        return cache.events, list(cache.blocks)
    return cache.events


def cache_states(p, capacity):
    """Cache content (LRU first) after each instruction of ``p``."""
    _check_capacity(p, capacity)
    cache = _Lru(capacity, record=False)
    for ins in p.instructions:
        cache.run(ins, p.multi)
        yield tuple(cache.blocks)


def _run_counts(p, capacity):
    cache = _Lru(capacity, record=False)
    for ins in p.instructions:
        cache.run(ins, p.multi)
    return cache


def iocost(p, capacity):
    _check_capacity(p, capacity)
    c = _run_counts(p, capacity)
    return c.loads + c.evicts


def reloads(p, capacity):
    _check_capacity(p, capacity)
    return _run_counts(p, capacity).reloads


def ccap(p):
    """Smallest capacity that runs ``p`` without loading a block twice.

    Binary search; valid because LRU content at a smaller capacity is always
    contained in the content at a larger one.
    """
    lo = min_capacity(p)
    hi = max(lo, len({b for ins in p.instructions for b, _ in _accesses(ins, p.multi)}))
    while lo < hi:
        mid = (lo + hi) // 2
        if _run_counts(p, mid).reloads:
            lo = mid + 1
        else:
            hi = mid
    return lo


def format_trace(events):
    return "\n".join(f"{kind} {b}" for kind, b in events) + ("\n" if events else "")


# ------------------------------------------------------------- strategies

class Step:
    __slots__ = ("node", "pebble", "operands")

    def __init__(self, node, pebble, operands):
        self.node, self.pebble, self.operands = node, pebble, tuple(operands)

    def __repr__(self):
        ops = ", ".join(f"p{o}" if isinstance(o, int) else str(o) for o in self.operands)
        return f"Step({self.node}: p{self.pebble} <- {ops})"


@dataclass
class Strategy:
    """Pebbling moves; operands are pebble numbers or constant terms."""
    steps: list
    final: dict  # node -> pebble resting on it at the end
    num_pebbles: int


class _Board:
    """Pebble bookkeeping shared by both heuristics."""

    def __init__(self, g):
        self.g = g
        self.pebble_of = {}
        self.node_of = {}
        self.done = set()
        self.waiting = {n: len(g.parents.get(n, ())) for n in g.children}
        self.goals = set(g.goals)
        self.movable = []  # heap of (key, node)
        self.steps = []
        self.fresh = 0

    def operand(self, c):
        return c if isinstance(c, Term) else self.pebble_of[c]

    def is_movable(self, m):
        return m in self.pebble_of and m not in self.goals and self.waiting[m] == 0

    def release_children(self, n):
        """Mark ``n`` as current: its children may become movable."""
        freed = []
        for c in self.g.children[n]:
            if not isinstance(c, Term):
                self.waiting[c] -= 1
                if self.is_movable(c):
                    freed.append(c)
                    heapq.heappush(self.movable, (self.g.key(c), c))
        return freed

    def movable_nodes(self):
        while self.movable and not self.is_movable(self.movable[0][1]):
            heapq.heappop(self.movable)
        return self.movable

    def smallest_movable(self, accept=lambda p: True):
        heap = self.movable_nodes()
        for _, m in sorted(heap):
            if self.is_movable(m) and accept(self.pebble_of[m]):
                return m
        return None

    def place(self, n, operands, src=None):
        if src is None:
            p = self.fresh
            self.fresh += 1
        else:
            p = self.pebble_of.pop(src)
            del self.node_of[p]
        self.pebble_of[n] = p
        self.node_of[p] = n
        self.done.add(n)
        self.steps.append(Step(n, p, operands))
        return p

    def strategy(self):
        return Strategy(self.steps, dict(self.pebble_of), self.fresh)


def dfs_strategy(g):
    """Postorder traversal; goals and children in term order.

    The destination pebble is, in order of preference: the pebble of the
    most recently completed child that can move, any pebble that can move
    (smallest node first), a fresh pebble.
    """
    b = _Board(g)
    finished = {}
    for goal in sorted(g.goals, key=g.key):
        if goal in b.done:
            continue
        stack = [(goal, iter(sorted(g.children[goal], key=g.key)))]
        while stack:
            n, it = stack[-1]
            nxt = next((c for c in it if not isinstance(c, Term) and c not in b.done), None)
            if nxt is not None:
                stack.append((nxt, iter(sorted(g.children[nxt], key=g.key))))
                continue
            stack.pop()
            kids = sorted(g.children[n], key=g.key)
            ops = [b.operand(c) for c in kids]
            freed = b.release_children(n)
            src = max(freed, key=finished.get) if freed else b.smallest_movable()
            b.place(n, ops, src)
            finished[n] = len(finished)
    return b.strategy()


def greedy_strategy(g, capacity):
    """Bottom-up: compute the ready node with most children already cached.

    Ties on the cached fraction go to the smaller node; operands list the
    cached children first.  The destination is the smallest movable pebble
    still in cache, else any movable pebble, else a fresh one.
    """
    need = max((len(cs) + 1 if g.multi else 3 for cs in g.children.values()), default=1)
    if capacity < need:
        raise CacheTooSmall(f"capacity {capacity} below working set {need}")
    b = _Board(g)
    cache = _Lru(capacity, record=False)
    missing = {n: sum(1 for c in cs if not isinstance(c, Term)) for n, cs in g.children.items()}
    ready = {n for n, k in missing.items() if k == 0}

    def block(c):
        return c if isinstance(c, Term) else var(b.pebble_of[c])

    while ready:
        best, best_h, best_c = None, -1, 1
        for n in ready:
            cs = g.children[n]
            h = sum(1 for c in cs if block(c) in cache.blocks)
            # compare h/len(cs) against best_h/best_c without division
            if best is None or h * best_c > best_h * len(cs) or (
                    h * best_c == best_h * len(cs) and g.key(n) < g.key(best)):
                best, best_h, best_c = n, h, len(cs)
        n = best
        ready.discard(n)
        kids = sorted(g.children[n], key=g.key)
        hit = [c for c in kids if block(c) in cache.blocks]
        kids = hit + [c for c in kids if c not in hit]
        ops = [b.operand(c) for c in kids]
        opblocks = [block(c) for c in kids]
        b.release_children(n)
        for ob in (opblocks if g.multi or len(opblocks) == 2 else opblocks[:2]):
            cache.use(ob)
        src = b.smallest_movable(lambda p: var(p) in cache.blocks)
        if src is None:
            src = b.smallest_movable()
        p = b.place(n, ops, src)
        target = var(p)
        cache.use(target, write=True)
        if not (g.multi or len(opblocks) == 2):
            for ob in opblocks[2:]:
                cache.use(target)
                cache.use(ob)
                cache.use(target)
        for par in g.parents.get(n, ()):
            missing[par] -= 1
            if missing[par] == 0:
                ready.add(par)
    return b.strategy()


def check_strategy(g, s):
    """Raise if ``s`` is not a winning strategy for ``g``."""
    on = {}  # pebble -> node
    done = set()
    for st in s.steps:
        if st.node in done:
            raise SlpError(f"node {st.node} pebbled twice")
        read = [o if isinstance(o, Term) else on.get(o) for o in st.operands]
        if sorted(read, key=g.key) != sorted(g.children[st.node], key=g.key):
            raise SlpError(f"node {st.node} does not read exactly its children")
        done.add(st.node)
        on[st.pebble] = st.node
    final = {n: p for p, n in on.items()}
    for goal in g.goals:
        if final.get(goal) is None:
            raise SlpError(f"goal {goal} is not pebbled")
    return True


def strategy_to_slp(s, g):
    """Turn pebbles into variables and return the goal pebbles in order."""
    instrs = []
    for st in s.steps:
        ops = tuple(o if isinstance(o, Term) else var(o) for o in st.operands)
        instrs.append(Instruction(var(st.pebble), ops))
    rets = []
    for r in g.returns:
        if isinstance(r, Term):
            rets.append(r)
        elif r in s.final:
            rets.append(var(s.final[r]))
        else:
            raise SlpError(f"goal {r} is not pebbled")
    return Slp(g.num_constants, tuple(instrs), tuple(rets), g.multi)


def dfs_schedule(p):
    g = build_graph(p)
    return strategy_to_slp(dfs_strategy(g), g)


def greedy_schedule(p, capacity):
    g = build_graph(p)
    return strategy_to_slp(greedy_strategy(g, capacity), g)
