"""XOR-count reduction by recursive pairing.

``repair`` repeatedly factors out the pair of terms that co-occurs in the
most goal definitions.  ``xor_repair`` additionally rewrites each goal, after
every pairing, as a XOR of existing temporaries plus leftover constants when
that is strictly shorter; this is where cancellation (x ^ x = 0) pays off.

Ties are broken by the total order on terms (temporaries by creation,
then constants by index) extended lexicographically to pairs, so both
passes are deterministic.
"""

import heapq
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .slp import CONST, ORIG, TEMP, Instruction, Slp, SlpError, const, temp, value_masks

__all__ = ["PairKey", "apply_pair", "repair", "rebuild", "xor_repair"]

# Internal term ids: temporaries are 0, 1, ...; constants start at _CBASE.
# Integer order on ids is the term order.
_CBASE = 1 << 40


class PairKey(NamedTuple):
    """Unordered pair of terms stored smaller first.

    ``rank()`` orders pairs lexicographically under the term order
    (temporaries by creation, then constants by index).
    """
    lo: object
    hi: object

    @classmethod
    def of(cls, a, b):
        lo, hi = sorted((a, b), key=_term_rank)
        return cls(lo, hi)

    def rank(self):
        return (_term_rank(self.lo), _term_rank(self.hi))


def _term_rank(t):
    return _CBASE + t.index if t.kind == CONST else t.index


def _to_id(t, tmap):
    if t.kind == CONST:
        return _CBASE + t.index
    if t.kind == TEMP:
        return tmap[t]
    raise SlpError(f"unexpected original variable {t}")


def _to_term(i):
    return const(i - _CBASE) if i >= _CBASE else temp(i)


class _State:
    """Mutable pairing state: a temporary block and a set of open goals."""

    def __init__(self, p):
        self.num_constants = p.num_constants
        self.multi = p.multi
        tmap = {}
        self.temps = []  # operand id tuples
        self.temp_masks = []
        masks = value_masks(p)
        self.orig = {}  # original Term -> set of ids, in definition order
        self.alias = {}  # collapsed original -> temporary (or constant) id
        for ins in p.instructions:
            if ins.target.kind == TEMP:
                if ins.target in tmap:
                    raise SlpError(f"{ins.target} assigned twice")
                tmap[ins.target] = len(self.temps)
                self.temps.append(tuple(_to_id(t, tmap) for t in ins.operands))
                self.temp_masks.append(masks[ins.target])
                continue
            if ins.target in self.orig or ins.target in self.alias:
                raise SlpError(f"{ins.target} assigned twice")
            d = set()
            for t in ins.operands:
                ids = self._expand(t, tmap)
                d ^= ids
            self._set_orig(ins.target, d, masks[ins.target])
        self.returns = list(p.returns)
        self.ret_tmap = tmap
        n = self.num_constants
        self._orig_rows = {v: _bits(masks[v], n) for v in self.orig}
        self._tm = np.zeros((max(16, 2 * len(self.temps)), n))
        self._tsz = np.zeros(len(self._tm))
        for k, x in enumerate(self.temp_masks):
            self._tm[k] = _bits(x, n)
            self._tsz[k] = self._tm[k].sum()
        self._init_counts()

    def _expand(self, t, tmap):
        if t.kind == ORIG:
            if t in self.alias:
                return {self.alias[t]}
            return set(self.orig[t])
        return {_to_id(t, tmap)}

    def _set_orig(self, v, d, mask):
        if not d:
            raise SlpError(f"{v} evaluates to the empty set")
        if len(d) == 1:
            # a single temporary, or a constant that becomes a copy goal
            (self.alias[v],) = d
        else:
            self.orig[v] = d

    # -- pair bookkeeping -------------------------------------------------

    def _init_counts(self):
        self.counts = {}
        self.occ = {}
        self.heap = []
        for v, d in self.orig.items():
            for t in d:
                self.occ.setdefault(t, set()).add(v)
            for a, b in combinations(sorted(d), 2):
                self.counts[(a, b)] = self.counts.get((a, b), 0) + 1
        for (a, b), c in self.counts.items():
            self.heap.append((-c, a, b))
        heapq.heapify(self.heap)

    def _bump(self, a, b, delta):
        if a > b:
            a, b = b, a
        c = self.counts.get((a, b), 0) + delta
        if c:
            self.counts[(a, b)] = c
            # Decrements leave an over-counted entry behind; best_pair fixes
            # those lazily, so only increments need a fresh entry.
            if delta > 0:
                heapq.heappush(self.heap, (-c, a, b))
        else:
            del self.counts[(a, b)]

    def _drop_def(self, v):
        d = self.orig.pop(v)
        for t in d:
            self.occ[t].discard(v)
        for a, b in combinations(sorted(d), 2):
            self._bump(a, b, -1)

    def _add_def(self, v, d):
        self.orig[v] = d
        for t in d:
            self.occ.setdefault(t, set()).add(v)
        for a, b in combinations(sorted(d), 2):
            self._bump(a, b, 1)

    def best_pair(self):
        # Every live pair has an entry whose stored count is at least its
        # real count, so a top entry that is exact is the true maximum.
        while self.heap:
            c, a, b = self.heap[0]
            real = self.counts.get((a, b), 0)
            if real == -c:
                return a, b
            heapq.heappop(self.heap)
            if real:
                heapq.heappush(self.heap, (-real, a, b))
        return None

    def pair(self, a, b):
        """Introduce a temporary for ``a ^ b`` and substitute it everywhere."""
        if a > b:
            a, b = b, a
        users = self.occ.get(a, set()) & self.occ.get(b, set())
        if not users:
            raise SlpError(f"pair ({_to_term(a)}, {_to_term(b)}) does not occur")
        k = len(self.temps)
        self.temps.append((a, b))
        self.temp_masks.append(self._mask(a) ^ self._mask(b))
        if k == len(self._tm):
            self._tm = np.vstack([self._tm, np.zeros_like(self._tm)])
            self._tsz = np.concatenate([self._tsz, np.zeros_like(self._tsz)])
        self._tm[k] = _bits(self.temp_masks[k], self.num_constants)
        self._tsz[k] = self._tm[k].sum()
        for v in [u for u in self.orig if u in users]:
            d = self.orig[v]
            rest = d - {a, b}
            for z in rest:
                self._bump(a, z, -1)
                self._bump(b, z, -1)
                self._bump(k, z, 1)
            self._bump(a, b, -1)
            self.occ[a].discard(v)
            self.occ[b].discard(v)
            if rest:
                rest.add(k)
                self.orig[v] = rest
                self.occ.setdefault(k, set()).add(v)
            else:
                del self.orig[v]
                self.alias[v] = k
        return k

    def _mask(self, i):
        return 1 << (i - _CBASE) if i >= _CBASE else self.temp_masks[i]

    def replace_def(self, v, d):
        self._drop_def(v)
        if len(d) == 1:
            (self.alias[v],) = d
        else:
            self._add_def(v, d)

    # -- rebuild ------------------------------------------------------------

    def _rebuild_rows(self, vs):
        """Run the greedy loop for goals ``vs`` at once.

        Returns the leftover constant rows, the temporaries chosen per goal,
        the size of each rebuilt definition, and per goal the path of
        ``(rem, threshold)`` states visited.  A later temporary changes a
        goal's result only if it is strictly closer than a threshold.
        """
        m = len(self.temps)
        rem = np.array([self._orig_rows[v] for v in vs])
        chosen = [[] for _ in vs]
        paths = [[] for _ in vs]
        rsz = rem.sum(axis=1)
        if m:
            tm = self._tm[:m]
            tsz = self._tsz[:m]
            active = np.arange(len(vs))
            while len(active):
                dist = rsz[active, None] + tsz[None, :] - 2.0 * (rem[active] @ tm.T)
                best = dist.argmin(axis=1)  # first minimum = smallest temporary
                bval = dist[np.arange(len(active)), best]
                better = bval < rsz[active]
                if not better.any():
                    break
                rows = active[better]
                picks = best[better]
                for row, t, bv in zip(rows, picks, bval[better]):
                    chosen[row].append(int(t))
                    paths[row].append((rem[row].copy(), bv))
                rem[rows] = np.abs(rem[rows] - tm[picks])
                rsz[rows] = bval[better]
                active = rows
        for i in range(len(vs)):
            paths[i].append((rem[i].copy(), rsz[i]))
        sizes = rsz.astype(np.int64) + np.array([len(c) for c in chosen], dtype=np.int64)
        return rem, chosen, sizes, paths

    @staticmethod
    def _as_def(rem_row, chosen):
        return {_CBASE + int(j) for j in np.flatnonzero(rem_row)} | set(chosen)

    def rebuild_all(self, which=None):
        """Greedy cancellation-aware rewrite of each open goal.

        Returns ``{v: new_definition_ids}``; every goal is rebuilt against the
        same temporaries, so the scan order does not matter.
        """
        vs = list(self.orig) if which is None else list(which)
        if not vs:
            return {}
        rem, chosen, _, _ = self._rebuild_rows(vs)
        return {v: self._as_def(rem[i], chosen[i]) for i, v in enumerate(vs)}

    def _refresh(self, vs):
        if not vs:
            return
        rem, chosen, sizes, paths = self._rebuild_rows(vs)
        for i, v in enumerate(vs):
            self._rb[v] = (rem[i], chosen[i], int(sizes[i]), paths[i])
        self._rb_stack = None

    def rebuild_step(self):
        """Replace every open goal whose rebuilt definition is strictly shorter.

        Rebuild results are cached and only recomputed for goals whose
        greedy path the newest temporary could divert.
        """
        if not hasattr(self, "_rb"):
            self._rb = {}
            self._refresh(list(self.orig))
        elif self.temps and self.orig:
            if self._rb_stack is None:
                owners, rows, thr = [], [], []
                for v in self.orig:
                    for r, th in self._rb[v][3]:
                        owners.append(v)
                        rows.append(r)
                        thr.append(th)
                rows = np.array(rows)
                self._rb_stack = (owners, rows, rows.sum(axis=1), np.array(thr))
            owners, rows, rsz, thr = self._rb_stack
            k = len(self.temps) - 1
            d = rsz + self._tsz[k] - 2.0 * (rows @ self._tm[k])
            hit = np.flatnonzero(d < thr)
            if len(hit):
                stale = list(dict.fromkeys(owners[i] for i in hit))
                self._refresh([v for v in stale if v in self.orig])
        for v in list(self.orig):
            rem, chosen, size, _ = self._rb[v]
            if size < len(self.orig[v]):
                self.replace_def(v, self._as_def(rem, chosen))
                if v not in self.orig:
                    self._rb_stack = None

    # -- export ---------------------------------------------------------------

    def to_slp(self):
        instrs = [Instruction(temp(k), tuple(_to_term(i) for i in ops))
                  for k, ops in enumerate(self.temps)]
        for v, d in self.orig.items():
            instrs.append(Instruction(v, tuple(_to_term(i) for i in sorted(d))))
        rets = []
        for t in self.returns:
            if t.kind == ORIG and t in self.alias:
                rets.append(_to_term(self.alias[t]))
            elif t.kind == TEMP:
                rets.append(temp(self.ret_tmap[t]))
            else:
                rets.append(t)
        return Slp(self.num_constants, tuple(instrs), tuple(rets), self.multi and bool(self.orig))


def _bits(mask, n):
    """Bitmask over constant indices as a float 0/1 row of length ``n``."""
    raw = np.frombuffer(mask.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n].astype(np.float64)


def _term_id(p, t):
    if t.kind == CONST:
        return _CBASE + t.index
    temps = [ins.target for ins in p.instructions if ins.target.kind == TEMP]
    if t not in temps:
        raise SlpError(f"{t} is not a temporary of the program")
    return temps.index(t)


def apply_pair(p, lo, hi):
    """Factor the pair ``(lo, hi)`` out of every goal definition containing it.

    The new temporary is appended to the temporary block; goals reduced to a
    single temporary are dropped and their return slots point at it.
    """
    st = _State(p)
    st.pair(*sorted((_term_id(p, lo), _term_id(p, hi))))
    return st.to_slp()


def repair(p):
    st = _State(p)
    while st.orig:
        st.pair(*st.best_pair())
    return st.to_slp()


def rebuild(p, v):
    """Shortest-found definition of original ``v`` over temporaries and constants."""
    st = _State(p)
    if v not in st.orig:
        raise SlpError(f"{v} is not an open original variable")
    return frozenset(_to_term(i) for i in st.rebuild_all([v])[v])


def xor_repair(p):
    st = _State(p)
    while st.orig:
        st.pair(*st.best_pair())
        st.rebuild_step()
    return st.to_slp()
