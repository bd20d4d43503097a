"""Balanced grid and sparsified range tree construction on the MPC simulator.

Grid conventions used everywhere in this package:

* per-dimension split values are the coordinates of rank ``j*m`` for
  ``j = 1..floor(n/m)`` under ``(coordinate, id)`` lexicographic order;
* slab ``j`` owns the right-closed interval ``(S[j-1], S[j]]`` (slab 0 is
  unbounded below, slab ``t`` unbounded above), so a point on a split
  coordinate belongs to the lower slab and every pre-merge slab holds exactly
  ``m`` points up to ties on split coordinates;
* cells are products of slabs and only nonempty cells are materialised.

The tree over the cells is a hierarchy in the first dimension whose nodes each
carry a hierarchy in the second dimension; every level merges
``g = ceil(m**(1/d))`` consecutive blocks per dimension and levels stop as
soon as a single block remains.  Each node stores, per quadrant orientation,
the point of its rectangle extremal in ``+-x +-y`` - which is exactly the
l1 nearest neighbour of the matching corner of the node rectangle, and merges
associatively because distances to a shifted corner re-derive from the stored
coordinates.

The distributed build is a fixed round pipeline: regular-sample distribution
sort per dimension (one or two levels depending on machine count), a combined
rank/slab parallel prefix that also extracts the split values and stays exact
under duplicate coordinates, a staged id join that stamps both slabs, then
bottom-up summary aggregation.  Round counts are asserted against the budget
``(d+2) * (ceil(1/eta)+2)`` by the callers' tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import PointSet
from .mpc import MpcConfig, MpcMetrics, MpcSimulator

NEG_INF = float("-inf")
POS_INF = float("inf")

# orientation table: sign per axis; +1 reads "region extends upward on this
# axis" and the orientation's score is sign_x*x + sign_y*y, minimised
ORIENTATIONS = ((1, 1), (1, -1), (-1, 1), (-1, -1))
ORIENTATION_NAMES = {
    (1, 1): "ge_ge",
    (1, -1): "ge_le",
    (-1, 1): "le_ge",
    (-1, -1): "le_le",
}


# ---------------------------------------------------------------------------
# small vector helpers


def lex_rank_keys(v: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """argsort by (v, id): the canonical rank order of one dimension."""
    return np.lexsort((ids, v))


def bucket_of(spl_v, spl_id, v, ids):
    """Number of splitters lexicographically <= (v, id), vectorised."""
    lo = np.searchsorted(spl_v, v, side="left")
    hi = np.searchsorted(spl_v, v, side="right")
    out = lo.astype(np.int64)
    tied = np.flatnonzero(lo < hi)
    for row in tied:
        a, b = lo[row], hi[row]
        out[row] = a + np.searchsorted(spl_id[a:b], ids[row], side="right")
    return out


def slab_of_values(splits: np.ndarray, values) -> np.ndarray:
    """Slab index: count of split values strictly below ``values``."""
    return np.searchsorted(splits, np.asarray(values), side="left").astype(np.int64)


def regular_sample_positions(count: int, s: int) -> np.ndarray:
    s = max(1, min(s, count))
    return np.unique((np.arange(s) * count + count // 2) // s).astype(np.int64)


def weighted_downsample(v, ids, wgt, target: int):
    """Keep ~target entries of a sorted weighted sample, evenly by weight."""
    if len(v) <= target:
        return v, ids, wgt
    cum = np.cumsum(wgt)
    total = cum[-1]
    marks = (np.arange(target) + 0.5) * (total / target)
    pos = np.unique(np.searchsorted(cum, marks, side="left").clip(0, len(v) - 1))
    share = total / len(pos)
    return v[pos], ids[pos], np.full(len(pos), share)


def weighted_quantile_splitters(v, ids, wgt, buckets: int):
    """buckets-1 splitter pairs at even weighted quantiles of the sample."""
    if buckets <= 1 or len(v) == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    cum = np.cumsum(wgt)
    total = cum[-1]
    marks = (np.arange(1, buckets)) * (total / buckets)
    pos = np.searchsorted(cum, marks, side="left").clip(0, len(v) - 1)
    return v[pos], ids[pos]


def _machine_segments(mach: np.ndarray):
    """Return (unique machine ids, start offsets, counts) of a sorted column."""
    uniq, starts, counts = np.unique(mach, return_index=True, return_counts=True)
    return uniq, starts, counts


# ---------------------------------------------------------------------------
# public grid types


@dataclass(frozen=True)
class GridSplits:
    per_dim: tuple

    def slab_of(self, dim: int, values) -> np.ndarray:
        return slab_of_values(self.per_dim[dim], values)

    def slab_count(self, dim: int) -> int:
        return len(self.per_dim[dim]) + 1

    def interval(self, dim: int, slab: int) -> tuple:
        s = self.per_dim[dim]
        lo = NEG_INF if slab == 0 else float(s[slab - 1])
        hi = POS_INF if slab == len(s) else float(s[slab])
        return lo, hi


@dataclass(frozen=True)
class GridCell:
    index: tuple
    lo: tuple
    hi: tuple
    point_ids: np.ndarray


class BalancedGrid:
    """Output of the balanced-grid construction: splits plus the cells of the
    grid after merging every ceil(sqrt(m)) consecutive slabs per dimension."""

    def __init__(self, splits: GridSplits, merge_factor: int, cells: dict,
                 metrics: MpcMetrics):
        self.splits = splits
        self.merge_factor = merge_factor
        self.cells = cells
        self.metrics = metrics

    @property
    def cell_count(self) -> int:
        return len(self.cells)


# ---------------------------------------------------------------------------
# the distributed pipeline


@dataclass
class PipeLayout:
    """Final layout of one dimension's sorted runs: run r holds the r-th
    contiguous (value, id) range on machine ``machines[r]``."""

    machines: np.ndarray
    first_v: np.ndarray
    first_id: np.ndarray
    counts: np.ndarray


@dataclass
class GridJobResult:
    sim: MpcSimulator
    config: MpcConfig
    d: int
    n: int
    splits: GridSplits
    ids: np.ndarray       # sorted ascending
    coords: np.ndarray    # (n, d), aligned with ids
    slabs: np.ndarray     # (n, d) slab index per dimension, aligned with ids
    layouts: list         # PipeLayout per dimension
    t: list               # split count per dimension
    cell_rounds: int = 0


def _points_matrix(points, d: int):
    if isinstance(points, PointSet):
        ids = points.ids
        coords = np.column_stack([points.xs, points.ys])[:, :d]
    else:
        ids, coords = points
        coords = np.asarray(coords, dtype=np.float64).reshape(len(ids), d)
    return np.asarray(ids, dtype=np.int64), coords


def run_grid_pipeline(points, config: MpcConfig, d: int,
                      sim: Optional[MpcSimulator] = None,
                      summaries: bool = True) -> GridJobResult:
    """Sort both dimensions, stamp ranks and slabs, and (optionally) emit
    per-cell summary partials ready for aggregation.

    Record kinds: ``p0``/``p1`` are the per-dimension pipes (full records,
    value-sorted at the end and kept as the scan layouts), ``q`` the joined
    query rows, ``cpart`` the per-cell summary partials.
    """
    ids, coords = _points_matrix(points, d)
    n = len(ids)
    if n == 0:
        raise ValueError("empty point set")
    m = config.m
    t_full = n // m

    if sim is None:
        sim = MpcSimulator(config)

    b_run = max(1, m // 4)
    T = min(config.max_machines, max(1, math.ceil(n / b_run)))
    init_mach = np.minimum(np.arange(n, dtype=np.int64) * T // n, T - 1)

    s_m = int(np.clip(m // 128, 8, 32))
    f_g = max(2, (m // (2 * d)) // s_m)

    for dim in range(d):
        other = coords[:, 1 - dim] if d == 2 else np.zeros(n)
        sim.load(f"p{dim}", init_mach, id=ids, v=coords[:, dim], o=other,
                 slab=np.full(n, -1, dtype=np.int64),
                 rank=np.zeros(n, dtype=np.int64))

    state = {"splitters": [None] * d, "l2_splitters": [None] * d}.copy()

    # ---- sample gather -----------------------------------------------------

    gather_hops = 1
    while f_g**gather_hops < T:
        gather_hops += 1
    if T == 1:
        gather_hops = 0

    def agg_of(idx: int, hop: int, dim: int) -> int:
        # pipe 1 aggregates on offset machines so sample loads never stack
        base = (idx // (f_g**hop)) * (f_g**hop)
        if dim == 0:
            return base
        return (base + T // 2 + 1) % T

    def data_home(idx: int, dim: int) -> int:
        return idx

    def sort_rows(cols):
        order = np.lexsort((cols["id"], cols["v"], cols["mach"]))
        return {k: a[order] for k, a in cols.items()}

    def sample_round(hop):
        def fn(store):
            kept = dict(store)
            sends = []
            for dim in range(d):
                if hop == 1:
                    pk = f"p{dim}"
                    cols = sort_rows(store[pk])
                    kept[pk] = cols
                    mach = cols["mach"]
                    uniq, starts, counts = _machine_segments(mach)
                    sv, si, sw, sdest = [], [], [], []
                    for u, st0, c in zip(uniq, starts, counts):
                        pos = st0 + regular_sample_positions(int(c), s_m)
                        k = len(pos)
                        sv.append(cols["v"][pos])
                        si.append(cols["id"][pos])
                        sw.append(np.full(k, c / k))
                        sdest.append(np.full(k, agg_of(int(u), 1, dim)))
                    sends.append((np.concatenate(sdest), f"smp{dim}", {
                        "v": np.concatenate(sv),
                        "id": np.concatenate(si),
                        "w": np.concatenate(sw),
                    }))
                else:
                    sk = f"smp{dim}"
                    if sk not in store:
                        continue
                    cols = store[sk]
                    kept.pop(sk, None)
                    uniq, starts, counts = _machine_segments(cols["mach"])
                    sv, si, sw, sdest = [], [], [], []
                    for u, st0, c in zip(uniq, starts, counts):
                        sl = slice(st0, st0 + c)
                        order = np.lexsort((cols["id"][sl], cols["v"][sl]))
                        v = cols["v"][sl][order]
                        i = cols["id"][sl][order]
                        w = cols["w"][sl][order]
                        v, i, w = weighted_downsample(v, i, w, s_m)
                        # aggregator position inside the next-hop group
                        idx = int(u) if dim == 0 else (int(u) - T // 2 - 1) % T
                        sv.append(v)
                        si.append(i)
                        sw.append(w)
                        sdest.append(np.full(len(v), agg_of(idx, hop, dim)))
                    if sv:
                        sends.append((np.concatenate(sdest), sk, {
                            "v": np.concatenate(sv),
                            "id": np.concatenate(si),
                            "w": np.concatenate(sw),
                        }))
            return kept, sends

        return fn

    # ---- generic distribution helpers --------------------------------------

    def broadcast_splitters(kind_prefix, groups):
        """groups: list of (root_machine, dim, member_machines, spl_v, spl_id)."""
        def fn(store):
            kept = {k: v for k, v in store.items()
                    if not k.startswith("smp")}
            sends = []
            for root, dim, members, sv, si in groups:
                for mm in members:
                    sends.append((np.full(len(sv), mm, dtype=np.int64),
                                  f"{kind_prefix}{dim}",
                                  {"v": sv, "id": si}))
            return kept, sends

        return fn

    def redistribute(level, bucket_dest):
        """bucket_dest(dim, machine, buckets, local_pos_in_bucket) -> dest."""
        def fn(store):
            kept = {k: v for k, v in store.items()
                    if not k.startswith("spl")}
            sends = []
            for dim in range(d):
                pk = f"p{dim}"
                cols = sort_rows(store[pk])
                kept.pop(pk, None)
                spl = store.get(f"spl{dim}")
                mach = cols["mach"]
                dest = np.empty(len(mach), dtype=np.int64)
                uniq, starts, counts = _machine_segments(mach)
                for u, st0, c in zip(uniq, starts, counts):
                    sl = slice(st0, st0 + c)
                    if spl is None:
                        b = np.zeros(int(c), dtype=np.int64)
                    else:
                        sel = spl["mach"] == u
                        order = np.lexsort((spl["id"][sel], spl["v"][sel]))
                        sv = spl["v"][sel][order]
                        si = spl["id"][sel][order]
                        b = bucket_of(sv, si, cols["v"][sl], cols["id"][sl])
                    # position within each bucket for round-robin spreading
                    pos = np.arange(int(c), dtype=np.int64)
                    bs = np.flatnonzero(np.diff(b, prepend=-1))
                    pos = pos - np.repeat(pos[bs], np.diff(bs, append=int(c)))
                    dest[sl] = bucket_dest(dim, int(u), b, pos)
                payload = {k: a for k, a in cols.items() if k != "mach"}
                sends.append((dest, pk, payload))
            return kept, sends

        return fn

    # ---- run the sort ------------------------------------------------------

    for hop in range(1, gather_hops + 1):
        sim.vector_round(sample_round(hop))

    root_samples = [None] * d
    for dim in range(d):
        cols = sim.collect(f"smp{dim}", drop=False) if gather_hops else None
        if cols is not None and len(cols["mach"]):
            order = np.lexsort((cols["id"], cols["v"]))
            root_samples[dim] = (cols["v"][order], cols["id"][order],
                                 cols["w"][order])

    one_level = True
    if T > 1:
        for dim in range(d):
            sv = root_samples[dim]
            if sv is None or 1.5 * T > len(sv[0]):
                one_level = False

    if T == 1:
        def local_only(store):
            kept = {k: sort_rows(v) if k.startswith("p") else v
                    for k, v in store.items()}
            return kept, []

        sim.vector_round(local_only)
        levels_plan = []
    elif one_level:
        levels_plan = [("direct", T)]
    else:
        f1 = max(2, math.ceil(math.sqrt(T)))
        gsz = math.ceil(T / f1)
        levels_plan = [("groups", f1, gsz), ("within", gsz)]

    if T > 1 and one_level:
        groups = []
        for dim in range(d):
            sv, si, sw = root_samples[dim]
            qv, qi = weighted_quantile_splitters(sv, si, sw, T)
            root = agg_of(0, gather_hops, dim)
            groups.append((root, dim, range(T), qv, qi))
        sim.vector_round(broadcast_splitters("spl", groups))
        sim.vector_round(redistribute(1, lambda dim, u, b, pos: b))
        sim.vector_round(lambda store: (
            {k: sort_rows(v) if k.startswith("p") else v
             for k, v in store.items()}, []))
    elif T > 1:
        f1, gsz = levels_plan[0][1], levels_plan[0][2]
        groups = []
        for dim in range(d):
            sv, si, sw = root_samples[dim]
            qv, qi = weighted_quantile_splitters(sv, si, sw, f1)
            root = agg_of(0, gather_hops, dim)
            groups.append((root, dim, range(T), qv, qi))
        sim.vector_round(broadcast_splitters("spl", groups))
        sim.vector_round(redistribute(
            1, lambda dim, u, b, pos: np.minimum(b * gsz + pos % gsz, T - 1)))

        # level 2: sample within each subgroup directly to the leader
        s_m2 = max(2, min(s_m, (m // (2 * d)) // max(1, gsz)))

        def sample_l2(store):
            kept = dict(store)
            sends = []
            for dim in range(d):
                pk = f"p{dim}"
                cols = sort_rows(store[pk])
                kept[pk] = cols
                uniq, starts, counts = _machine_segments(cols["mach"])
                sv, si, sw, sdest = [], [], [], []
                for u, st0, c in zip(uniq, starts, counts):
                    pos = st0 + regular_sample_positions(int(c), s_m2)
                    k = len(pos)
                    leader = (int(u) // gsz) * gsz
                    if dim == 1:
                        leader = (leader + T // 2 + 1) % T
                    sv.append(cols["v"][pos])
                    si.append(cols["id"][pos])
                    sw.append(np.full(k, c / k))
                    sdest.append(np.full(k, leader))
                sends.append((np.concatenate(sdest), f"smp{dim}", {
                    "v": np.concatenate(sv),
                    "id": np.concatenate(si),
                    "w": np.concatenate(sw),
                }))
            return kept, sends

        sim.vector_round(sample_l2)

        def broadcast_l2(store):
            kept = {k: v for k, v in store.items() if not k.startswith("smp")}
            sends = []
            for dim in range(d):
                sk = f"smp{dim}"
                if sk not in store:
                    continue
                cols = store[sk]
                uniq, starts, counts = _machine_segments(cols["mach"])
                for u, st0, c in zip(uniq, starts, counts):
                    sl = slice(st0, st0 + c)
                    order = np.lexsort((cols["id"][sl], cols["v"][sl]))
                    base = int(u) if dim == 0 else (int(u) - T // 2 - 1) % T
                    members = range(base, min(base + gsz, T))
                    nbuckets = len(range(base, min(base + gsz, T)))
                    qv, qi = weighted_quantile_splitters(
                        cols["v"][sl][order], cols["id"][sl][order],
                        cols["w"][sl][order], nbuckets)
                    for mm in members:
                        sends.append((np.full(len(qv), mm, dtype=np.int64),
                                      f"spl{dim}", {"v": qv, "id": qi}))
            return kept, sends

        sim.vector_round(broadcast_l2)
        sim.vector_round(redistribute(
            2, lambda dim, u, b, pos: (u // gsz) * gsz + b))
        sim.vector_round(lambda store: (
            {k: sort_rows(v) if k.startswith("p") else v
             for k, v in store.items()}, []))

    # ---- rank/slab parallel prefix ------------------------------------------
    # summary per run: (count, max value, count of rows tied at the max);
    # combine(A, B) = (cA+cB, maxB, eqB + eqA*[maxA == maxB]); the down-sweep
    # hands every run the combined summary of all runs before it, from which
    # ranks, split values and tie-exact slab indices all follow locally.

    def run_summaries():
        out = {}
        for dim in range(d):
            cols = sim.collect(f"p{dim}")
            uniq, starts, counts = _machine_segments(cols["mach"])
            maxs, eqs = [], []
            for u, st0, c in zip(uniq, starts, counts):
                sl = slice(st0, st0 + c)
                v = cols["v"][sl]
                mx = v[-1]
                eq = int(c - np.searchsorted(v, mx, side="left"))
                maxs.append(float(mx))
                eqs.append(eq)
            out[dim] = (uniq.astype(np.int64), counts.astype(np.int64),
                        np.array(maxs), np.array(eqs, dtype=np.int64))
        return out

    def combine(a, b):
        ca, ma, ea = a
        cb, mb, eb = b
        return (ca + cb, mb, eb + (ea if ma == mb else 0))

    fp = max(2, m // (2 * d))
    runs_per_dim = {}

    def prefix_phase():
        """Two fused sweeps over an fp-ary tree of run groups, implemented as
        simulator rounds over tiny summary records."""
        sums = run_summaries()
        hops = 1
        maxruns = max(len(sums[dim][0]) for dim in range(d))
        while fp**hops < maxruns:
            hops += 1
        if maxruns == 1:
            hops = 0
        for dim in range(d):
            runs_per_dim[dim] = sums[dim][0]
            machs = sums[dim][0]
            k = len(machs)
            sim.load(f"rsum{dim}", machs,
                     run=np.arange(k, dtype=np.int64),
                     cnt=sums[dim][1],
                     mx=sums[dim][2],
                     eq=sums[dim][3],
                     lev=np.zeros(k, dtype=np.int64))

        trees = {}
        for dim in range(d):
            k = len(runs_per_dim[dim])
            lv = [list(range(k))]
            while len(lv[-1]) > 1:
                lv.append([lv[-1][p * fp] for p in range(math.ceil(len(lv[-1]) / fp))])
            trees[dim] = lv

        def run_mach(dim, run):
            return int(runs_per_dim[dim][run])

        def agg_mach(dim, run):
            mm = run_mach(dim, run)
            return mm if dim == 0 else (mm + T // 2 + 1) % T if T > 1 else mm

        # up-sweep
        for hop in range(1, hops + 1):
            def up(store, hop=hop):
                kept = dict(store)
                sends = []
                for dim in range(d):
                    rk = f"rsum{dim}"
                    if rk not in store:
                        continue
                    cols = store[rk]
                    kept.pop(rk, None)
                    keep_rows = np.ones(len(cols["mach"]), dtype=bool)
                    lv = trees[dim]
                    src = cols["lev"] == hop - 1
                    rows = np.flatnonzero(src)
                    if len(rows) == 0:
                        kept[rk] = cols
                        continue
                    runs = cols["run"][rows]
                    group = runs // (fp**hop)
                    order = np.argsort(runs, kind="stable")
                    sv_cnt, sv_mx, sv_eq, sv_run, sv_dest = [], [], [], [], []
                    for grp in np.unique(group):
                        sel = rows[order][group[order] == grp]
                        acc = None
                        for r in sel:
                            item = (int(cols["cnt"][r]), float(cols["mx"][r]),
                                    int(cols["eq"][r]))
                            acc = item if acc is None else combine(acc, item)
                        parent_run = int(grp * (fp**hop))
                        sv_cnt.append(acc[0])
                        sv_mx.append(acc[1])
                        sv_eq.append(acc[2])
                        sv_run.append(parent_run)
                        sv_dest.append(agg_mach(dim, parent_run))
                    if hop < hops:
                        sends.append((np.array(sv_dest, dtype=np.int64), rk, {
                            "run": np.array(sv_run, dtype=np.int64),
                            "cnt": np.array(sv_cnt, dtype=np.int64),
                            "mx": np.array(sv_mx),
                            "eq": np.array(sv_eq, dtype=np.int64),
                            "lev": np.full(len(sv_run), hop, dtype=np.int64),
                        }))
                    kept[rk] = cols
                return kept, sends

            sim.vector_round(up)

        # the driver never sees the data; but the down-sweep needs group
        # structure, so it is executed as rounds over the retained summaries
        for hop in range(hops, 0, -1):
            def down(store, hop=hop):
                kept = dict(store)
                sends = []
                for dim in range(d):
                    rk = f"rsum{dim}"
                    dk = f"roff{dim}"
                    cols = store.get(rk)
                    offs = store.get(dk)
                    if cols is None:
                        continue
                    kept.pop(dk, None)
                    lev_rows = np.flatnonzero(cols["lev"] == hop - 1)
                    if len(lev_rows) == 0:
                        continue
                    runs = cols["run"][lev_rows]
                    group = runs // (fp**hop)
                    dest, o_cnt, o_mx, o_eq, o_run = [], [], [], [], []
                    for grp in np.unique(group):
                        sel = lev_rows[group == grp]
                        order = np.argsort(cols["run"][sel], kind="stable")
                        sel = sel[order]
                        carry = (0, NEG_INF, 0)
                        if offs is not None:
                            parent_run = int(grp * (fp**hop))
                            hit = np.flatnonzero(
                                (offs["run"] == parent_run) & (offs["lev"] == hop))
                            if len(hit):
                                r0 = hit[0]
                                carry = (int(offs["cnt"][r0]), float(offs["mx"][r0]),
                                         int(offs["eq"][r0]))
                        acc = carry
                        for r in sel:
                            rr = int(cols["run"][r])
                            dest.append(agg_mach(dim, rr) if hop > 1
                                        else run_mach(dim, rr))
                            o_cnt.append(acc[0])
                            o_mx.append(acc[1])
                            o_eq.append(acc[2])
                            o_run.append(rr)
                            item = (int(cols["cnt"][r]), float(cols["mx"][r]),
                                    int(cols["eq"][r]))
                            acc = combine(acc, item)
                    if dest:
                        sends.append((np.array(dest, dtype=np.int64), dk, {
                            "run": np.array(o_run, dtype=np.int64),
                            "cnt": np.array(o_cnt, dtype=np.int64),
                            "mx": np.array(o_mx),
                            "eq": np.array(o_eq, dtype=np.int64),
                            "lev": np.full(len(o_run), hop - 1, dtype=np.int64),
                        }))
                return kept, sends

            sim.vector_round(down)

        if hops == 0:
            # single run: its offset is the identity
            def seed(store):
                kept = dict(store)
                sends = []
                for dim in range(d):
                    rk = f"rsum{dim}"
                    if rk in store:
                        mm = run_mach(dim, 0)
                        sends.append((np.array([mm], dtype=np.int64),
                                      f"roff{dim}", {
                                          "run": np.array([0], dtype=np.int64),
                                          "cnt": np.array([0], dtype=np.int64),
                                          "mx": np.array([NEG_INF]),
                                          "eq": np.array([0], dtype=np.int64),
                                          "lev": np.array([0], dtype=np.int64),
                                      }))
                return kept, sends

            sim.vector_round(seed)

    prefix_phase()

    # ---- stamp ranks, slabs, splits; start the cell join --------------------

    def stamp_round(store):
        kept = {}
        sends = []
        for k, v in store.items():
            if not (k.startswith("p") or k.startswith("roff") or
                    k.startswith("rsum")):
                kept[k] = v
        for dim in range(d):
            pk = f"p{dim}"
            cols = store[pk]
            offs = store.get(f"roff{dim}")
            mach = cols["mach"]
            run_of_mach = {int(mm): r for r, mm in enumerate(runs_per_dim[dim])}
            new_slab = np.array(cols["slab"])
            new_rank = np.array(cols["rank"])
            spl_v, spl_j, spl_m = [], [], []
            uniq, starts, counts = _machine_segments(mach)
            for u, st0, c in zip(uniq, starts, counts):
                sl = slice(st0, st0 + c)
                run = run_of_mach[int(u)]
                off, mxb, eqb = 0, NEG_INF, 0
                if offs is not None:
                    hit = np.flatnonzero(offs["run"] == run)
                    if len(hit):
                        r0 = hit[0]
                        off = int(offs["cnt"][r0])
                        mxb = float(offs["mx"][r0])
                        eqb = int(offs["eq"][r0])
                v = cols["v"][sl]
                ranks = off + 1 + np.arange(int(c), dtype=np.int64)
                new_rank[sl] = ranks
                if t_full > 0:
                    is_split = (ranks % m == 0) & (ranks <= t_full * m)
                    sv = v[is_split]
                    spl_v.append(sv)
                    spl_j.append(ranks[is_split] // m)
                    spl_m.append(np.full(len(sv), int(u), dtype=np.int64))
                    splits_before = min(off // m, t_full)
                    lo_excl = off - eqb
                    eq_splits_before = (min(off, t_full * m) // m
                                        - min(max(lo_excl, 0), t_full * m) // m)
                    base = np.full(int(c), splits_before, dtype=np.int64)
                    if eqb > 0:
                        base[v == mxb] -= eq_splits_before
                    local_lt = np.searchsorted(sv, v, side="left")
                    new_slab[sl] = base + local_lt
                else:
                    new_slab[sl] = 0
            kept[pk] = {**cols, "slab": new_slab, "rank": new_rank}
            if spl_v:
                kept[f"split{dim}"] = {
                    "v": np.concatenate(spl_v),
                    "j": np.concatenate(spl_j),
                    "mach": np.concatenate(spl_m),
                }
            if summaries and d == 2:
                # wave 0 of the id join (even hashed ids)
                cols2 = kept[pk]
                wave = (cols2["id"] % 2) == 0
                dest = (cols2["id"][wave] * 2654435761 % (1 << 31)) % T
                payload = {"id": cols2["id"][wave], "slab": new_slab[wave]}
                if dim == 0:
                    payload["v"] = cols2["v"][wave]
                    payload["o"] = cols2["o"][wave]
                sends.append((dest, f"j{dim}", payload))
        return kept, sends

    sim.vector_round(stamp_round)

    cell_rounds = 0
    if summaries:
        g = max(2, math.ceil(m ** (1.0 / d)))
        if d == 2:
            def join_wave(final: bool):
                def fn(store):
                    kept = {k: v for k, v in store.items()
                            if k not in ("j0", "j1")}
                    sends = []
                    j0, j1 = store.get("j0"), store.get("j1")
                    if j0 is not None and j1 is not None:
                        o0 = np.argsort(j0["id"], kind="stable")
                        o1 = np.argsort(j1["id"], kind="stable")
                        assert np.array_equal(j0["id"][o0], j1["id"][o1])
                        qcols = {
                            "mach": j0["mach"][o0],
                            "id": j0["id"][o0],
                            "u": j0["v"][o0],
                            "w": j0["o"][o0],
                            "s0": j0["slab"][o0],
                            "s1": j1["slab"][o1],
                        }
                        kept["q"] = (qcols if "q" not in store else
                                     {k: np.concatenate([store["q"][k], qcols[k]])
                                      for k in qcols})
                        # cell summary partials, addressed at the level-1
                        # y-block home so the first merge doubles as a y-up
                        dest = ((qcols["s0"] * 2654435761 + qcols["s1"] // g)
                                % (1 << 31)) % T
                        sends.append((dest, "cpart", {
                            "s0": qcols["s0"], "s1": qcols["s1"],
                            "id": qcols["id"], "x": qcols["u"],
                            "y": qcols["w"],
                        }))
                    elif "q" in store:
                        kept["q"] = store["q"]
                    if not final:
                        for dim in range(d):
                            pk = f"p{dim}"
                            cols = store[pk]
                            wave = (cols["id"] % 2) == 1
                            dest = (cols["id"][wave] * 2654435761 % (1 << 31)) % T
                            payload = {"id": cols["id"][wave],
                                       "slab": cols["slab"][wave]}
                            if dim == 0:
                                payload["v"] = cols["v"][wave]
                                payload["o"] = cols["o"][wave]
                            sends.append((dest, f"j{dim}", payload))
                    return kept, sends

                return fn

            sim.vector_round(join_wave(final=False))
            sim.vector_round(join_wave(final=True))
            cell_rounds = 2
        else:
            def slab_parts(store):
                kept = dict(store)
                sends = []
                cols = store["p0"]
                dest = (cols["slab"] * 2654435761 % (1 << 31)) % T
                sends.append((dest, "cpart", {
                    "s0": cols["slab"],
                    "s1": np.zeros(len(dest), dtype=np.int64),
                    "id": cols["id"], "x": cols["v"], "y": cols["o"],
                }))
                return kept, sends

            sim.vector_round(slab_parts)
            cell_rounds = 1

    # ---- driver-side assembly (output read) ---------------------------------

    splits = []
    tees = []
    for dim in range(d):
        if t_full > 0:
            sc = sim.collect(f"split{dim}")
            order = np.argsort(sc["j"], kind="stable")
            splits.append(np.asarray(sc["v"])[order])
            assert len(splits[dim]) == t_full
        else:
            splits.append(np.empty(0))
        tees.append(t_full)

    per_dim_cols = [sim.collect(f"p{dim}") for dim in range(d)]
    slabs = np.zeros((n, d), dtype=np.int64)
    id_order = np.argsort(per_dim_cols[0]["id"], kind="stable")
    out_ids = per_dim_cols[0]["id"][id_order]
    coords_out = np.zeros((n, d))
    coords_out[:, 0] = per_dim_cols[0]["v"][id_order]
    if d == 2:
        coords_out[:, 1] = per_dim_cols[0]["o"][id_order]
    slabs[:, 0] = per_dim_cols[0]["slab"][id_order]
    if d == 2:
        o1 = np.argsort(per_dim_cols[1]["id"], kind="stable")
        assert np.array_equal(per_dim_cols[1]["id"][o1], out_ids)
        slabs[:, 1] = per_dim_cols[1]["slab"][o1]

    layouts = []
    for dim in range(d):
        cols = per_dim_cols[dim]
        uniq, starts, counts = _machine_segments(cols["mach"])
        layouts.append(PipeLayout(
            machines=uniq.astype(np.int64),
            first_v=cols["v"][starts],
            first_id=cols["id"][starts],
            counts=counts.astype(np.int64),
        ))

    return GridJobResult(sim=sim, config=config, d=d, n=n,
                         splits=GridSplits(tuple(splits)),
                         ids=out_ids, coords=coords_out, slabs=slabs,
                         layouts=layouts, t=tees, cell_rounds=cell_rounds)


# ---------------------------------------------------------------------------
# sequential reference (oracle used by tests and by small fast paths)


def sequential_grid(points, m: int, d: int):
    """Splits and slab assignment computed directly: the rank-selection oracle."""
    ids, coords = _points_matrix(points, d)
    n = len(ids)
    t = n // m
    splits = []
    slabs = np.zeros((n, d), dtype=np.int64)
    for dim in range(d):
        order = lex_rank_keys(coords[:, dim], ids)
        sorted_v = coords[:, dim][order]
        sv = sorted_v[np.arange(1, t + 1) * m - 1] if t > 0 else np.empty(0)
        splits.append(sv)
        slabs[:, dim] = slab_of_values(sv, coords[:, dim])
    order = np.argsort(ids, kind="stable")
    return GridSplits(tuple(splits)), ids[order], coords[order], slabs[order]
