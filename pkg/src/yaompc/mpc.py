"""Deterministic simulator of the MPC(m) model.

Machines are logical units with a hard per-round memory cap of ``m`` records
(every point, query, tree-node summary and partial aggregate counts as one
record).  Computation proceeds in synchronous rounds: each machine runs a pure
function over its local records and addresses outgoing messages by machine id;
messages are delivered at the round barrier.  The simulator enforces the model
rather than measuring it: exceeding the memory cap or the machine cap aborts
the job.

Two execution surfaces share the same accounting:

* :meth:`MpcSimulator.run_round` - the per-machine functional form;
* :meth:`MpcSimulator.vector_round` - a vectorised form used by the heavy
  pipelines, where the caller transforms whole column arrays but must keep the
  computation segment-pure (never mixing rows of different machines).

Query-phase rounds may use a polylogarithmic space-slack multiplier on ``m``
(the model's proofs ignore polylog space factors); slack-phase loads are
metered separately so build-phase rounds always face the raw cap.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ResourceViolation(RuntimeError):
    """A job exceeded the MPC(m) resource bounds."""


class MemoryCapViolation(ResourceViolation):
    pass


class MachineCapViolation(ResourceViolation):
    pass


def reduction_rounds(m: int, n: int) -> int:
    """Smallest r >= 1 with m**r >= max(n, 2): rounds of an m-ary reduction."""
    if m < 2:
        raise ValueError("m must be >= 2")
    target = max(n, 2)
    r, cap = 1, m
    while cap < target:
        cap *= m
        r += 1
    return r


@dataclass(frozen=True)
class MpcConfig:
    """Model parameters: memory m = ceil(c_m * n**eta), L = ceil(c_L * n / m).

    ``query_slack`` multiplies the memory cap in query-phase rounds; ``None``
    resolves to the YAOMPC_SLACK environment variable if set, else to
    ``c_m * log2(n)**2``.
    """

    n: int
    eta: float
    c_m: float = 4.0
    c_L: float = 4.0
    query_slack: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.c_m < 1.0 or self.c_L < 1.0:
            raise ValueError("c_m and c_L must be >= 1")

    @property
    def m(self) -> int:
        return max(2, math.ceil(self.c_m * self.n**self.eta))

    @property
    def max_machines(self) -> int:
        return max(1, math.ceil(self.c_L * self.n / self.m))

    @property
    def effective_query_slack(self) -> float:
        if self.query_slack is not None:
            return max(1.0, self.query_slack)
        env = os.environ.get("YAOMPC_SLACK")
        if env:
            return max(1.0, float(env))
        return max(1.0, self.c_m * math.log2(max(self.n, 2)) ** 2)

    def cap(self, phase: str) -> int:
        if phase == "query":
            return math.ceil(self.m * self.effective_query_slack)
        return self.m


@dataclass
class MpcMetrics:
    """Rounds, communication and load accounting for one or more MPC jobs."""

    rounds: int = 0
    max_machine_load: int = 0
    total_communication: int = 0
    per_round_communication: list = field(default_factory=list)
    machines_used: int = 0
    query_rounds: int = 0
    query_max_machine_load: int = 0

    def observe_round(self, sent: int, max_load: int, nonempty: int, phase: str):
        self.rounds += 1
        self.total_communication += sent
        self.per_round_communication.append(sent)
        self.machines_used = max(self.machines_used, nonempty)
        if phase == "query":
            self.query_rounds += 1
            self.query_max_machine_load = max(self.query_max_machine_load, max_load)
        else:
            self.max_machine_load = max(self.max_machine_load, max_load)

    def merge(self, other: "MpcMetrics") -> None:
        """Fold another job's metrics in: rounds/communication add, loads max."""
        self.rounds += other.rounds
        self.total_communication += other.total_communication
        self.per_round_communication.extend(other.per_round_communication)
        self.machines_used = max(self.machines_used, other.machines_used)
        self.query_rounds += other.query_rounds
        self.max_machine_load = max(self.max_machine_load, other.max_machine_load)
        self.query_max_machine_load = max(
            self.query_max_machine_load, other.query_max_machine_load
        )

    def to_json(self, config: MpcConfig) -> dict:
        comm_ratio = (
            self.total_communication / (config.n * self.rounds) if self.rounds else 0.0
        )
        return {
            "n": config.n,
            "eta": config.eta,
            "m": config.m,
            "machines_used": self.machines_used,
            "rounds": self.rounds,
            "max_machine_load": self.max_machine_load,
            "total_communication": self.total_communication,
            "per_round_communication": list(self.per_round_communication),
            "query_rounds": self.query_rounds,
            "query_max_machine_load": self.query_max_machine_load,
            "query_slack": config.effective_query_slack,
            "communication_per_n_rounds": comm_ratio,
        }


@dataclass
class MachineState:
    """Read-only view of one machine's records, grouped by record kind."""

    machine_id: int
    records: dict

    @property
    def record_count(self) -> int:
        return sum(len(cols["mach"]) for cols in self.records.values())


def _as_columns(cols: dict) -> dict:
    out = {}
    length = None
    for name, arr in cols.items():
        arr = np.asarray(arr)
        if length is None:
            length = len(arr)
        elif len(arr) != length:
            raise ValueError("ragged record columns")
        out[name] = arr
    return out


def _first_len(cols: dict) -> int:
    for arr in cols.values():
        return len(arr)
    return 0


class MpcSimulator:
    """Single-process simulator; machines are executed in deterministic order
    but all cross-machine data motion happens only at round barriers, so any
    physical execution order yields identical states and metrics."""

    def __init__(self, config: MpcConfig, metrics: Optional[MpcMetrics] = None):
        self.config = config
        self.metrics = metrics if metrics is not None else MpcMetrics()
        self._store: dict = {}

    # -- setup / teardown (modelled as distributed-filesystem I/O, not rounds)

    def load(self, kind: str, mach, **columns) -> None:
        mach = np.asarray(mach, dtype=np.int64)
        cols = _as_columns(columns)
        for arr in cols.values():
            if len(arr) != len(mach):
                raise ValueError("column length mismatch")
        cols["mach"] = mach
        if kind in self._store:
            old = self._store[kind]
            cols = {name: np.concatenate([old[name], cols[name]]) for name in cols}
        self._store[kind] = cols
        self._check_caps(phase="build", round_label="load")

    def collect(self, kind: str, drop: bool = False) -> dict:
        cols = self._store.get(kind)
        if cols is None:
            return {"mach": np.empty(0, dtype=np.int64)}
        if drop:
            del self._store[kind]
        return cols

    def drop(self, kind: str) -> None:
        self._store.pop(kind, None)

    def kinds(self):
        return sorted(self._store)

    def total_records(self) -> int:
        return sum(len(c["mach"]) for c in self._store.values())

    def machine_loads(self) -> np.ndarray:
        size = 0
        for cols in self._store.values():
            if len(cols["mach"]):
                size = max(size, int(cols["mach"].max()) + 1)
        loads = np.zeros(size, dtype=np.int64)
        for cols in self._store.values():
            if len(cols["mach"]):
                loads += np.bincount(cols["mach"], minlength=size)
        return loads

    def machine_states(self) -> list:
        ids = sorted(self._nonempty_machines())
        out = []
        for mid in ids:
            recs = {}
            for kind, cols in self._store.items():
                sel = cols["mach"] == mid
                if sel.any():
                    recs[kind] = {name: arr[sel] for name, arr in cols.items()}
            out.append(MachineState(mid, recs))
        return out

    # -- rounds

    def run_round(self, fn: Callable, phase: str = "build") -> None:
        """Per-machine functional round.

        ``fn(machine_id, records)`` receives the machine's records as
        ``{kind: {column: array}}`` and returns ``(kept, sends)`` where
        ``kept`` maps kinds to column dicts retained locally and ``sends`` is
        a list of ``(dest_machine, kind, columns)`` messages.  Anything not
        returned in ``kept`` is discarded, so pass unrelated kinds through.
        """
        kept_store: dict = {}
        messages: list = []
        for state in self.machine_states():
            kept, sends = fn(state.machine_id, state.records)
            for kind, cols in (kept or {}).items():
                cols = {k: v for k, v in _as_columns(cols).items() if k != "mach"}
                cols["mach"] = np.full(_first_len(cols), state.machine_id, np.int64)
                kept_store.setdefault(kind, []).append(cols)
            for dest, kind, cols in sends or []:
                cols = {k: v for k, v in _as_columns(cols).items() if k != "mach"}
                dest_arr = np.full(_first_len(cols), int(dest), dtype=np.int64)
                messages.append((dest_arr, kind, cols))
        self._finish_round(kept_store, messages, phase)

    def vector_round(self, fn: Callable, phase: str = "build") -> None:
        """Vectorised round: ``fn(store)`` sees ``{kind: columns}`` (with the
        ``mach`` column) for all machines at once and must be segment-pure.
        It returns ``(kept, sends)`` where ``kept`` kinds carry a ``mach``
        column and each send is ``(dest_array, kind, columns)``."""
        kept, sends = fn(dict(self._store))
        kept_store: dict = {}
        for kind, cols in (kept or {}).items():
            cols = _as_columns(cols)
            if "mach" not in cols:
                raise ValueError("kept columns need a mach column")
            kept_store.setdefault(kind, []).append(cols)
        messages = []
        for dest_arr, kind, cols in sends or []:
            cols = {k: v for k, v in _as_columns(cols).items() if k != "mach"}
            dest_arr = np.asarray(dest_arr, dtype=np.int64)
            if len(dest_arr) != _first_len(cols):
                raise ValueError("dest array length mismatch")
            messages.append((dest_arr, kind, cols))
        self._finish_round(kept_store, messages, phase)

    # -- internals

    def _nonempty_machines(self) -> set:
        ids: set = set()
        for cols in self._store.values():
            ids.update(np.unique(cols["mach"]).tolist())
        return ids

    def _finish_round(self, kept_store, messages, phase):
        sent = sum(len(d) for d, _, _ in messages)
        store: dict = {kind: list(parts) for kind, parts in kept_store.items()}
        for dest_arr, kind, cols in messages:
            cols = dict(cols)
            cols["mach"] = dest_arr
            store.setdefault(kind, []).append(cols)
        merged: dict = {}
        for kind, parts in store.items():
            names = [n for n in parts[0] if n != "mach"]
            cat = {name: np.concatenate([p[name] for p in parts]) for name in names}
            cat["mach"] = np.concatenate([p["mach"] for p in parts])
            order = np.argsort(cat["mach"], kind="stable")
            merged[kind] = {name: arr[order] for name, arr in cat.items()}
        self._store = merged
        loads = self.machine_loads()
        max_load = int(loads.max()) if len(loads) else 0
        nonempty = int((loads > 0).sum()) if len(loads) else 0
        self.metrics.observe_round(sent, max_load, nonempty, phase)
        self._check_caps(phase, round_label=f"round {self.metrics.rounds}")

    def _check_caps(self, phase: str, round_label: str):
        cap = self.config.cap(phase)
        loads = self.machine_loads()
        if len(loads) and loads.max() > cap:
            worst = int(loads.argmax())
            raise MemoryCapViolation(
                f"memory cap violated: machine {worst} holds {int(loads.max())} "
                f"records > cap {cap} at {round_label}"
            )
        nonempty = int((loads > 0).sum()) if len(loads) else 0
        if nonempty > self.config.max_machines:
            raise MachineCapViolation(
                f"machine cap violated: {nonempty} nonempty machines "
                f"> limit {self.config.max_machines} at {round_label}"
            )


# -- model primitives -------------------------------------------------------


def _fold_ordered(values, op):
    acc = None
    for v in values:
        acc = v if acc is None else op(acc, v)
    return acc


def _object_array(values) -> np.ndarray:
    arr = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        arr[i] = v
    return arr


def semigroup_aggregate(sim: MpcSimulator, values, op, identity=None):
    """Fold ``values`` under the associative ``op`` on an m-ary reduction tree.

    Takes exactly ``reduction_rounds(m, len(values))`` rounds (asserted); the
    result is independent of the initial distribution because the fold order
    follows value order and ``op`` is associative.  Empty input returns
    ``identity``.
    """
    m = sim.config.m
    n = len(values)
    expected = reduction_rounds(m, n)
    start = sim.metrics.rounds
    if n:
        mach = np.arange(n, dtype=np.int64) // m
        sim.load("sg", mach, val=_object_array(values),
                 seq=np.arange(n, dtype=np.int64))

    def step(mid, records):
        kept = {k: v for k, v in records.items() if k != "sg"}
        cols = records.get("sg")
        if cols is None:
            return kept, []
        order = np.argsort(cols["seq"], kind="stable")
        acc = _fold_ordered(cols["val"][order], op)
        out = {"val": _object_array([acc]), "seq": cols["seq"][order][:1]}
        if mid == 0:
            kept["sg"] = out
            return kept, []
        return kept, [(mid // m, "sg", out)]

    for _ in range(expected):
        sim.run_round(step)
    used = sim.metrics.rounds - start
    assert used == expected, f"semigroup used {used} rounds, expected {expected}"
    if n == 0:
        return identity
    cols = sim.collect("sg", drop=True)
    assert len(cols["mach"]) == 1, "reduction did not converge"
    return cols["val"][0]


def parallel_prefix(sim: MpcSimulator, values, op, keys=None):
    """All prefix folds of ``values`` (ordered by ``keys``) under ``op``.

    Classic up-sweep/down-sweep on an m-ary machine tree; takes at most
    ``2 * reduction_rounds(m, n) + 4`` rounds (asserted).  Duplicate keys are
    rejected as an ambiguous order.
    """
    n = len(values)
    if n == 0:
        return []
    if keys is None:
        keys = list(range(n))
    keys = list(keys)
    if len(set(keys)) != len(keys):
        raise ValueError("ambiguous order: duplicate keys")
    order = sorted(range(n), key=lambda i: keys[i])
    vals = [values[i] for i in order]

    m = sim.config.m
    block = max(1, m // 2)
    n_leaves = math.ceil(n / block)
    budget = 2 * reduction_rounds(m, n) + 4
    start = sim.metrics.rounds

    mach = np.arange(n, dtype=np.int64) // block
    sim.load("pp", mach, val=_object_array(vals), seq=np.arange(n, dtype=np.int64))

    # machine tree with first-child reuse: the parent of a sibling group runs
    # on the group's first machine, so no machines beyond the leaves are used
    fanout = max(2, m // 3)
    levels = [list(range(n_leaves))]
    while len(levels[-1]) > 1:
        prev = levels[-1]
        levels.append([prev[p * fanout] for p in range(math.ceil(len(prev) / fanout))])
    depth = len(levels) - 1
    member = [set(ids) for ids in levels]
    pos_at = [
        {mid: pos for pos, mid in enumerate(ids)} for ids in levels
    ]

    def passthrough(records, consumed=()):
        return {k: v for k, v in records.items() if k not in consumed}

    def fold_block(mid, records):
        kept = passthrough(records, ("pp",))
        cols = records.get("pp")
        if cols is None:
            return kept, []
        srt = np.argsort(cols["seq"], kind="stable")
        kept["pp"] = {k: cols[k][srt] for k in ("val", "seq")}
        if depth == 0:
            return kept, []
        acc = _fold_ordered(cols["val"][srt], op)
        parent = levels[1][mid // fanout]
        part = {"val": _object_array([acc]),
                "child": np.array([pos_at[0][mid]], dtype=np.int64)}
        return kept, [(parent, "up", part)]

    sim.run_round(fold_block)

    for lev in range(1, depth):
        def up(mid, records, lev=lev):
            if mid not in member[lev] or "up" not in records:
                return passthrough(records), []
            kept = passthrough(records, ("up",))
            cols = records["up"]
            srt = np.argsort(cols["child"], kind="stable")
            kids = {
                "val": cols["val"][srt],
                "child": cols["child"][srt].astype(np.int64),
                "lev": np.full(len(srt), lev - 1, dtype=np.int64),
            }
            kept["kids"] = _append_cols(records.get("kids"), kids)
            acc = _fold_ordered(kids["val"], op)
            parent = levels[lev + 1][pos_at[lev][mid] // fanout]
            part = {"val": _object_array([acc]),
                    "child": np.array([pos_at[lev][mid]], dtype=np.int64)}
            return kept, [(parent, "up", part)]

        sim.run_round(up)

    for lev in range(depth, 0, -1):
        def down(mid, records, lev=lev):
            if mid not in member[lev]:
                return passthrough(records), []
            kept = passthrough(records, ("up", "down"))
            if lev == depth:
                cols = records.get("up")
            else:
                cols = records.get("kids")
                kept.pop("kids", None)
                if cols is not None:
                    sel = cols["lev"] == lev - 1
                    rest = {k: v[~sel] for k, v in cols.items()}
                    if len(rest["lev"]):
                        kept["kids"] = rest
                    cols = {k: v[sel] for k, v in cols.items()}
            down_cols = records.get("down")
            carry = None
            if down_cols is not None and len(down_cols["val"]) and down_cols["has"][0]:
                carry = down_cols["val"][0]
            sends = []
            if cols is not None and len(cols["child"]):
                srt = np.argsort(cols["child"], kind="stable")
                acc = carry
                for ch, pv in zip(cols["child"][srt], cols["val"][srt]):
                    payload = {
                        "val": _object_array([acc]),
                        "has": np.array([acc is not None], dtype=bool),
                    }
                    sends.append((int(levels[lev - 1][ch]), "down", payload))
                    acc = pv if acc is None else op(acc, pv)
            return kept, sends

        sim.run_round(down)

    # final local prefix pass; results are read out as job output
    results: dict = {}

    def local_prefix(mid, records):
        cols = records.get("pp")
        if cols is None:
            return {}, []
        down_cols = records.get("down")
        acc = None
        if down_cols is not None and len(down_cols["val"]) and down_cols["has"][0]:
            acc = down_cols["val"][0]
        srt = np.argsort(cols["seq"], kind="stable")
        for s, v in zip(cols["seq"][srt], cols["val"][srt]):
            acc = v if acc is None else op(acc, v)
            results[int(s)] = acc
        return {}, []

    sim.run_round(local_prefix)

    used = sim.metrics.rounds - start
    assert used <= budget, f"parallel_prefix used {used} rounds > budget {budget}"
    out = [None] * n
    for i, orig in enumerate(order):
        out[orig] = results[i]
    return out


def shuffle_by_key(sim: MpcSimulator, kind: str, key_fn, phase: str = "build"):
    """Redistribute records of ``kind`` so equal keys co-locate: exactly one
    round.  ``key_fn(row_dict) -> machine_id`` must be total on the records."""

    def fn(mid, records):
        kept = {k: v for k, v in records.items() if k != kind}
        cols = records.get(kind)
        if cols is None:
            return kept, []
        sends = []
        for i in range(len(cols["mach"])):
            row = {k: cols[k][i] for k in cols if k != "mach"}
            dest = int(key_fn(row))
            sends.append((dest, kind, {k: np.asarray([v]) for k, v in row.items()}))
        return kept, sends

    sim.run_round(fn, phase=phase)


def metrics_json_document(config: MpcConfig, metrics: MpcMetrics, extra=None) -> str:
    doc = metrics.to_json(config)
    if extra:
        doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=2)
