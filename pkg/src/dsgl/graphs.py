"""Time-stamped recursive ego graphs over interaction histories.

A query (entity, t) expands into nested behavior sequences: level 1 holds the
entity's last interactions strictly before t, level 2 holds each of those
neighbors' interactions strictly before *their* interaction time, and so on,
alternating user/item sides. Strict time inequality means the scored
interaction can never appear in its own graph and every kept node is strictly
older than its parent.

Batched graphs are materialized as padded arrays with shapes
(B, m1), (B, m1, m2), ... per level. Within each innermost row the valid
entries are right-aligned and time-ascending, so the most recent behavior
always sits at the last position. Padded slots carry node id 0, time decay 0
and mask 0; a node can be valid only if its parent is valid.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .data import EventLog


@dataclass(frozen=True)
class DsgSpec:
    """Depth and per-level truncation for both rooted graphs.

    The item-rooted graph is always one level shallower than the user-rooted
    one, so the candidate item's structure matches the structure of each item
    inside the user's own level-1 sequence. Fanout tuples may be longer than
    the depth; extra entries are ignored.
    """

    user_depth: int = 3
    user_fanouts: tuple[int, ...] = (100, 5, 5)
    item_fanouts: tuple[int, ...] = (50, 5)

    def __post_init__(self):
        object.__setattr__(self, "user_fanouts", tuple(int(m) for m in self.user_fanouts))
        object.__setattr__(self, "item_fanouts", tuple(int(m) for m in self.item_fanouts))
        if self.user_depth < 1:
            raise ValueError(f"user_depth must be >= 1, got {self.user_depth}")
        if len(self.user_fanouts) < self.user_depth:
            raise ValueError(
                f"need {self.user_depth} user fanouts, got {len(self.user_fanouts)}")
        if len(self.item_fanouts) < self.item_depth:
            raise ValueError(
                f"need {self.item_depth} item fanouts, got {len(self.item_fanouts)}")
        if any(m < 1 for m in self.user_plan + self.item_plan):
            raise ValueError("all fanouts in use must be >= 1")

    @property
    def item_depth(self) -> int:
        return self.user_depth - 1

    @property
    def user_plan(self) -> tuple[int, ...]:
        return self.user_fanouts[: self.user_depth]

    @property
    def item_plan(self) -> tuple[int, ...]:
        return self.item_fanouts[: self.item_depth]


def node_side(root_side: str, depth: int) -> str:
    """Side of the nodes at ``depth`` (root = depth 0) of a tree rooted at
    ``root_side``: levels alternate, level 1 is the opposite side."""
    if root_side not in ("user", "item"):
        raise ValueError(f"unknown side {root_side!r}")
    flip = depth % 2 == 1
    return ("item" if root_side == "user" else "user") if flip else root_side


class BehaviorIndex:
    """Per-entity time-ascending interaction lists with binary search.

    Only positive (label 1) events are indexed. Ties in timestamp keep the
    source log's stable order. The index is immutable after construction;
    concurrent read-only queries are safe.
    """

    def __init__(self, log: EventLog):
        self.num_users = log.num_users
        self.num_items = log.num_items
        self.num_categories = log.num_categories
        self._user_entries: dict[int, list[tuple[int, int, int]]] = {}
        self._user_times: dict[int, list[int]] = {}
        self._item_entries: dict[int, list[tuple[int, int]]] = {}
        self._item_times: dict[int, list[int]] = {}
        for e in log.events:
            if e.label != 1:
                continue
            self._user_entries.setdefault(e.user_id, []).append(
                (e.item_id, e.category_id, e.timestamp))
            self._user_times.setdefault(e.user_id, []).append(e.timestamp)
            self._item_entries.setdefault(e.item_id, []).append((e.user_id, e.timestamp))
            self._item_times.setdefault(e.item_id, []).append(e.timestamp)

    def items_before(self, user_id: int, t: int, m: int) -> list[tuple[int, int, int]]:
        """Last ``m`` (item, category, time) of the user strictly before t,
        time-ascending. Unknown users yield an empty list (cold start)."""
        if m < 1:
            raise ValueError("m must be >= 1")
        times = self._user_times.get(user_id)
        if not times:
            return []
        cut = bisect_left(times, t)
        return self._user_entries[user_id][max(0, cut - m) : cut]

    def users_before(self, item_id: int, t: int, m: int) -> list[tuple[int, int]]:
        """Last ``m`` (user, time) of the item strictly before t, time-ascending."""
        if m < 1:
            raise ValueError("m must be >= 1")
        times = self._item_times.get(item_id)
        if not times:
            return []
        cut = bisect_left(times, t)
        return self._item_entries[item_id][max(0, cut - m) : cut]


def build_index(log: EventLog) -> BehaviorIndex:
    return BehaviorIndex(log)


@dataclass
class DsgNode:
    """One node of a nested ego graph: id, category (item side only),
    time decay to the parent, and the node's own children."""

    node_id: int
    category_id: int | None
    delta: int
    children: list["DsgNode"] = field(default_factory=list)


def build_dsg(index: BehaviorIndex, root_id: int, root_side: str, t: int,
              spec: DsgSpec) -> list[DsgNode]:
    """Materialize the nested graph for one (entity, time) query.

    Returns the level-1 children of the root; each child carries its own
    subtree. Empty levels (cold entities) are allowed.
    """
    plan = spec.user_plan if root_side == "user" else spec.item_plan
    depth = len(plan)

    def expand(entity_id: int, side: str, t_parent: int, level: int) -> list[DsgNode]:
        if level > depth:
            return []
        m = plan[level - 1]
        nodes = []
        if side == "user":
            for item_id, cat_id, tau in index.items_before(entity_id, t_parent, m):
                nodes.append(DsgNode(item_id, cat_id, t_parent - tau,
                                     expand(item_id, "item", tau, level + 1)))
        else:
            for user_id, tau in index.users_before(entity_id, t_parent, m):
                nodes.append(DsgNode(user_id, None, t_parent - tau,
                                     expand(user_id, "user", tau, level + 1)))
        return nodes

    return expand(root_id, root_side, t, 1)


@dataclass
class DsgLevel:
    """Padded arrays for one level of one rooted tree.

    All arrays share the shape (B, m1, ..., mk). ``category_ids`` is present
    only when the level's nodes are items.
    """

    side: str
    node_ids: np.ndarray
    category_ids: np.ndarray | None
    time_decays: np.ndarray
    valid_mask: np.ndarray


@dataclass
class DsgBatch:
    """Both rooted trees for a batch of (user, item, time) queries."""

    spec: DsgSpec
    user_ids: np.ndarray
    item_ids: np.ndarray
    item_category_ids: np.ndarray
    root_time_decay: np.ndarray
    user_levels: list[DsgLevel]
    item_levels: list[DsgLevel]

    @property
    def batch_size(self) -> int:
        return int(self.user_ids.shape[0])


def _alloc_levels(batch: int, root_side: str, plan: tuple[int, ...]) -> list[DsgLevel]:
    levels = []
    shape: tuple[int, ...] = (batch,)
    for depth, m in enumerate(plan, start=1):
        shape = shape + (m,)
        side = node_side(root_side, depth)
        levels.append(DsgLevel(
            side=side,
            node_ids=np.zeros(shape, dtype=np.int64),
            category_ids=np.zeros(shape, dtype=np.int64) if side == "item" else None,
            time_decays=np.zeros(shape, dtype=np.int64),
            valid_mask=np.zeros(shape, dtype=np.uint8),
        ))
    return levels


def _fill_tree(index: BehaviorIndex, levels: list[DsgLevel], plan: tuple[int, ...],
               prefix: tuple[int, ...], entity_id: int, side: str,
               t_parent: int, level: int) -> None:
    if level > len(plan):
        return
    m = plan[level - 1]
    lv = levels[level - 1]
    if side == "user":
        seq = index.items_before(entity_id, t_parent, m)
    else:
        seq = [(u, None, tau) for u, tau in index.users_before(entity_id, t_parent, m)]
    offset = m - len(seq)  # right-align: newest behavior ends up last
    for j, (nid, cat, tau) in enumerate(seq):
        pos = prefix + (offset + j,)
        lv.node_ids[pos] = nid
        if lv.category_ids is not None:
            lv.category_ids[pos] = cat
        lv.time_decays[pos] = t_parent - tau
        lv.valid_mask[pos] = 1
        child_side = "item" if side == "user" else "user"
        _fill_tree(index, levels, plan, pos, nid, child_side, tau, level + 1)


def batch_dsgs(index: BehaviorIndex, samples, spec: DsgSpec) -> DsgBatch:
    """Build right-aligned, zero-padded batch arrays for a list of samples.

    ``samples`` is a sequence of events or (user, item, category, time)
    tuples. Each row is built independently, so permuting samples permutes
    the batch rows identically.
    """
    rows = []
    for s in samples:
        if hasattr(s, "user_id"):
            rows.append((s.user_id, s.item_id, s.category_id, s.timestamp))
        else:
            rows.append(tuple(int(x) for x in s))
    batch = len(rows)
    user_plan, item_plan = spec.user_plan, spec.item_plan
    out = DsgBatch(
        spec=spec,
        user_ids=np.array([r[0] for r in rows], dtype=np.int64),
        item_ids=np.array([r[1] for r in rows], dtype=np.int64),
        item_category_ids=np.array([r[2] for r in rows], dtype=np.int64),
        root_time_decay=np.zeros(batch, dtype=np.int64),
        user_levels=_alloc_levels(batch, "user", user_plan),
        item_levels=_alloc_levels(batch, "item", item_plan),
    )
    for b, (u, i, _c, t) in enumerate(rows):
        _fill_tree(index, out.user_levels, user_plan, (b,), u, "user", t, 1)
        if item_plan:
            _fill_tree(index, out.item_levels, item_plan, (b,), i, "item", t, 1)
    return out


def dump_batch(batch: DsgBatch, path) -> None:
    """Write a flat text serialization of the batch (golden-file friendly)."""
    spec = batch.spec
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"batch={batch.batch_size} user_depth={spec.user_depth} "
                 f"user_fanouts={','.join(map(str, spec.user_plan))} "
                 f"item_fanouts={','.join(map(str, spec.item_plan)) or '-'}\n")
        for name, arr in (("user_ids", batch.user_ids), ("item_ids", batch.item_ids),
                          ("item_category_ids", batch.item_category_ids),
                          ("root_time_decay", batch.root_time_decay)):
            fh.write(f"{name} {' '.join(map(str, arr.tolist()))}\n".rstrip() + "\n")
        for tree, levels in (("user", batch.user_levels), ("item", batch.item_levels)):
            for k, lv in enumerate(levels, start=1):
                arrays = [("node_ids", lv.node_ids), ("time_decays", lv.time_decays),
                          ("valid_mask", lv.valid_mask)]
                if lv.category_ids is not None:
                    arrays.insert(1, ("category_ids", lv.category_ids))
                for name, arr in arrays:
                    flat = " ".join(map(str, arr.reshape(-1).tolist()))
                    fh.write(f"{tree}.{k}.{name} {flat}".rstrip() + "\n")


def load_batch(path) -> DsgBatch:
    """Read a serialization produced by :func:`dump_batch`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = dict(kv.split("=") for kv in fh.readline().split())
        batch = int(header["batch"])
        user_fanouts = tuple(int(x) for x in header["user_fanouts"].split(","))
        item_fanouts = (tuple(int(x) for x in header["item_fanouts"].split(","))
                        if header["item_fanouts"] != "-" else ())
        spec = DsgSpec(int(header["user_depth"]), user_fanouts, item_fanouts)
        out = DsgBatch(
            spec=spec,
            user_ids=np.zeros(batch, dtype=np.int64),
            item_ids=np.zeros(batch, dtype=np.int64),
            item_category_ids=np.zeros(batch, dtype=np.int64),
            root_time_decay=np.zeros(batch, dtype=np.int64),
            user_levels=_alloc_levels(batch, "user", spec.user_plan),
            item_levels=_alloc_levels(batch, "item", spec.item_plan),
        )
        roots = {"user_ids": out.user_ids, "item_ids": out.item_ids,
                 "item_category_ids": out.item_category_ids,
                 "root_time_decay": out.root_time_decay}
        for line in fh:
            key, *values = line.split()
            ints = [int(v) for v in values]
            if key in roots:
                roots[key][:] = ints
                continue
            tree, k, name = key.split(".")
            levels = out.user_levels if tree == "user" else out.item_levels
            arr = getattr(levels[int(k) - 1], name)
            arr.reshape(-1)[:] = ints
        return out
