"""Interaction logs: file I/O, temporal splitting, negative sampling, synthesis.

The on-disk format is UTF-8 text, one event per line:
``user_id,item_id,category_id,timestamp,label`` with ``#`` comment lines
ignored. All functions here are pure over immutable logs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

EVENT_HEADER = "# user_id,item_id,category_id,timestamp,label"


class ParseError(ValueError):
    """Malformed event file; carries the 1-based line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True, slots=True)
class InteractionEvent:
    """One (user, item, category, timestamp, label) record."""

    user_id: int
    item_id: int
    category_id: int
    timestamp: int
    label: int


@dataclass(slots=True)
class EventLog:
    """Events sorted ascending by timestamp (stable) plus vocabulary sizes."""

    events: list[InteractionEvent] = field(default_factory=list)
    num_users: int = 0
    num_items: int = 0
    num_categories: int = 0

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def positives(self) -> list[InteractionEvent]:
        return [e for e in self.events if e.label == 1]

    @classmethod
    def from_events(cls, events, num_users=None, num_items=None, num_categories=None):
        ordered = sorted(events, key=lambda e: e.timestamp)
        if num_users is None:
            num_users = 1 + max((e.user_id for e in ordered), default=-1)
        if num_items is None:
            num_items = 1 + max((e.item_id for e in ordered), default=-1)
        if num_categories is None:
            num_categories = 1 + max((e.category_id for e in ordered), default=-1)
        return cls(ordered, num_users, num_items, num_categories)


def load_events(path) -> EventLog:
    """Read an event file; vocab sizes are 1 + the largest observed ID."""
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ParseError(path, line_no, f"expected 5 comma-separated fields, got {len(parts)}")
            try:
                u, i, c, t, y = (int(p) for p in parts)
            except ValueError:
                raise ParseError(path, line_no, f"non-integer field in {line!r}") from None
            if min(u, i, c, t) < 0:
                raise ParseError(path, line_no, "IDs and timestamps must be non-negative")
            if y not in (0, 1):
                raise ParseError(path, line_no, f"label must be 0 or 1, got {y}")
            events.append(InteractionEvent(u, i, c, t, y))
    return EventLog.from_events(events)


def write_events(path, log_or_events) -> None:
    events = log_or_events.events if isinstance(log_or_events, EventLog) else log_or_events
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EVENT_HEADER + "\n")
        for e in events:
            fh.write(f"{e.user_id},{e.item_id},{e.category_id},{e.timestamp},{e.label}\n")


def temporal_split(log: EventLog, train_frac: float = 0.85,
                   valid_frac: float = 0.10) -> tuple[EventLog, EventLog, EventLog]:
    """Split by time: earliest ceil(train_frac*N) events form the training
    span, the last ceil(valid_frac * span) of those become validation, the
    rest is test. Ties at the cut are broken by stable input order.
    """
    n = len(log)
    if n < 3:
        raise ValueError(f"temporal split needs at least 3 events, got {n}")
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    if not 0.0 <= valid_frac < 1.0:
        raise ValueError(f"valid_frac must be in [0, 1), got {valid_frac}")
    span = math.ceil(train_frac * n)
    n_valid = math.ceil(valid_frac * span)
    n_train = span - n_valid
    vocab = dict(num_users=log.num_users, num_items=log.num_items,
                 num_categories=log.num_categories)
    train = EventLog(list(log.events[:n_train]), **vocab)
    valid = EventLog(list(log.events[n_train:span]), **vocab)
    test = EventLog(list(log.events[span:]), **vocab)
    return train, valid, test


def negative_sample(split: EventLog, full_log: EventLog, seed: int,
                    max_tries: int = 100) -> list[InteractionEvent]:
    """Pair each positive event with one sampled non-interacted item.

    For every positive (u, i, t) in ``split`` the output holds the positive
    followed by one (u, j, t, label=0) where j is drawn uniformly (seeded)
    from items u never interacts with anywhere in ``full_log``. The negative
    reuses the positive's timestamp, so both score against the same history.
    Users who interacted with every item keep their positive unpaired, with
    a logged warning.
    """
    num_items = full_log.num_items
    seen: dict[int, set[int]] = {}
    item_category: dict[int, int] = {}
    for e in full_log.events:
        if e.label != 1:
            continue
        seen.setdefault(e.user_id, set()).add(e.item_id)
        item_category.setdefault(e.item_id, e.category_id)
    rng = np.random.default_rng(seed)
    out: list[InteractionEvent] = []
    for e in split.events:
        if e.label != 1:
            continue
        out.append(e)
        user_seen = seen.get(e.user_id, set())
        if len(user_seen) >= num_items:
            logger.warning("user %d interacted with all %d items; no negative emitted",
                           e.user_id, num_items)
            continue
        for _ in range(max_tries):
            j = int(rng.integers(num_items))
            if j not in user_seen:
                out.append(InteractionEvent(e.user_id, j, item_category.get(j, 0),
                                            e.timestamp, 0))
                break
        else:
            logger.warning("gave up sampling a negative for user %d after %d tries",
                           e.user_id, max_tries)
    return out


@dataclass(frozen=True, slots=True)
class SynthConfig:
    """Knobs for the clustered synthetic interaction generator."""

    num_users: int = 100
    num_items: int = 50
    num_clusters: int = 2
    num_events: int = 10000
    drift_prob: float = 0.01
    noise_prob: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_users", "num_items", "num_clusters", "num_events"):
            if getattr(self, name) < (0 if name == "num_events" else 1):
                raise ValueError(f"{name} must be positive")
        for name in ("drift_prob", "noise_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.num_clusters > self.num_items:
            raise ValueError("need at least one item per cluster")


def synth_generate(cfg: SynthConfig) -> EventLog:
    """Generate a clustered interaction log.

    Items are spread round-robin over shuffled cluster slots so every cluster
    is non-empty; an item's category is its cluster. Each user starts in a
    random cluster. At tick k a random user acts: with ``drift_prob`` it first
    moves to a random cluster, then picks an item from its cluster, except
    with ``noise_prob`` the pick is uniform over all items. Timestamps are the
    tick index, so they are unique and strictly increasing.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(cfg.num_items)
    item_cluster = np.empty(cfg.num_items, dtype=np.int64)
    item_cluster[perm] = np.arange(cfg.num_items) % cfg.num_clusters
    cluster_items = [np.flatnonzero(item_cluster == c) for c in range(cfg.num_clusters)]
    user_cluster = rng.integers(cfg.num_clusters, size=cfg.num_users)
    events = []
    for tick in range(cfg.num_events):
        u = int(rng.integers(cfg.num_users))
        if rng.random() < cfg.drift_prob:
            user_cluster[u] = rng.integers(cfg.num_clusters)
        if rng.random() < cfg.noise_prob:
            i = int(rng.integers(cfg.num_items))
        else:
            i = int(rng.choice(cluster_items[user_cluster[u]]))
        events.append(InteractionEvent(u, i, int(item_cluster[i]), tick, 1))
    return EventLog(events, cfg.num_users, cfg.num_items, cfg.num_clusters)
