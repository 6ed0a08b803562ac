"""Event logs, follower networks, stage windows and per-stage user state."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

TWEET, RETWEET, LIKE = 0, 1, 2
KIND_NAMES = {TWEET: "tweet", RETWEET: "retweet", LIKE: "like"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

# label codes; likes carry no label
FAKE, TRUE, NO_LABEL = 0, 1, -1
LABEL_NAMES = {FAKE: "F", TRUE: "T"}
LABEL_CODES = {"F": FAKE, "T": TRUE}

# column order of the per-user state matrix
STATE_COLUMNS = ("tweet_T", "tweet_F", "retweet_T", "retweet_F", "likes")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Event:
    t: float
    user: int
    kind: str
    label: str | None = None
    target: int | None = None


def _check_event(t, user, kind, label, target, n_users=None):
    if not np.isfinite(t) or t < 0:
        raise DataError(f"invalid time {t!r}")
    if user < 0 or (n_users is not None and user >= n_users):
        raise DataError(f"user {user} out of range")
    if kind not in KIND_CODES:
        raise DataError(f"unknown kind {kind!r}")
    if kind == "tweet":
        if target is not None:
            raise DataError("tweet must not have a target")
    else:
        if target is None:
            raise DataError(f"{kind} requires target")
        if target < 0 or (n_users is not None and target >= n_users):
            raise DataError(f"target {target} out of range")
        if target == user:
            raise DataError(f"{kind} target equals user")
    if kind == "like":
        if label is not None:
            raise DataError("like must not carry a label")
    elif label not in LABEL_CODES:
        raise DataError(f"{kind} requires label T or F, got {label!r}")


@dataclass(frozen=True, eq=False)
class EventLog:
    """Column-oriented, time-sorted collection of events.

    ``label`` and ``target`` use -1 for "absent".
    """

    t: np.ndarray
    user: np.ndarray
    kind: np.ndarray
    label: np.ndarray
    target: np.ndarray
    n_users: int

    def __post_init__(self):
        for name in ("t", "user", "kind", "label", "target"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @classmethod
    def empty(cls, n_users):
        return cls.from_arrays([], [], [], [], [], n_users)

    @classmethod
    def from_arrays(cls, t, user, kind, label, target, n_users, *, validate=False):
        t = np.asarray(t, dtype=float)
        user = np.asarray(user, dtype=np.int64)
        kind = np.asarray(kind, dtype=np.int8)
        label = np.asarray(label, dtype=np.int8)
        target = np.asarray(target, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        log = cls(t[order], user[order], kind[order], label[order], target[order], int(n_users))
        if validate:
            for e in log:
                _check_event(e.t, e.user, e.kind, e.label, e.target, log.n_users)
        return log

    @classmethod
    def from_events(cls, events, n_users):
        events = list(events)
        for e in events:
            _check_event(e.t, e.user, e.kind, e.label, e.target, n_users)
        return cls.from_arrays(
            [e.t for e in events],
            [e.user for e in events],
            [KIND_CODES[e.kind] for e in events],
            [NO_LABEL if e.label is None else LABEL_CODES[e.label] for e in events],
            [-1 if e.target is None else e.target for e in events],
            n_users,
        )

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for i in range(len(self)):
            yield self.event(i)

    def event(self, i):
        lab = int(self.label[i])
        tgt = int(self.target[i])
        return Event(
            t=float(self.t[i]),
            user=int(self.user[i]),
            kind=KIND_NAMES[int(self.kind[i])],
            label=None if lab == NO_LABEL else LABEL_NAMES[lab],
            target=None if tgt < 0 else tgt,
        )

    def _subset(self, mask):
        return EventLog(
            self.t[mask], self.user[mask], self.kind[mask],
            self.label[mask], self.target[mask], self.n_users,
        )

    def window(self, t0, t1):
        """Events with ``t0 <= t < t1``."""
        lo = np.searchsorted(self.t, t0, side="left")
        hi = np.searchsorted(self.t, t1, side="left")
        return self._subset(slice(lo, hi))

    def select(self, kind, label=None):
        mask = self.kind == kind
        if label is not None:
            mask &= self.label == label
        return self._subset(mask)

    def concat(self, other):
        if other.n_users != self.n_users:
            raise DataError("cannot merge logs with different user counts")
        return EventLog.from_arrays(
            np.concatenate([self.t, other.t]),
            np.concatenate([self.user, other.user]),
            np.concatenate([self.kind, other.kind]),
            np.concatenate([self.label, other.label]),
            np.concatenate([self.target, other.target]),
            self.n_users,
        )

    def equals(self, other):
        return self.n_users == other.n_users and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("t", "user", "kind", "label", "target")
        )


def load_events(path, n_users=None):
    """Read a JSON-Lines event log.

    Lines are ``{"t", "user", "kind", "label"?, "target"?}``; blank lines are
    skipped. When ``n_users`` is None it is inferred as max index + 1.
    """
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ev = Event(
                    t=float(rec["t"]),
                    user=int(rec["user"]),
                    kind=str(rec["kind"]).lower(),
                    label=rec.get("label"),
                    target=None if rec.get("target") is None else int(rec["target"]),
                )
                _check_event(ev.t, ev.user, ev.kind, ev.label, ev.target, n_users)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed event ({exc})") from None
            events.append(ev)
    if n_users is None:
        n_users = 1 + max(
            [e.user for e in events] + [e.target for e in events if e.target is not None],
            default=-1,
        )
    return EventLog.from_events(events, n_users)


def save_events(log, path):
    # json writes floats via repr(), which round-trips float64 exactly
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in log:
            rec = {"t": e.t, "user": e.user, "kind": e.kind}
            if e.label is not None:
                rec["label"] = e.label
            if e.target is not None:
                rec["target"] = e.target
            fh.write(json.dumps(rec) + "\n")


@dataclass(frozen=True, eq=False)
class Network:
    """Follower graph; ``adjacency[i, j] == 1`` iff j follows i."""

    adjacency: np.ndarray
    gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = np.asarray(self.adjacency, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise DataError("adjacency must be square")
        if not np.isin(G, (0.0, 1.0)).all():
            raise DataError("adjacency must be binary")
        if np.any(np.diag(G)):
            raise DataError("self-loop in adjacency")
        G.setflags(write=False)
        object.__setattr__(self, "adjacency", G)
        gram = G.T @ G
        gram.setflags(write=False)
        object.__setattr__(self, "gram", gram)

    @property
    def n_users(self):
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, edges, n_users):
        G = np.zeros((n_users, n_users))
        for i, j in edges:
            if i == j:
                raise DataError(f"self-loop at {i}")
            if not (0 <= i < n_users and 0 <= j < n_users):
                raise DataError(f"edge ({i},{j}) out of range for N={n_users}")
            G[i, j] = 1.0
        return cls(G)

    def edges(self):
        src, dst = np.nonzero(self.adjacency)
        return list(zip(src.tolist(), dst.tolist()))


def load_network(path, n_users=None):
    edges = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "dst"]:
            raise DataError(f"{path}: expected header 'src,dst'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i, j = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
            if i == j:
                raise DataError(f"{path}:{lineno}: self-loop at {i}")
            edges.append((i, j))
    if n_users is None:
        n_users = 1 + max((max(e) for e in edges), default=-1)
    return Network.from_edges(edges, n_users)


def save_network(net, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src", "dst"])
        writer.writerows(net.edges())


def load_id_map(path):
    """Sidecar CSV ``external_id,index`` -> dict mapping external id to index."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["external_id"]: int(row["index"]) for row in reader}


@dataclass(frozen=True)
class StagePartition:
    start: float
    horizon: float
    dt: float

    @property
    def n_stages(self):
        return int(round((self.horizon - self.start) / self.dt))

    @property
    def boundaries(self):
        """tau_1 .. tau_{K+1}."""
        return self.start + self.dt * np.arange(self.n_stages + 1)

    def stage_window(self, k):
        """[tau_k, tau_{k+1}) for 1-based stage k; k=0 is the stage before the window."""
        lo = self.start + (k - 1) * self.dt
        return lo, lo + self.dt


def partition_stages(start, horizon, dt):
    if dt <= 0:
        raise DataError("dt must be positive")
    span = (horizon - start) / dt
    if span < 1 or abs(span - round(span)) > 1e-9:
        raise DataError(f"window [{start}, {horizon}) is not a positive multiple of dt={dt}")
    return StagePartition(float(start), float(horizon), float(dt))


def stage_counts(log, t0, t1):
    """N x 5 count matrix for events in [t0, t1); likes are credited to the target."""
    w = log.window(t0, t1)
    n = log.n_users
    out = np.zeros((n, 5), dtype=np.int64)
    for col, (kind, label) in enumerate(
        [(TWEET, TRUE), (TWEET, FAKE), (RETWEET, TRUE), (RETWEET, FAKE)]
    ):
        m = (w.kind == kind) & (w.label == label)
        out[:, col] = np.bincount(w.user[m], minlength=n)
    likes = w.kind == LIKE
    out[:, 4] = np.bincount(w.target[likes], minlength=n)
    return out


def compute_state(log, part, k):
    """Per-user activity counts of stage k-1, i.e. events in [tau_{k-1}, tau_k).

    ``k`` is 1-based and may range over 1..K+1; k=1 reads the ΔT before the
    window start, which is empty when no earlier events exist.
    """
    if not 1 <= k <= part.n_stages + 1:
        raise DataError(f"stage index {k} outside 1..{part.n_stages + 1}")
    t0, t1 = part.stage_window(k - 1)
    return stage_counts(log, t0, t1)


def exposure_counts(net, n):
    """Entry i = sum_j G[j, i] * n[j]: posts user i sees from accounts it follows."""
    n = np.asarray(n, dtype=float)
    if n.shape[0] != net.n_users:
        raise DataError(f"count vector has length {n.shape[0]}, expected {net.n_users}")
    return net.adjacency.T @ n
