"""Append-only per-item event log with replay, viewpoints and a property index.

Events are the only write vehicle in the system. Each item's history is a
dense, zero-based sequence; an item's state is always exactly the left-fold of
its log (``apply_event``), and ``replay`` recomputes that fold from scratch.
The log is one JSON-Lines file per store, fsynced on acknowledgment; an
optional snapshot only skips fold work on open and can be deleted at any time.

Derived, rebuildable structures maintained alongside the fold: the item
directory (name -> uuid), the property index for queries, and the schema /
script / module registries fed by outcome documents of the reserved
description kinds.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import workflow as wf
from .canonical import canonical_bytes, canonical_json, digest
from .errors import (
    DdsError,
    NoSuchView,
    NoSuchVersion,
    RangeOutOfBounds,
    StorageFailure,
    UnknownItem,
)
from .model import (
    CollectionDef,
    CollectionMember,
    CollectionState,
    ItemRef,
    ItemState,
    Property,
    PredefinedStep,
    RESERVED_PROPERTIES,
    ViewpointEntry,
    check_collection_constraint,
    state_digest,
)

LOG_FILE = "events.log"
SNAPSHOT_FILE = "snapshot.json"
SNAPSHOT_INTERVAL = 1000  # appends between automatic snapshots

# Outcome document kinds that feed the description registries.
SCHEMA_KIND = "outcome-schema"
SCRIPT_KIND = "script-def"
MODULE_KIND = "module-manifest"


@dataclass(frozen=True)
class Event:
    """Immutable record of one activity state transition or predefined step."""

    item: ItemRef
    seq: int
    timestamp: int  # UTC nanoseconds, informational only
    agent: ItemRef
    activity_path: str
    transition: str
    state_before: Optional[str] = None
    state_after: Optional[str] = None
    branch: Optional[object] = None  # XOr index / Loop re-arm decision
    outcome: Optional[object] = None
    outcome_ref: Optional[tuple[str, int, int]] = None  # (schema, version, seq)
    predefined_step: Optional[PredefinedStep] = None
    viewpoint_updates: tuple[ViewpointEntry, ...] = ()

    def to_doc(self) -> dict:
        return {
            "activity-path": self.activity_path,
            "agent": self.agent.to_doc(),
            "branch": self.branch,
            "item": self.item.to_doc(),
            "outcome": self.outcome,
            "outcome-ref": None
            if self.outcome_ref is None
            else {
                "schema-name": self.outcome_ref[0],
                "schema-version": self.outcome_ref[1],
                "seq": self.outcome_ref[2],
            },
            "predefined-step": None
            if self.predefined_step is None
            else self.predefined_step.to_doc(),
            "seq": self.seq,
            "state-after": self.state_after,
            "state-before": self.state_before,
            "timestamp": self.timestamp,
            "transition": self.transition,
            "viewpoint-updates": [v.to_doc() for v in self.viewpoint_updates],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Event":
        oref = doc.get("outcome-ref")
        step = doc.get("predefined-step")
        return cls(
            item=ItemRef.from_doc(doc["item"]),
            seq=doc["seq"],
            timestamp=doc["timestamp"],
            agent=ItemRef.from_doc(doc["agent"]),
            activity_path=doc["activity-path"],
            transition=doc["transition"],
            state_before=doc.get("state-before"),
            state_after=doc.get("state-after"),
            branch=doc.get("branch"),
            outcome=doc.get("outcome"),
            outcome_ref=None
            if oref is None
            else (oref["schema-name"], oref["schema-version"], oref["seq"]),
            predefined_step=None if step is None else PredefinedStep.from_doc(step),
            viewpoint_updates=tuple(
                ViewpointEntry.from_doc(v) for v in doc.get("viewpoint-updates", [])
            ),
        )


@dataclass(frozen=True)
class EventDraft:
    """An event as submitted by the execution engine: the store assigns seq
    and timestamp and materializes viewpoint updates at the assigned seq."""

    agent: ItemRef
    activity_path: str
    transition: str
    state_before: Optional[str] = None
    state_after: Optional[str] = None
    branch: Optional[object] = None
    outcome: Optional[object] = None
    outcome_schema: Optional[tuple[str, int]] = None  # (name, version)
    predefined_step: Optional[PredefinedStep] = None
    viewpoint_updates: tuple[tuple[str, str], ...] = ()  # (schema, view name)


# --- The fold -------------------------------------------------------------


def apply_event(state: Optional[ItemState], ev: Event) -> ItemState:
    """Fold one event into an item state. Pure. The creation event (seq 0)
    builds the state from its template snapshot; everything after that is a
    workflow transition or a predefined step plus viewpoint updates."""
    if ev.seq == 0:
        if state is not None:
            raise StorageFailure(f"creation event on existing item {ev.item.name}")
        if ev.predefined_step is None or ev.predefined_step.kind != "CreateItemFromDescription":
            raise StorageFailure("first event must create the item")
        args = ev.predefined_step.args
        instance = wf.WorkflowInstance(definition=_checked_definition(args["workflow"]))
        new = ItemState(
            ref=ev.item,
            properties=tuple(Property.from_doc(p) for p in args["properties"]),
            collections=tuple(
                CollectionState(definition=CollectionDef.from_doc(c))
                for c in args.get("collections", [])
            ),
            workflow=instance,
            viewpoints=(),
            last_event_seq=0,
        )
        return _with_viewpoints(new, ev)
    if state is None:
        raise UnknownItem(ev.item.name)
    if ev.seq != state.last_event_seq + 1:
        raise StorageFailure(
            f"gap in event log for {ev.item.name}: {state.last_event_seq} -> {ev.seq}"
        )
    new = state.evolve(last_event_seq=ev.seq)
    if ev.predefined_step is not None:
        new = _apply_step(new, ev.predefined_step)
    elif ev.transition in wf.TRANSITION_TABLE:
        instance, delta = wf.apply_transition(
            new.workflow, ev.activity_path, ev.transition, ev.branch
        )
        if delta.state_before != ev.state_before or delta.state_after != ev.state_after:
            raise StorageFailure(f"event {ev.seq} on {ev.item.name} disagrees with replay")
        new = new.evolve(workflow=instance)
    else:
        raise StorageFailure(f"unintelligible event {ev.seq} on {ev.item.name}")
    return _with_viewpoints(new, ev)


def _with_viewpoints(state: ItemState, ev: Event) -> ItemState:
    if not ev.viewpoint_updates:
        return state
    views = list(state.viewpoints)
    for entry in ev.viewpoint_updates:
        existing = state.viewpoint(entry.schema_name, entry.view_name)
        if entry.view_name == "last":
            views = [
                v
                for v in views
                if not (v.schema_name == entry.schema_name and v.view_name == "last")
            ]
        elif existing is not None:
            raise StorageFailure(
                f"viewpoint ({entry.schema_name},{entry.view_name}) is write-once"
            )
        views.append(entry)
    return state.evolve(viewpoints=tuple(views))


def _apply_step(state: ItemState, step: PredefinedStep) -> ItemState:
    kind, args = step.kind, step.args
    if kind == "WriteProperty":
        name, value = args["name"], args["value"]
        existing = state.property(name)
        if existing is not None and not existing.mutable:
            raise StorageFailure(f"property {name!r} is immutable")
        props = tuple(p for p in state.properties if p.name != name) + (
            Property(name=name, value=value, mutable=True if existing is None else existing.mutable),
        )
        return state.evolve(properties=props)
    if kind == "AddMemberToCollection":
        coll = state.collection(args["collection"])
        if coll is None:
            raise StorageFailure(f"no collection {args['collection']!r}")
        member = CollectionMember(
            slot=args["slot"],
            target=ItemRef.from_doc(args["target"]),
            properties=tuple(Property.from_doc(p) for p in args.get("member-properties", [])),
        )
        if coll.member_at(member.slot) is not None:
            raise StorageFailure(f"slot {member.slot} occupied in {coll.name!r}")
        updated = replace(coll, members=coll.members + (member,))
        return _swap_collection(state, updated)
    if kind == "RemoveMemberFromCollection":
        coll = state.collection(args["collection"])
        if coll is None:
            raise StorageFailure(f"no collection {args['collection']!r}")
        member = coll.member_at(args["slot"])
        if member is None:
            raise StorageFailure(f"no member at slot {args['slot']} in {coll.name!r}")
        updated = replace(coll, members=tuple(m for m in coll.members if m.slot != args["slot"]))
        return _swap_collection(state, updated)
    if kind in ("CreateItemFromDescription", "ImportModule"):
        # Cross-item / registry effects live on the other side (the created
        # item's own creation event) or in the outcome + viewpoints.
        return state
    raise StorageFailure(f"unknown predefined step kind {kind!r}")


def _swap_collection(state: ItemState, updated: CollectionState) -> ItemState:
    colls = tuple(updated if c.name == updated.name else c for c in state.collections)
    return state.evolve(collections=colls)


# --- Store ------------------------------------------------------------------


def _index_key(name: str, value) -> tuple:
    # booleans are ints in Python; keep the kinds apart in the index
    return (name, type(value).__name__, value)


class EventStore:
    """Event log plus the materialized views derived from it.

    ``append_event`` is the sole mutation entry point; every other public
    method is a read. Pass ``path=None`` for a non-durable in-memory store
    (used heavily by tests); otherwise the store lives in a directory.
    """

    def __init__(
        self,
        path: Optional[str] = None,
        fsync: bool = True,
        clock: Callable[[], int] = time.time_ns,
    ):
        self._path = Path(path) if path is not None else None
        self._fsync = fsync
        self._clock = clock
        self._lock = threading.RLock()
        self._log = None
        self._events: dict[str, list[bytes]] = {}  # uuid -> canonical log lines
        self._states: dict[str, ItemState] = {}  # uuid -> folded state
        self._by_name: dict[str, str] = {}  # name -> uuid
        self._prop_index: dict[tuple, set[str]] = {}
        self._schemas: dict[str, dict] = {}  # name -> {owner, versions{int: (doc, uuid, seq)}}
        self._scripts: dict[str, dict] = {}
        self._modules: dict[str, dict] = {}  # name -> {item, versions{ver: {...}}}
        self._line_count = 0
        self._appends_since_snapshot = 0
        if self._path is not None:
            self._path.mkdir(parents=True, exist_ok=True)
            self._load()
            self._log = open(self._path / LOG_FILE, "ab")

    # -- lifecycle --

    def close(self) -> None:
        with self._lock:
            if self._log is not None:
                self._log.close()
                self._log = None

    def __enter__(self) -> "EventStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _load(self) -> None:
        log_path = self._path / LOG_FILE
        if not log_path.exists():
            log_path.touch()
            return
        raw = log_path.read_bytes()
        lines = raw.split(b"\n")
        tail = lines.pop()  # after a clean final newline this is b""
        if tail:
            # torn final line from a crash mid-append: it was never
            # acknowledged, drop it
            with open(log_path, "ab") as f:
                f.truncate(len(raw) - len(tail))
        skip_fold = 0
        snap_path = self._path / SNAPSHOT_FILE
        if snap_path.exists():
            try:
                snap = json.loads(snap_path.read_text("utf-8"))
                if snap.get("line-count", 0) <= len(lines):
                    for doc in snap["items"]:
                        state = _state_from_doc(doc)
                        self._states[state.ref.uuid] = state
                        self._by_name[state.ref.name] = state.ref.uuid
                    skip_fold = snap["line-count"]
            except (KeyError, ValueError, DdsError):
                self._states.clear()
                self._by_name.clear()
                skip_fold = 0  # snapshots are discardable; fall back to replay
        for i, line in enumerate(lines):
            if not line:
                continue
            ev = Event.from_doc(json.loads(line.decode("utf-8")))
            self._events.setdefault(ev.item.uuid, []).append(line)
            if i >= skip_fold:
                prev = self._states.get(ev.item.uuid)
                self._states[ev.item.uuid] = apply_event(prev, ev)
                if ev.seq == 0:
                    self._by_name[ev.item.name] = ev.item.uuid
            self._feed_registries(ev)
        self._line_count = len(lines)
        self._rebuild_prop_index()

    def snapshot(self) -> None:
        """Write the materialized states; purely an open-time optimization."""
        if self._path is None:
            return
        with self._lock:
            doc = {
                "format": 1,
                "items": [s.to_doc() for s in self._states.values()],
                "line-count": self._line_count,
            }
            tmp = self._path / (SNAPSHOT_FILE + ".tmp")
            tmp.write_bytes(canonical_bytes(doc) + b"\n")
            os.replace(tmp, self._path / SNAPSHOT_FILE)

    # -- the write path --

    def append_event(self, item: ItemRef, draft: EventDraft) -> int:
        """Append one event. Returns the assigned sequence number; the event
        is durable before this returns."""
        with self._lock:
            seq = self._append_one(item, draft)
            self._sync()
            self._maybe_snapshot()
            return seq

    def _append_batch(self, pairs) -> list[Event]:
        """Engine-internal: the events of one execution land together and are
        acknowledged (synced) once. Same per-event semantics as append_event.
        Returns the appended events as materialized."""
        with self._lock:
            events = [self._append_one(item, draft, want_event=True) for item, draft in pairs]
            self._sync()
            self._maybe_snapshot()
            return events

    def _append_one(self, item: ItemRef, draft: EventDraft, want_event: bool = False):
        existing = self._events.get(item.uuid)
        if existing:
            seq = len(existing)
        else:
            seq = 0
            if item.name in self._by_name:
                raise StorageFailure(f"name {item.name!r} already in directory")
        outcome_ref = None
        if draft.outcome_schema is not None:
            outcome_ref = (draft.outcome_schema[0], draft.outcome_schema[1], seq)
        ev = Event(
            item=item,
            seq=seq,
            timestamp=self._clock(),
            agent=draft.agent,
            activity_path=draft.activity_path,
            transition=draft.transition,
            state_before=draft.state_before,
            state_after=draft.state_after,
            branch=draft.branch,
            outcome=draft.outcome,
            outcome_ref=outcome_ref,
            predefined_step=draft.predefined_step,
            viewpoint_updates=tuple(
                ViewpointEntry(schema_name=s, view_name=v, seq=seq)
                for s, v in draft.viewpoint_updates
            ),
        )
        prev = self._states.get(item.uuid)
        new_state = apply_event(prev, ev)  # raises before anything lands
        line = canonical_bytes(ev.to_doc())
        self._write_line(line)
        self._events.setdefault(item.uuid, []).append(line)
        self._states[item.uuid] = new_state
        if seq == 0:
            self._by_name[item.name] = item.uuid
        self._update_prop_index(prev, new_state)
        self._feed_registries(ev)
        self._appends_since_snapshot += 1
        return ev if want_event else seq

    def _write_line(self, line: bytes) -> None:
        if self._log is None:
            self._line_count += 1
            return
        try:
            self._log.write(line + b"\n")
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        self._line_count += 1

    def _sync(self) -> None:
        if self._log is None:
            return
        try:
            self._log.flush()
            if self._fsync:
                os.fsync(self._log.fileno())
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def _maybe_snapshot(self) -> None:
        # a snapshot costs O(items), so demand at least that many appends
        # between snapshots to keep the amortized cost per append constant
        if self._appends_since_snapshot >= max(SNAPSHOT_INTERVAL, len(self._states)):
            self._appends_since_snapshot = 0
            self.snapshot()

    # -- reads --

    def events(self, item: ItemRef, from_seq: int = 0, to_seq: Optional[int] = None) -> list[Event]:
        """Dense ordered slice [from_seq, to_seq] of an item's history."""
        with self._lock:
            log = self._events.get(item.uuid)
            if log is None:
                raise UnknownItem(item.name)
            last = len(log) - 1
            if to_seq is None:
                to_seq = last
            if from_seq < 0 or to_seq > last or from_seq > to_seq:
                raise RangeOutOfBounds(f"[{from_seq},{to_seq}] outside [0,{last}]")
            return [_parse_line(line) for line in log[from_seq : to_seq + 1]]

    def resolve_viewpoint(self, item: ItemRef, schema_name: str, view_name: str):
        """The outcome designated by a (schema, view) pair, plus its seq."""
        with self._lock:
            state = self._states.get(item.uuid)
            if state is None:
                raise UnknownItem(item.name)
            entry = state.viewpoint(schema_name, view_name)
            if entry is None:
                raise NoSuchView(f"{item.name}:{schema_name}/{view_name}")
            ev = _parse_line(self._events[item.uuid][entry.seq])
            return ev.outcome, entry.seq

    def replay(self, item: ItemRef) -> ItemState:
        """Fold the item's full log from scratch. Ground truth for its state."""
        with self._lock:
            log = self._events.get(item.uuid)
            if log is None:
                raise UnknownItem(item.name)
            state: Optional[ItemState] = None
            for line in log:
                state = apply_event(state, _parse_line(line))
            return state

    def query_by_property(self, name: str, value) -> list[ItemRef]:
        """Items whose current state carries the property, ordered by name."""
        with self._lock:
            if name == "Name":
                # the directory already is the Name index
                uuid = self._by_name.get(value) if isinstance(value, str) else None
                return [self._states[uuid].ref] if uuid is not None else []
            uuids = self._prop_index.get(_index_key(name, value), ())
            refs = [self._states[u].ref for u in uuids]
            return sorted(refs, key=lambda r: r.name)

    # -- read helpers used by the engine, server and CLI --

    def items(self) -> list[ItemRef]:
        with self._lock:
            return sorted((s.ref for s in self._states.values()), key=lambda r: r.name)

    def has_item(self, item: ItemRef) -> bool:
        return item.uuid in self._states

    def has_name(self, name: str) -> bool:
        return name in self._by_name

    def ref(self, name_or_uuid: str) -> ItemRef:
        with self._lock:
            uuid = self._by_name.get(name_or_uuid, name_or_uuid)
            state = self._states.get(uuid)
            if state is None:
                raise UnknownItem(name_or_uuid)
            return state.ref

    def state(self, item: ItemRef) -> ItemState:
        with self._lock:
            state = self._states.get(item.uuid)
            if state is None:
                raise UnknownItem(item.name)
            return state

    def last_seq(self, item: ItemRef) -> int:
        return self.state(item).last_event_seq

    def resolve_schema(self, name: str, version) -> tuple[dict, int]:
        """Registry lookup: (schema document, resolved integer version)."""
        with self._lock:
            entry = self._schemas.get(name)
            if entry is None:
                raise NoSuchVersion(f"schema {name!r}")
            return self._resolve_versions(entry["versions"], name, version)

    def resolve_script(self, name: str, version) -> tuple[dict, int]:
        with self._lock:
            entry = self._scripts.get(name)
            if entry is None:
                raise NoSuchVersion(f"script {name!r}")
            return self._resolve_versions(entry["versions"], name, version)

    def schema_owner(self, name: str) -> Optional[str]:
        entry = self._schemas.get(name)
        return entry["owner"] if entry else None

    def script_owner(self, name: str) -> Optional[str]:
        entry = self._scripts.get(name)
        return entry["owner"] if entry else None

    def module_registry(self) -> dict[str, dict]:
        with self._lock:
            return {
                name: {"item": entry["item"], "versions": dict(entry["versions"])}
                for name, entry in self._modules.items()
            }

    @staticmethod
    def _resolve_versions(versions: dict, name: str, version) -> tuple[dict, int]:
        if version == "last" or version is None:
            resolved = max(versions)
        else:
            try:
                resolved = int(version)
            except (TypeError, ValueError):
                raise NoSuchVersion(f"{name}@{version}")
            if resolved not in versions:
                raise NoSuchVersion(f"{name}@{version}")
        return versions[resolved][0], resolved

    # -- derived structures --

    def _rebuild_prop_index(self) -> None:
        self._prop_index.clear()
        for state in self._states.values():
            for p in state.properties:
                if p.name != "Name":
                    self._prop_index.setdefault(_index_key(p.name, p.value), set()).add(
                        state.ref.uuid
                    )

    def _update_prop_index(self, prev: Optional[ItemState], new: ItemState) -> None:
        old_keys = (
            set()
            if prev is None
            else {_index_key(p.name, p.value) for p in prev.properties if p.name != "Name"}
        )
        new_keys = {_index_key(p.name, p.value) for p in new.properties if p.name != "Name"}
        for key in old_keys - new_keys:
            bucket = self._prop_index.get(key)
            if bucket is not None:
                bucket.discard(new.ref.uuid)
        for key in new_keys - old_keys:
            self._prop_index.setdefault(key, set()).add(new.ref.uuid)

    def _feed_registries(self, ev: Event) -> None:
        """Schema / script / module registries follow outcome documents of the
        reserved description kinds, keyed by the pinned integer viewpoint."""
        if ev.outcome_ref is None or ev.outcome is None:
            return
        kind = ev.outcome_ref[0]
        pinned = [
            int(v.view_name)
            for v in ev.viewpoint_updates
            if v.schema_name == kind and v.view_name != "last"
        ]
        if not pinned:
            return
        version = pinned[0]
        if kind == SCHEMA_KIND:
            name = ev.outcome.get("name")
            entry = self._schemas.setdefault(name, {"owner": ev.item.uuid, "versions": {}})
            entry["versions"][version] = (ev.outcome, ev.item.uuid, ev.seq)
        elif kind == SCRIPT_KIND:
            name = ev.outcome.get("name")
            entry = self._scripts.setdefault(name, {"owner": ev.item.uuid, "versions": {}})
            entry["versions"][version] = (ev.outcome, ev.item.uuid, ev.seq)
        elif kind == MODULE_KIND:
            name = ev.outcome["manifest"]["name"]
            entry = self._modules.setdefault(name, {"item": ev.item.uuid, "versions": {}})
            entry["versions"][ev.outcome["manifest"]["version"]] = {
                "bundle": ev.outcome,
                "hash": digest(ev.outcome),
                "view": version,
                "seq": ev.seq,
            }


def _parse_line(line: bytes) -> Event:
    return Event.from_doc(json.loads(line.decode("utf-8")))


@lru_cache(maxsize=4096)
def _checked_definition_cached(canonical: str) -> "wf.WorkflowDef":
    definition = wf.parse_workflow_doc(json.loads(canonical))
    report = wf.validate_workflow(definition)
    if not report.valid:
        from .errors import InvalidDefinition

        raise InvalidDefinition(report.defects)
    return definition


def _checked_definition(doc: dict) -> "wf.WorkflowDef":
    """Parse + validate a frozen workflow document, interning the result.
    Definitions are immutable values, so instances sharing one parsed tree is
    invisible semantically and keeps 10k identical copies off the heap."""
    return _checked_definition_cached(canonical_json(doc))


def _state_from_doc(doc: dict) -> ItemState:
    return ItemState(
        ref=ItemRef.from_doc(doc["ref"]),
        properties=tuple(Property.from_doc(p) for p in doc["properties"]),
        collections=tuple(CollectionState.from_doc(c) for c in doc["collections"]),
        workflow=wf.WorkflowInstance.from_doc(doc["workflow"]),
        viewpoints=tuple(ViewpointEntry.from_doc(v) for v in doc["viewpoints"]),
        last_event_seq=doc["last-event-seq"],
    )


def store_digest(store: EventStore) -> str:
    """Digest over every item's state digest, keyed by name. Two stores with
    identical contents agree regardless of internal layout."""
    pairs = [[ref.name, state_digest(store.state(ref))] for ref in store.items()]
    return digest(pairs)
