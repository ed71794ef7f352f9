"""Response documents shared by the HTTP server and the CLI.

Both surfaces must emit byte-identical JSON for the same store state, so the
documents are built here once and serialized canonically in both places.
"""

from __future__ import annotations

from typing import Optional

from .errors import UnknownItem
from .events import EventStore
from .execution import Engine
from .model import ItemRef
from .workflow import enabled_activities


def item_summary(store: EventStore, ref: ItemRef) -> dict:
    state = store.state(ref)
    return {
        "name": ref.name,
        "type": state.property_value("Type"),
        "uuid": ref.uuid,
    }


def items_listing(
    store: EventStore,
    type_filter: Optional[str] = None,
    prop_filters: Optional[list[tuple[str, object]]] = None,
) -> list[dict]:
    """Backed by the property index; filters intersect."""
    candidate_sets = []
    if type_filter is not None:
        candidate_sets.append({r.uuid for r in store.query_by_property("Type", type_filter)})
    for name, value in prop_filters or []:
        matches = {r.uuid for r in store.query_by_property(name, value)}
        if isinstance(value, str):
            # query strings arrive untyped; try the scalar reading too
            for coerced in _coercions(value):
                matches |= {r.uuid for r in store.query_by_property(name, coerced)}
        candidate_sets.append(matches)
    refs = store.items()
    if candidate_sets:
        keep = set.intersection(*candidate_sets)
        refs = [r for r in refs if r.uuid in keep]
    return [item_summary(store, r) for r in refs]


def _coercions(text: str) -> list:
    out: list = []
    if text in ("true", "false"):
        out.append(text == "true")
    try:
        out.append(int(text))
    except ValueError:
        try:
            out.append(float(text))
        except ValueError:
            pass
    return out


def item_state_doc(store: EventStore, ref: ItemRef) -> dict:
    state = store.state(ref)
    doc = state.to_doc()
    doc["enabled"] = enabled_activities(state.workflow)
    return doc


def events_doc(store: EventStore, ref: ItemRef, from_seq: int = 0, to_seq=None) -> list[dict]:
    return [e.to_doc() for e in store.events(ref, from_seq, to_seq)]


def viewpoint_doc(store: EventStore, ref: ItemRef, schema_name: str, view_name: str) -> dict:
    outcome, seq = store.resolve_viewpoint(ref, schema_name, view_name)
    return {"outcome": outcome, "seq": seq}


def jobs_doc(engine: Engine, agent: ItemRef) -> list[dict]:
    return [job.to_doc() for job in engine.jobs_for_agent(agent)]


def provenance_doc(store: EventStore, ref: ItemRef) -> list[dict]:
    """History joined with outcomes: one entry per event with the essentials
    surfaced for reading."""
    out = []
    for ev in store.events(ref):
        entry = {
            "activity-path": ev.activity_path,
            "agent": ev.agent.name,
            "outcome": ev.outcome,
            "predefined-step": None if ev.predefined_step is None else ev.predefined_step.to_doc(),
            "seq": ev.seq,
            "timestamp": ev.timestamp,
            "transition": ev.transition,
        }
        if ev.branch is not None:
            entry["branch"] = ev.branch
        out.append(entry)
    return out


def resolve_item(store: EventStore, name_or_uuid: str) -> ItemRef:
    try:
        return store.ref(name_or_uuid)
    except UnknownItem:
        raise
