"""Descriptions as items: bootstrap, versioned authoring, instantiation.

A description is an ordinary item whose outcome documents are templates:
workflow definitions, outcome schemas, collection definitions, property
defaults and scripts. Authoring a document is a normal activity completion
(the authoring activities sit in eternal loops so versions can keep coming),
and instantiation runs as the CreateItemFromDescription predefined step
requested by the instantiate activity's consequence script. Nothing here
bypasses the engine; these are conveniences over ``execute``.

Bootstrap seeds a fresh store with the primordial items, recorded as
ordinary events so provenance starts at sequence zero:

  - the ``system`` agent,
  - ``ItemDescription``, the meta-description whose instances are themselves
    descriptions (the layering hinge),
  - ``AgentType`` and ``ModuleType``, descriptions for agents and modules.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import workflow as wf
from .errors import DdsError, UnknownItem
from .events import EventDraft, EventStore
from .execution import CREATE_PATH, DESCRIPTION_KINDS, INSTANTIATE_KIND, Engine
from .model import ItemRef, PredefinedStep

SYSTEM_AGENT = "system"
ITEM_DESCRIPTION = "ItemDescription"
AGENT_TYPE = "AgentType"
MODULE_TYPE = "ModuleType"

MODELER_ROLE = "modeler"

# Consequence script behind every instantiate activity: turn the submitted
# request into a CreateItemFromDescription step against this description.
INSTANTIATE_SCRIPT = (
    "[step CreateItemFromDescription(item.name, outcome.version, outcome.name, outcome.props)]"
)


def _authoring_loop(activity_id: str, kind: str) -> dict:
    return {
        "kind": "Loop",
        "condition": "true",
        "children": [
            {
                "id": activity_id,
                "kind": "Activity",
                "role": MODELER_ROLE,
                "schema": {"name": kind, "version": "last"},
            }
        ],
    }


def description_workflow_doc() -> dict:
    """The lifecycle shared by every description item: one eternal authoring
    loop per document kind plus the instantiate loop."""
    children = [
        _authoring_loop(f"author_{kind.replace('-', '_')}", kind)
        for kind in DESCRIPTION_KINDS
    ]
    children.append(
        {
            "kind": "Loop",
            "condition": "true",
            "children": [
                {
                    "id": "instantiate",
                    "kind": "Activity",
                    "role": MODELER_ROLE,
                    "schema": {"name": INSTANTIATE_KIND, "version": "last"},
                    "on-complete": [INSTANTIATE_SCRIPT],
                }
            ],
        }
    )
    return {
        "$kind": "workflow-def",
        "body": {"children": children, "kind": "AndSplit"},
        "name": "description-life",
        "version": 0,
    }


def agent_workflow_doc() -> dict:
    return {
        "$kind": "workflow-def",
        "body": {
            "children": [{"id": "register", "kind": "Activity", "role": SYSTEM_AGENT}],
            "kind": "Sequence",
        },
        "name": "agent-life",
        "version": 0,
    }


def module_workflow_doc() -> dict:
    return {
        "$kind": "workflow-def",
        "body": {
            "children": [{"id": "register", "kind": "Activity", "role": SYSTEM_AGENT}],
            "kind": "Sequence",
        },
        "name": "module-life",
        "version": 0,
    }


@dataclass(frozen=True)
class BootstrapRefs:
    system_agent: ItemRef
    item_description: ItemRef
    agent_type: ItemRef
    module_type: ItemRef


def bootstrap(engine: Engine) -> BootstrapRefs:
    """Seed a fresh store. Safe to call on an already-seeded store (returns
    the existing refs without appending anything)."""
    store = engine.store
    if store.has_name(SYSTEM_AGENT):
        return BootstrapRefs(
            system_agent=store.ref(SYSTEM_AGENT),
            item_description=store.ref(ITEM_DESCRIPTION),
            agent_type=store.ref(AGENT_TYPE),
            module_type=store.ref(MODULE_TYPE),
        )

    system = ItemRef(uuid=engine._id_factory(), name=SYSTEM_AGENT)
    _primordial(
        store,
        system,
        agent=system,  # the first event vouches for itself
        item_type="Agent",
        workflow=agent_workflow_doc(),
        extra_props=[
            {"mutable": False, "name": "Kind", "value": "machine"},
            {"mutable": False, "name": "Role", "value": SYSTEM_AGENT},
        ],
    )

    meta = ItemRef(uuid=engine._id_factory(), name=ITEM_DESCRIPTION)
    _primordial(store, meta, agent=system, item_type="Description",
                workflow=description_workflow_doc())

    # The meta-description's templates, authored through its own workflow:
    # instances of ItemDescription are full descriptions themselves.
    add_description_version(engine, system, meta, "workflow-def", description_workflow_doc())
    add_description_version(
        engine, system, meta, "property-defaults", {"properties": [], "type": "Description"}
    )

    agent_type = instantiate(engine, system, meta, "last", AGENT_TYPE)
    add_description_version(engine, system, agent_type, "workflow-def", agent_workflow_doc())
    add_description_version(
        engine, system, agent_type, "property-defaults", {"properties": [], "type": "Agent"}
    )

    module_type = instantiate(engine, system, meta, "last", MODULE_TYPE)
    add_description_version(engine, system, module_type, "workflow-def", module_workflow_doc())
    add_description_version(
        engine, system, module_type, "property-defaults", {"properties": [], "type": "Module"}
    )

    return BootstrapRefs(
        system_agent=system,
        item_description=meta,
        agent_type=agent_type,
        module_type=module_type,
    )


def _primordial(
    store: EventStore,
    ref: ItemRef,
    agent: ItemRef,
    item_type: str,
    workflow: dict,
    extra_props: list | None = None,
) -> None:
    """Creation event for an item that has no description above it. Only
    bootstrap appends these; everything later flows through the engine."""
    props = [
        {"mutable": False, "name": "Name", "value": ref.name},
        {"mutable": False, "name": "Type", "value": item_type},
    ] + (extra_props or [])
    store.append_event(
        ref,
        EventDraft(
            agent=agent,
            activity_path=CREATE_PATH,
            transition="Create",
            predefined_step=PredefinedStep(
                "CreateItemFromDescription",
                {
                    "collections": [],
                    "description": None,
                    "name": ref.name,
                    "properties": sorted(props, key=lambda p: p["name"]),
                    "type": item_type,
                    "version": "0",
                    "workflow": workflow,
                },
            ),
        ),
    )


def _activity_for_kind(engine: Engine, desc: ItemRef, kind: str):
    state = engine.store.state(desc)
    for entry in wf.enabled_entries(state.workflow):
        if (
            entry.kind == "activity"
            and entry.activity.schema is not None
            and entry.activity.schema[0] == kind
        ):
            return entry
    raise UnknownItem(f"{desc.name} has no enabled activity for {kind!r}")


def _complete_activity(engine: Engine, agent: ItemRef, desc: ItemRef, kind: str, outcome: dict):
    entry = _activity_for_kind(engine, desc, kind)
    if entry.state == wf.WAITING:
        engine.execute(agent, desc, entry.path, "Start")
    return engine.execute(agent, desc, entry.path, "Complete", outcome=outcome)


def add_description_version(
    engine: Engine, agent: ItemRef, desc: ItemRef, kind: str, doc: dict
) -> int:
    """Author one template document; returns the pinned version number."""
    if kind not in DESCRIPTION_KINDS:
        raise DdsError(f"not a description document kind: {kind!r}")
    event = _complete_activity(engine, agent, desc, kind, doc)
    for entry in event.viewpoint_updates:
        if entry.schema_name == kind and entry.view_name != "last":
            return int(entry.view_name)
    raise DdsError(f"no version pinned for {kind!r}")  # unreachable on success


def instantiate(
    engine: Engine,
    agent: ItemRef,
    desc: ItemRef,
    version: str,
    new_name: str,
    init_props: list | None = None,
) -> ItemRef:
    """Create a new item from a description at a version tag, through the
    description's own instantiate activity."""
    request = {
        "name": new_name,
        "props": [
            {"name": p["name"], "value": p["value"]} for p in (init_props or [])
        ],
        "version": version,
    }
    _complete_activity(engine, agent, desc, INSTANTIATE_KIND, request)
    return engine.store.ref(new_name)


def create_agent(
    engine: Engine, acting_agent: ItemRef, name: str, role: str, kind: str = "human"
) -> ItemRef:
    agent_type = engine.store.ref(AGENT_TYPE)
    return instantiate(
        engine,
        acting_agent,
        agent_type,
        "last",
        name,
        init_props=[{"name": "Role", "value": role}, {"name": "Kind", "value": kind}],
    )
