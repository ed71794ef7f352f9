"""Item anatomy: references, properties, collections, state.

Items are the universal business object. An ItemState bundles everything an
item is at one point in time: identifying properties, collection memberships,
its workflow instance, viewpoints over its outcomes, and the sequence number
of the last event folded into it. All values here are immutable; state changes
happen by folding events one level up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Union

from .canonical import digest
from .errors import DdsError

if TYPE_CHECKING:
    from .workflow import WorkflowInstance

Scalar = Union[str, int, float, bool]

SCALAR_TYPES = (str, int, float, bool)

# Properties fixed at creation; WriteProperty may never touch them.
RESERVED_PROPERTIES = ("Name", "Type")


def is_scalar(value) -> bool:
    return isinstance(value, SCALAR_TYPES)


@dataclass(frozen=True)
class ItemRef:
    """Identity of an item: a never-reused uuid plus a server-unique name."""

    uuid: str
    name: str

    def __post_init__(self):
        if not self.name or "/" in self.name:
            raise DdsError(f"invalid item name: {self.name!r}")

    def to_doc(self) -> dict:
        return {"name": self.name, "uuid": self.uuid}

    @classmethod
    def from_doc(cls, doc: dict) -> "ItemRef":
        return cls(uuid=doc["uuid"], name=doc["name"])


@dataclass(frozen=True)
class Property:
    name: str
    value: Scalar
    mutable: bool = True

    def to_doc(self) -> dict:
        return {"mutable": self.mutable, "name": self.name, "value": self.value}

    @classmethod
    def from_doc(cls, doc: dict) -> "Property":
        return cls(name=doc["name"], value=doc["value"], mutable=doc["mutable"])


@dataclass(frozen=True)
class SlotSpec:
    slot_id: int
    type_constraint: Optional[str] = None

    def to_doc(self) -> dict:
        doc = {"slot-id": self.slot_id}
        if self.type_constraint is not None:
            doc["type-constraint"] = self.type_constraint
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "SlotSpec":
        return cls(slot_id=doc["slot-id"], type_constraint=doc.get("type-constraint"))


@dataclass(frozen=True)
class CollectionDef:
    """Shape of a collection: free references (Dependency) or an ordered set
    of typed positions (Aggregation)."""

    name: str
    kind: str  # "Dependency" | "Aggregation"
    slots: tuple[SlotSpec, ...] = ()

    def __post_init__(self):
        if self.kind not in ("Dependency", "Aggregation"):
            raise DdsError(f"unknown collection kind: {self.kind!r}")
        if self.kind == "Aggregation":
            ids = [s.slot_id for s in self.slots]
            if ids != list(range(len(ids))):
                raise DdsError(f"aggregation slot ids must be dense 0..n-1: {ids}")
        for s in self.slots:
            if s.type_constraint is not None and not s.type_constraint:
                raise DdsError("empty type-constraint")

    def to_doc(self) -> dict:
        doc = {"kind": self.kind, "name": self.name}
        if self.kind == "Aggregation":
            doc["slots"] = [s.to_doc() for s in self.slots]
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "CollectionDef":
        return cls(
            name=doc["name"],
            kind=doc["kind"],
            slots=tuple(SlotSpec.from_doc(s) for s in doc.get("slots", [])),
        )


@dataclass(frozen=True)
class CollectionMember:
    slot: int  # slot-id for Aggregation, append-index for Dependency
    target: ItemRef
    properties: tuple[Property, ...] = ()

    def to_doc(self) -> dict:
        return {
            "member-properties": [p.to_doc() for p in sorted(self.properties, key=lambda p: p.name)],
            "slot": self.slot,
            "target": self.target.to_doc(),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CollectionMember":
        return cls(
            slot=doc["slot"],
            target=ItemRef.from_doc(doc["target"]),
            properties=tuple(Property.from_doc(p) for p in doc.get("member-properties", [])),
        )


@dataclass(frozen=True)
class CollectionState:
    definition: CollectionDef
    members: tuple[CollectionMember, ...] = ()

    @property
    def name(self) -> str:
        return self.definition.name

    def member_at(self, slot: int) -> Optional[CollectionMember]:
        for m in self.members:
            if m.slot == slot:
                return m
        return None

    def to_doc(self) -> dict:
        return {
            "def": self.definition.to_doc(),
            "members": [m.to_doc() for m in sorted(self.members, key=lambda m: m.slot)],
            "name": self.name,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CollectionState":
        return cls(
            definition=CollectionDef.from_doc(doc["def"]),
            members=tuple(CollectionMember.from_doc(m) for m in doc.get("members", [])),
        )


@dataclass(frozen=True)
class ViewpointEntry:
    """Named pointer from (schema, view) to the event whose outcome it designates.

    View names are "last" or a decimal integer string; integer views are
    write-once, "last" always tracks the highest sequence number.
    """

    schema_name: str
    view_name: str
    seq: int

    def to_doc(self) -> dict:
        return {"schema-name": self.schema_name, "seq": self.seq, "view-name": self.view_name}

    @classmethod
    def from_doc(cls, doc: dict) -> "ViewpointEntry":
        return cls(schema_name=doc["schema-name"], view_name=doc["view-name"], seq=doc["seq"])


STEP_KINDS = (
    "WriteProperty",
    "AddMemberToCollection",
    "RemoveMemberFromCollection",
    "CreateItemFromDescription",
    "ImportModule",
)


@dataclass(frozen=True)
class PredefinedStep:
    """One of the hard-coded write operations. The only way properties,
    collections, the item directory or the module registry ever change."""

    kind: str
    args: dict

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise DdsError(f"unknown predefined step kind: {self.kind!r}")

    def to_doc(self) -> dict:
        return {"args": self.args, "kind": self.kind}

    @classmethod
    def from_doc(cls, doc: dict) -> "PredefinedStep":
        return cls(kind=doc["kind"], args=doc["args"])


@dataclass(frozen=True)
class ItemState:
    ref: ItemRef
    properties: tuple[Property, ...]
    collections: tuple[CollectionState, ...]
    workflow: "WorkflowInstance"
    viewpoints: tuple[ViewpointEntry, ...] = ()
    last_event_seq: int = -1  # -1 only before the creation event lands

    def property(self, name: str) -> Optional[Property]:
        for p in self.properties:
            if p.name == name:
                return p
        return None

    def property_value(self, name: str):
        p = self.property(name)
        return p.value if p else None

    def collection(self, name: str) -> Optional[CollectionState]:
        for c in self.collections:
            if c.name == name:
                return c
        return None

    def viewpoint(self, schema_name: str, view_name: str) -> Optional[ViewpointEntry]:
        for v in self.viewpoints:
            if v.schema_name == schema_name and v.view_name == view_name:
                return v
        return None

    def evolve(self, **changes) -> "ItemState":
        """dataclasses.replace without the introspection cost (hot path)."""
        return ItemState(
            ref=changes.get("ref", self.ref),
            properties=changes.get("properties", self.properties),
            collections=changes.get("collections", self.collections),
            workflow=changes.get("workflow", self.workflow),
            viewpoints=changes.get("viewpoints", self.viewpoints),
            last_event_seq=changes.get("last_event_seq", self.last_event_seq),
        )

    def to_doc(self) -> dict:
        return {
            "collections": [c.to_doc() for c in sorted(self.collections, key=lambda c: c.name)],
            "last-event-seq": self.last_event_seq,
            "properties": [p.to_doc() for p in sorted(self.properties, key=lambda p: p.name)],
            "ref": self.ref.to_doc(),
            "viewpoints": [
                v.to_doc()
                for v in sorted(self.viewpoints, key=lambda v: (v.schema_name, v.view_name))
            ],
            "workflow": self.workflow.to_doc(),
        }


def check_collection_constraint(
    cdef: CollectionDef,
    state: Optional[CollectionState],
    slot: Optional[int],
    member_type: str,
) -> str:
    """Pure membership check. Returns "ok" or a violation code.

    Aggregations require a slot in range, empty, and (when constrained) a
    matching member type. Dependencies are unbounded and unconstrained.
    """
    if cdef.kind == "Dependency":
        return "ok"
    if slot is None or slot < 0 or slot >= len(cdef.slots):
        return "SlotOutOfRange"
    if state is not None and state.member_at(slot) is not None:
        return "SlotOccupied"
    constraint = cdef.slots[slot].type_constraint
    if constraint is not None and constraint != member_type:
        return "TypeMismatch"
    return "ok"


def state_digest(state: ItemState) -> str:
    """SHA-256 over the canonical state serialization. Insertion order of
    properties and members never affects the digest."""
    return digest(state.to_doc())
