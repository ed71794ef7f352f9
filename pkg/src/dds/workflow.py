"""Block-structured workflows and the per-activity state machine.

A definition is a tree of composite blocks (Sequence, AndSplit, XOrSplit,
Loop) with activities at the leaves. Instances are immutable values; applying
a transition returns a new instance. Conditional blocks surface decision
pseudo-steps in the enabled set: an XOrSplit must be decided before one branch
opens, a Loop must be decided after each child completion. Deciding is a
transition like any other so that the event log captures every choice.

Activity states: Waiting, Started, Completed, Suspended, Aborted. Completed
and Aborted are terminal for one occurrence; a Loop re-arm resets child states
(new occurrences) while iteration counters keep growing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .errors import (
    DdsError,
    IllegalTransition,
    InvalidDefinition,
    ParseError,
    UnknownActivity,
)
from . import scripting

WAITING = "Waiting"
STARTED = "Started"
COMPLETED = "Completed"
SUSPENDED = "Suspended"
ABORTED = "Aborted"

ACTIVITY_STATES = (WAITING, STARTED, COMPLETED, SUSPENDED, ABORTED)

# transition -> {state before: state after}
TRANSITION_TABLE = {
    "Start": {WAITING: STARTED},
    "Complete": {STARTED: COMPLETED},
    "Suspend": {STARTED: SUSPENDED},
    "Resume": {SUSPENDED: STARTED},
    "Abort": {WAITING: ABORTED, STARTED: ABORTED, SUSPENDED: ABORTED},
}

COMPOSITE_KINDS = ("Sequence", "AndSplit", "XOrSplit", "Loop")

# Terminal states count as "done" for block propagation: an aborted activity
# is skipped, the surrounding block proceeds.
_DONE = (COMPLETED, ABORTED)


@dataclass(frozen=True)
class ScriptRef:
    """A condition or consequence script: inline source, or a named reference
    to a script-def document resolved (and inlined) when instances freeze."""

    source: Optional[str] = None
    name: Optional[str] = None
    version: str = "last"

    def to_doc(self):
        if self.source is not None:
            return self.source
        return {"name": self.name, "version": self.version}

    @classmethod
    def from_doc(cls, doc) -> "ScriptRef":
        if isinstance(doc, str):
            return cls(source=doc)
        if isinstance(doc, dict) and isinstance(doc.get("name"), str):
            return cls(name=doc["name"], version=str(doc.get("version", "last")))
        raise InvalidDefinition(message=f"bad script reference: {doc!r}")


@dataclass(frozen=True)
class ActivityDef:
    id: str
    role: str
    schema: Optional[tuple[str, object]] = None  # (schema name, version tag or int)
    on_complete: tuple[ScriptRef, ...] = ()

    def to_doc(self) -> dict:
        doc = {"id": self.id, "kind": "Activity", "role": self.role}
        if self.schema is not None:
            doc["schema"] = {"name": self.schema[0], "version": self.schema[1]}
        if self.on_complete:
            doc["on-complete"] = [s.to_doc() for s in self.on_complete]
        return doc


@dataclass(frozen=True)
class CompositeDef:
    kind: str
    children: tuple = ()
    # XOrSplit: one entry per child, None marks the otherwise branch.
    conditions: tuple[Optional[ScriptRef], ...] = ()
    # Loop: evaluated after each child completion; true re-arms.
    condition: Optional[ScriptRef] = None

    def to_doc(self) -> dict:
        doc = {"children": [c.to_doc() for c in self.children], "kind": self.kind}
        if self.kind == "XOrSplit":
            doc["conditions"] = [c.to_doc() if c else None for c in self.conditions]
        if self.kind == "Loop" and self.condition is not None:
            doc["condition"] = self.condition.to_doc()
        return doc


@dataclass(frozen=True)
class WorkflowDef:
    name: str
    version: int
    body: CompositeDef

    def to_doc(self) -> dict:
        return {
            "$kind": "workflow-def",
            "body": self.body.to_doc(),
            "name": self.name,
            "version": self.version,
        }


def parse_workflow_doc(doc: dict) -> WorkflowDef:
    """Parse a workflow-def document. Structural junk raises InvalidDefinition;
    semantic defects are left for validate_workflow."""
    if not isinstance(doc, dict):
        raise InvalidDefinition(message="workflow-def must be a record")
    name = doc.get("name")
    if not isinstance(name, str) or not name or "/" in name:
        raise InvalidDefinition(message=f"bad workflow name: {name!r}")
    body = doc.get("body")
    node = _parse_node(body)
    if isinstance(node, ActivityDef):
        raise InvalidDefinition(message="workflow body must be a composite block")
    return WorkflowDef(name=name, version=int(doc.get("version", 0)), body=node)


def _parse_node(doc):
    if not isinstance(doc, dict):
        raise InvalidDefinition(message=f"workflow node must be a record: {doc!r}")
    kind = doc.get("kind")
    if kind == "Activity":
        aid = doc.get("id")
        if not isinstance(aid, str) or not aid or "/" in aid:
            raise InvalidDefinition(message=f"bad activity id: {aid!r}")
        schema = None
        sdoc = doc.get("schema")
        if sdoc is not None:
            if not isinstance(sdoc, dict) or not isinstance(sdoc.get("name"), str):
                raise InvalidDefinition(message=f"bad schema reference on {aid!r}")
            schema = (sdoc["name"], sdoc.get("version", "last"))
        on_complete = tuple(ScriptRef.from_doc(s) for s in doc.get("on-complete", []))
        return ActivityDef(
            id=aid, role=str(doc.get("role", "")), schema=schema, on_complete=on_complete
        )
    if kind in COMPOSITE_KINDS:
        children = doc.get("children")
        if not isinstance(children, list):
            raise InvalidDefinition(message=f"{kind} needs a children list")
        nodes = tuple(_parse_node(c) for c in children)
        conditions: tuple = ()
        condition = None
        if kind == "XOrSplit":
            raw = doc.get("conditions")
            if not isinstance(raw, list) or len(raw) != len(nodes):
                raise InvalidDefinition(message="XOrSplit needs one condition per branch")
            conditions = tuple(None if c is None else ScriptRef.from_doc(c) for c in raw)
        if kind == "Loop":
            raw = doc.get("condition")
            condition = None if raw is None else ScriptRef.from_doc(raw)
        return CompositeDef(kind=kind, children=nodes, conditions=conditions, condition=condition)
    raise InvalidDefinition(message=f"unknown workflow node kind: {kind!r}")


# --- Paths ---------------------------------------------------------------


def _segment(node, position: int) -> str:
    if isinstance(node, ActivityDef):
        return node.id
    return f"{node.kind.lower()}{position}"


def _walk_paths(node, prefix: str):
    """Yield (path, node) for every node, definition order, root first."""
    yield prefix, node
    if isinstance(node, CompositeDef):
        for i, child in enumerate(node.children):
            yield from _walk_paths(child, f"{prefix}/{_segment(child, i)}")


def resolve_path(wf: WorkflowDef, path: str):
    """Find the node at ``path``. Raises UnknownActivity."""
    for p, node in _walk_paths(wf.body, wf.name):
        if p == path:
            return node
    raise UnknownActivity(path)


# --- Validation ----------------------------------------------------------


@dataclass(frozen=True)
class GraphReport:
    valid: bool
    defects: tuple[dict, ...]

    def to_doc(self) -> dict:
        return {"defects": list(self.defects), "valid": self.valid}


def validate_workflow(
    wf: WorkflowDef,
    schema_resolver: Optional[Callable[[str, object], object]] = None,
    script_resolver: Optional[Callable[[str, str], str]] = None,
) -> GraphReport:
    """Structural validity check. A valid definition can always be driven from
    creation to completion; the defect list pinpoints everything that breaks
    that guarantee (plus namespace defects like duplicate ids)."""
    defects: list[dict] = []
    seen_ids: set[str] = set()
    flagged_dupes: set[str] = set()

    def defect(code: str, where: str):
        defects.append({"activity-id": where, "code": code})

    def check_script(ref: Optional[ScriptRef], where: str):
        if ref is None:
            return
        if ref.source is not None:
            try:
                scripting.parse_script(ref.source)
            except ParseError:
                defect("InvalidScript", where)
        elif script_resolver is not None:
            try:
                script_resolver(ref.name, ref.version)
            except DdsError:
                defect("UnresolvableScript", where)

    for path, node in _walk_paths(wf.body, wf.name):
        if isinstance(node, ActivityDef):
            if node.id in seen_ids and node.id not in flagged_dupes:
                defect("DuplicateId", node.id)
                flagged_dupes.add(node.id)
            seen_ids.add(node.id)
            if not node.role:
                defect("EmptyRole", node.id)
            for ref in node.on_complete:
                check_script(ref, node.id)
            if node.schema is not None and schema_resolver is not None:
                try:
                    schema_resolver(node.schema[0], node.schema[1])
                except DdsError:
                    defect("UnresolvableSchema", node.id)
            continue
        if node.kind == "Loop":
            if len(node.children) == 0:
                defect("EmptyBlock", path)
            elif len(node.children) != 1:
                defect("LoopArity", path)
            if node.condition is None:
                defect("MissingCondition", path)
            else:
                check_script(node.condition, path)
        else:
            if len(node.children) == 0:
                defect("EmptyBlock", path)
        if node.kind == "XOrSplit":
            if node.children and not any(c is None for c in node.conditions):
                defect("MissingOtherwise", path)
            for i, cond in enumerate(node.conditions):
                check_script(cond, f"{path}[{i}]")

    return GraphReport(valid=not defects, defects=tuple(defects))


# --- Instances -----------------------------------------------------------


@dataclass(frozen=True)
class WorkflowInstance:
    """Execution state of one workflow on one item. Immutable; sparse maps
    (missing state = Waiting, missing iteration = 0)."""

    definition: WorkflowDef
    states: dict = field(default_factory=dict)  # path -> non-Waiting state
    decisions: dict = field(default_factory=dict)  # XOr path -> chosen child index
    iterations: dict = field(default_factory=dict)  # Loop path -> completed re-arms

    def state_at(self, path: str) -> str:
        return self.states.get(path, WAITING)

    def iteration_at(self, path: str) -> int:
        return self.iterations.get(path, 0)

    def to_doc(self) -> dict:
        return {
            "decisions": dict(self.decisions),
            "def": self.definition.to_doc(),
            "iterations": dict(self.iterations),
            "states": dict(self.states),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WorkflowInstance":
        return cls(
            definition=parse_workflow_doc(doc["def"]),
            states=dict(doc.get("states", {})),
            decisions={k: v for k, v in doc.get("decisions", {}).items()},
            iterations={k: v for k, v in doc.get("iterations", {}).items()},
        )


@dataclass(frozen=True)
class EnabledEntry:
    path: str
    kind: str  # "activity" | "xor-decision" | "loop-decision"
    state: str
    allowed: tuple[str, ...]
    activity: Optional[ActivityDef] = None
    node: object = None


@dataclass(frozen=True)
class TransitionDelta:
    path: str
    state_before: str
    state_after: str
    workflow_completed: bool


_ALLOWED_BY_STATE = {
    WAITING: ("Start", "Abort"),
    STARTED: ("Complete", "Suspend", "Abort"),
    SUSPENDED: ("Resume", "Abort"),
}


def instantiate_workflow(wf: WorkflowDef) -> WorkflowInstance:
    """Fresh instance, everything Waiting. Raises InvalidDefinition unless the
    definition validates."""
    report = validate_workflow(wf)
    if not report.valid:
        raise InvalidDefinition(report.defects)
    return WorkflowInstance(definition=wf)


def _node_done(inst: WorkflowInstance, node, path: str) -> bool:
    if isinstance(node, ActivityDef):
        return inst.state_at(path) in _DONE
    if node.kind in ("Sequence", "AndSplit"):
        if not node.children:
            return False
        return all(
            _node_done(inst, c, f"{path}/{_segment(c, i)}")
            for i, c in enumerate(node.children)
        )
    if node.kind == "XOrSplit":
        chosen = inst.decisions.get(path)
        if chosen is None:
            return False
        child = node.children[chosen]
        return _node_done(inst, child, f"{path}/{_segment(child, chosen)}")
    # Loop: done once the exit decision landed
    return inst.state_at(path) == COMPLETED


def _enabled(inst: WorkflowInstance, node, path: str, out: list[EnabledEntry]):
    """Collect enabled entries under an active node, definition order."""
    if isinstance(node, ActivityDef):
        state = inst.state_at(path)
        if state not in _DONE:
            out.append(
                EnabledEntry(
                    path=path,
                    kind="activity",
                    state=state,
                    allowed=_ALLOWED_BY_STATE[state],
                    activity=node,
                    node=node,
                )
            )
        return
    if node.kind == "Sequence":
        for i, child in enumerate(node.children):
            cpath = f"{path}/{_segment(child, i)}"
            if not _node_done(inst, child, cpath):
                _enabled(inst, child, cpath, out)
                return
        return
    if node.kind == "AndSplit":
        for i, child in enumerate(node.children):
            cpath = f"{path}/{_segment(child, i)}"
            if not _node_done(inst, child, cpath):
                _enabled(inst, child, cpath, out)
        return
    if node.kind == "XOrSplit":
        chosen = inst.decisions.get(path)
        if chosen is None:
            out.append(
                EnabledEntry(path=path, kind="xor-decision", state=inst.state_at(path),
                             allowed=("Complete",), node=node)
            )
            return
        child = node.children[chosen]
        cpath = f"{path}/{_segment(child, chosen)}"
        if not _node_done(inst, child, cpath):
            _enabled(inst, child, cpath, out)
        return
    if node.kind == "Loop":
        if inst.state_at(path) == COMPLETED:
            return
        child = node.children[0]
        cpath = f"{path}/{_segment(child, 0)}"
        if not _node_done(inst, child, cpath):
            _enabled(inst, child, cpath, out)
        else:
            out.append(
                EnabledEntry(path=path, kind="loop-decision", state=inst.state_at(path),
                             allowed=("Complete",), node=node)
            )
        return
    raise DdsError(f"unknown composite kind {node.kind!r}")


def enabled_entries(inst: WorkflowInstance) -> list[EnabledEntry]:
    # a done subtree contributes nothing, so no completed-check is needed
    out: list[EnabledEntry] = []
    _enabled(inst, inst.definition.body, inst.definition.name, out)
    return out


def enabled_activities(inst: WorkflowInstance) -> list[str]:
    """Paths that can receive a transition right now, definition order.
    Includes pending decision pseudo-steps. Empty iff the workflow completed
    (valid definitions cannot deadlock)."""
    return [e.path for e in enabled_entries(inst)]


def workflow_completed(inst: WorkflowInstance) -> bool:
    return _node_done(inst, inst.definition.body, inst.definition.name)


def _reset_subtree(states: dict, decisions: dict, child_path: str) -> None:
    prefix = child_path + "/"
    for key in [k for k in states if k == child_path or k.startswith(prefix)]:
        del states[key]
    for key in [k for k in decisions if k == child_path or k.startswith(prefix)]:
        del decisions[key]


def apply_transition(
    inst: WorkflowInstance,
    path: str,
    transition: str,
    branch_decision=None,
) -> tuple[WorkflowInstance, TransitionDelta]:
    """Apply one transition; returns the new instance and the delta.

    Raises UnknownActivity for unresolvable paths and IllegalTransition for
    anything the state machine or block semantics forbid.
    """
    if transition not in TRANSITION_TABLE:
        raise IllegalTransition(f"unknown transition {transition!r}")
    entry = None
    for candidate in enabled_entries(inst):
        if candidate.path == path:
            entry = candidate
            break
    if entry is None:
        resolve_path(inst.definition, path)  # UnknownActivity when it is not a path
        raise IllegalTransition(f"{path} is not enabled")
    node = entry.node

    states = dict(inst.states)
    decisions = dict(inst.decisions)
    iterations = dict(inst.iterations)

    if entry.kind == "activity":
        before = entry.state
        after = TRANSITION_TABLE[transition].get(before)
        if after is None or transition not in entry.allowed:
            raise IllegalTransition(f"{transition} not allowed in state {before} at {path}")
        states[path] = after
    elif entry.kind == "xor-decision":
        if transition != "Complete":
            raise IllegalTransition(f"{transition} not allowed on a split decision")
        if not isinstance(branch_decision, int) or isinstance(branch_decision, bool) or not (
            0 <= branch_decision < len(node.children)
        ):
            raise IllegalTransition(f"split at {path} needs a branch index decision")
        before = WAITING
        after = COMPLETED
        decisions[path] = branch_decision
        states[path] = COMPLETED
    else:  # loop-decision
        if transition != "Complete":
            raise IllegalTransition(f"{transition} not allowed on a loop decision")
        if not isinstance(branch_decision, bool):
            raise IllegalTransition(f"loop at {path} needs a boolean re-arm decision")
        before = WAITING
        if branch_decision:
            child = node.children[0]
            _reset_subtree(states, decisions, f"{path}/{_segment(child, 0)}")
            iterations[path] = iterations.get(path, 0) + 1
            states.pop(path, None)
            after = WAITING
        else:
            states[path] = COMPLETED
            after = COMPLETED

    new_inst = WorkflowInstance(
        definition=inst.definition, states=states, decisions=decisions, iterations=iterations
    )
    return new_inst, TransitionDelta(
        path=path,
        state_before=before,
        state_after=after,
        workflow_completed=workflow_completed(new_inst),
    )


def freeze_definition(
    wf: WorkflowDef,
    schema_resolver: Optional[Callable[[str, object], int]] = None,
    script_resolver: Optional[Callable[[str, str], str]] = None,
) -> WorkflowDef:
    """Resolve schema version tags to concrete integers and inline referenced
    script sources. The result is self-contained: instances replay without
    consulting any registry."""

    def freeze_script(ref: Optional[ScriptRef]) -> Optional[ScriptRef]:
        if ref is None or ref.source is not None:
            return ref
        if script_resolver is None:
            raise InvalidDefinition(message=f"unresolvable script reference {ref.name!r}")
        return ScriptRef(source=script_resolver(ref.name, ref.version))

    def freeze_node(node):
        if isinstance(node, ActivityDef):
            schema = node.schema
            if schema is not None and schema_resolver is not None:
                schema = (schema[0], schema_resolver(schema[0], schema[1]))
            return replace(
                node,
                schema=schema,
                on_complete=tuple(freeze_script(s) for s in node.on_complete),
            )
        return replace(
            node,
            children=tuple(freeze_node(c) for c in node.children),
            conditions=tuple(
                None if c is None else freeze_script(c) for c in node.conditions
            ),
            condition=freeze_script(node.condition),
        )

    return replace(wf, body=freeze_node(wf.body))
