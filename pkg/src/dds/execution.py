"""The only write path: activity execution and predefined steps.

Nothing mutates an item except through ``Engine.execute`` (an agent driving
an activity transition) or ``Engine.run_predefined_step`` (one of the five
hard-coded write operations, normally requested by consequence scripts).
Either way the engine plans the full set of resulting events, folds the plan
onto scratch copies of the affected states to validate it, and only then
appends. A failed call leaves every log and every digest untouched.

Conditional splits and loop re-arms are resolved eagerly: after staging the
triggering event the engine evaluates the pending decision scripts and stages
the decision events in the same batch, so agents only ever see real
activities in their job lists.
"""

from __future__ import annotations

import threading
import uuid as uuidlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from . import schema as schemas
from . import scripting
from . import workflow as wf
from .canonical import digest
from .errors import (
    ConstraintViolation,
    DdsError,
    IllegalTransition,
    ImmutableProperty,
    InvalidDefinition,
    NameTaken,
    NoSuchVersion,
    ParseError,
    SchemaViolation,
    ScriptError,
    StaleJob,
    UnknownAgent,
    UnknownItem,
    UnknownTarget,
)
from .events import Event, EventDraft, EventStore, apply_event
from .model import (
    ItemRef,
    ItemState,
    PredefinedStep,
    RESERVED_PROPERTIES,
    ViewpointEntry,
    check_collection_constraint,
    is_scalar,
)

# Document kinds with code-backed validation. Activities bearing one of these
# as their schema author description documents; completing them pins a new
# integer version viewpoint.
DESCRIPTION_KINDS = (
    "workflow-def",
    "outcome-schema",
    "collection-def",
    "property-defaults",
    "script-def",
)

INSTANTIATE_KIND = "instantiate-request"
MODULE_KIND = "module-manifest"

RESERVED_KINDS = DESCRIPTION_KINDS + (INSTANTIATE_KIND, MODULE_KIND)

CREATE_PATH = "predefined/CreateItemFromDescription"

# The instantiate-request payload is ordinary enough to describe in the
# schema dialect itself.
INSTANTIATE_SCHEMA = schemas.OutcomeSchema(
    name=INSTANTIATE_KIND,
    version=0,
    fields=(
        schemas.FieldSpec(name="name", type="string", required=True),
        schemas.FieldSpec(name="version", type="string", required=True),
        schemas.FieldSpec(
            name="props",
            type="list",
            required=True,
            item=schemas.FieldSpec(
                name="prop",
                type="record",
                fields=(
                    schemas.FieldSpec(name="name", type="string", required=True),
                    schemas.FieldSpec(name="value", type="string", required=True),
                ),
            ),
        ),
    ),
)


@dataclass(frozen=True)
class Job:
    """One unit of offered work: an enabled activity whose role matches the
    agent, with the form to fill when the activity bears a schema."""

    item: ItemRef
    activity_path: str
    allowed_transitions: tuple[str, ...]
    schema: Optional[tuple[str, int]] = None
    form: Optional[schemas.FormModel] = None
    expected_seq: int = -1

    def to_doc(self) -> dict:
        return {
            "activity-path": self.activity_path,
            "allowed-transitions": list(self.allowed_transitions),
            "expected-seq": self.expected_seq,
            "form": None if self.form is None else self.form.to_doc(),
            "item": self.item.to_doc(),
            "schema": None
            if self.schema is None
            else {"name": self.schema[0], "version": self.schema[1]},
        }


@dataclass
class _Plan:
    """Events staged for one commit, already folded onto scratch states.

    Staging runs the exact same fold the store will run, so anything the fold
    would reject fails here, before a single byte is written.
    """

    engine: "Engine"
    states: dict = field(default_factory=dict)  # uuid -> ItemState or None
    staged_by_item: dict = field(default_factory=dict)  # uuid -> {seq: Event}
    batch: list = field(default_factory=list)  # (ItemRef, EventDraft)
    staged: list = field(default_factory=list)  # scratch Events, same order
    claimed_names: list = field(default_factory=list)

    def state_of(self, item: ItemRef) -> Optional[ItemState]:
        if item.uuid not in self.states:
            store = self.engine.store
            self.states[item.uuid] = store.state(item) if store.has_item(item) else None
            self.staged_by_item[item.uuid] = {}
        return self.states[item.uuid]

    def stage(self, item: ItemRef, draft: EventDraft, prefolded=None) -> Event:
        """Stage one event. Without ``prefolded`` the event is folded here with
        the same function the store will use, so anything illegal fails now.
        Planners that just computed the resulting state themselves (plain
        workflow transitions) pass it in and skip the duplicate fold; the
        store's own fold on commit still checks everything it persists."""
        state = self.state_of(item)
        seq = 0 if state is None else state.last_event_seq + 1
        ev = _materialize(item, seq, draft)
        self.states[item.uuid] = prefolded if prefolded is not None else apply_event(state, ev)
        self.staged_by_item[item.uuid][seq] = ev
        self.batch.append((item, draft))
        self.staged.append(ev)
        return ev

    def event_at(self, item: ItemRef, seq: int) -> Event:
        staged = self.staged_by_item.get(item.uuid, {})
        if seq in staged:
            return staged[seq]
        return self.engine.store.events(item, seq, seq)[0]

    def outcome_at(self, item: ItemRef, seq: int):
        return self.event_at(item, seq).outcome


def _materialize(item: ItemRef, seq: int, draft: EventDraft) -> Event:
    outcome_ref = None
    if draft.outcome_schema is not None:
        outcome_ref = (draft.outcome_schema[0], draft.outcome_schema[1], seq)
    return Event(
        item=item,
        seq=seq,
        timestamp=0,  # scratch only; the store stamps the real time
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


def _item_view(state: ItemState) -> dict:
    return {
        "name": state.ref.name,
        "props": {p.name: p.value for p in state.properties},
        "type": state.property_value("Type"),
    }


def _next_version(state: ItemState, schema_name: str) -> int:
    versions = [
        int(v.view_name)
        for v in state.viewpoints
        if v.schema_name == schema_name and v.view_name != "last"
    ]
    return max(versions, default=-1) + 1


def _pinned_version(ev: Event, kind: str) -> Optional[int]:
    for v in ev.viewpoint_updates:
        if v.schema_name == kind and v.view_name != "last":
            return int(v.view_name)
    return None


def _iteration_for(inst: wf.WorkflowInstance, path: str) -> int:
    """Counter of the innermost loop enclosing ``path`` (or the loop itself)."""
    matches = [
        (len(p), c)
        for p, c in inst.iterations.items()
        if path == p or path.startswith(p + "/")
    ]
    return max(matches)[1] if matches else 0


class Engine:
    """Serializes writes per item and turns agent actions into events."""

    def __init__(
        self,
        store: EventStore,
        id_factory: Optional[Callable[[], str]] = None,
    ):
        self.store = store
        self._id_factory = id_factory or (lambda: uuidlib.uuid4().hex)
        self._item_locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self._pending_names: set[str] = set()
        self.import_lock = threading.Lock()  # one module import at a time

    # -- public surface ----------------------------------------------------

    def jobs_for_agent(self, agent: ItemRef) -> list[Job]:
        """Every (item, enabled activity) whose role matches the agent's Role,
        ordered by item name then definition order."""
        role = self._agent_role(agent)
        jobs: list[Job] = []
        for ref in self.store.items():
            state = self.store.state(ref)
            for entry in wf.enabled_entries(state.workflow):
                if entry.kind != "activity" or entry.activity.role != role:
                    continue
                job_schema = None
                form = None
                if entry.activity.schema is not None:
                    name, version = entry.activity.schema
                    resolved = self._resolved_schema(name, version)
                    job_schema = (name, resolved.version)
                    form = schemas.form_model(resolved)
                jobs.append(
                    Job(
                        item=ref,
                        activity_path=entry.path,
                        allowed_transitions=entry.allowed,
                        schema=job_schema,
                        form=form,
                        expected_seq=state.last_event_seq,
                    )
                )
        return jobs

    def execute(
        self,
        agent: ItemRef,
        item: ItemRef,
        activity_path: str,
        transition: str,
        outcome=None,
        branch_decision=None,
        expected_seq: Optional[int] = None,
    ) -> Event:
        """Drive one activity transition. Atomic: either every resulting event
        (outcome storage, consequence steps, decision resolutions) lands, or
        nothing does. Returns the activity's own event."""
        self._check_agent(agent)
        with self._item_lock(item):
            if not self.store.has_item(item):
                raise UnknownItem(item.name)
            state = self.store.state(item)
            if expected_seq is not None and expected_seq != state.last_event_seq:
                raise StaleJob(
                    f"{item.name} is at seq {state.last_event_seq}, expected {expected_seq}"
                )
            plan = _Plan(engine=self)
            try:
                self._plan_transition(
                    plan, agent, item, activity_path, transition, outcome, branch_decision
                )
                committed = self._commit(plan)
            finally:
                self._release_names(plan)
        return committed[0]

    def run_predefined_step(self, agent: ItemRef, item: ItemRef, step: PredefinedStep) -> Event:
        """Apply one hard-coded write operation outside an activity, recording
        it as an event of its own."""
        self._check_agent(agent)
        with self._item_lock(item):
            if not self.store.has_item(item):
                raise UnknownItem(item.name)
            plan = _Plan(engine=self)
            try:
                self._plan_step(plan, agent, item, step)
                committed = self._commit(plan)
            finally:
                self._release_names(plan)
        return committed[0]

    # -- agents -------------------------------------------------------------

    def _check_agent(self, agent: ItemRef) -> None:
        if not self.store.has_item(agent):
            raise UnknownAgent(agent.name)
        if self.store.state(agent).property_value("Type") != "Agent":
            raise UnknownAgent(f"{agent.name} is not an Agent item")

    def _agent_role(self, agent: ItemRef) -> str:
        self._check_agent(agent)
        role = self.store.state(agent).property_value("Role")
        if not isinstance(role, str) or not role:
            raise UnknownAgent(f"{agent.name} has no Role")
        return role

    # -- planning -----------------------------------------------------------

    def _plan_transition(
        self, plan: _Plan, agent: ItemRef, item: ItemRef, activity_path: str,
        transition: str, outcome, branch_decision,
    ) -> None:
        state = plan.state_of(item)
        node = wf.resolve_path(state.workflow.definition, activity_path)
        if not isinstance(node, wf.ActivityDef):
            raise IllegalTransition(f"{activity_path} is not an agent activity")

        outcome_schema = None
        viewpoints: tuple[tuple[str, str], ...] = ()
        stored_outcome = None
        if transition == "Complete" and node.schema is not None:
            name, version = node.schema
            resolved = self._resolved_schema(name, version)
            if outcome is None:
                raise SchemaViolation([schemas.violation("MissingRequired", "")])
            violations = self._validate_doc(name, resolved, outcome, item)
            if violations:
                raise SchemaViolation(violations)
            stored_outcome = outcome
            outcome_schema = (name, resolved.version)
            viewpoints = ((name, "last"),)
            if name in DESCRIPTION_KINDS:
                viewpoints += ((name, str(_next_version(state, name))),)

        new_wf, delta = wf.apply_transition(state.workflow, activity_path, transition,
                                            branch_decision)
        draft = EventDraft(
            agent=agent,
            activity_path=activity_path,
            transition=transition,
            state_before=delta.state_before,
            state_after=delta.state_after,
            outcome=stored_outcome,
            outcome_schema=outcome_schema,
            viewpoint_updates=viewpoints,
        )
        if viewpoints:
            plan.stage(item, draft)  # viewpoint rules are the fold's business
        else:
            plan.stage(item, draft, prefolded=state.evolve(
                workflow=new_wf, last_event_seq=state.last_event_seq + 1))

        if transition == "Complete":
            for ref in node.on_complete:
                for step in self._run_script(ref, activity_path, plan, item, stored_outcome):
                    self._plan_step(plan, agent, item, step)
        self._resolve_decisions(plan, agent, item, outcome=stored_outcome)

    def _script_source(self, ref: wf.ScriptRef, path: str) -> str:
        if ref.source is not None:
            return ref.source
        try:
            doc, _ = self.store.resolve_script(ref.name, ref.version)
        except DdsError as exc:
            raise ScriptError(f"{path}: {exc}") from exc
        return doc["source"]

    def _run_script(
        self, ref: wf.ScriptRef, path: str, plan: _Plan, item: ItemRef, outcome
    ) -> list[PredefinedStep]:
        source = self._script_source(ref, path)
        state = plan.state_of(item)
        ctx = scripting.EvalContext(
            outcome={} if outcome is None else outcome,
            item=_item_view(state),
            iteration=_iteration_for(state.workflow, path),
        )
        try:
            ast = scripting.parse_script(source)
            return scripting.eval_consequence(ast, ctx)
        except (ParseError, DdsError) as exc:
            raise ScriptError(f"{path}: {exc}") from exc

    def _resolve_decisions(self, plan: _Plan, agent: ItemRef, item: ItemRef, outcome) -> None:
        """Stage decision events until no XOr or Loop pseudo-step is pending."""
        seen = 0
        while True:
            seen += 1
            if seen > 10_000:
                raise ScriptError(f"{item.name}: decision resolution does not settle")
            state = plan.state_of(item)
            pending = [e for e in wf.enabled_entries(state.workflow) if e.kind != "activity"]
            if not pending:
                return
            entry = pending[0]
            ctx = scripting.EvalContext(
                outcome={} if outcome is None else outcome,
                item=_item_view(state),
                iteration=_iteration_for(state.workflow, entry.path),
            )
            if entry.kind == "xor-decision":
                decision = self._choose_branch(entry, ctx)
            else:
                decision = self._eval_condition(entry.node.condition, entry.path, ctx)
            new_wf, delta = wf.apply_transition(state.workflow, entry.path, "Complete", decision)
            plan.stage(
                item,
                EventDraft(
                    agent=agent,
                    activity_path=entry.path,
                    transition="Complete",
                    state_before=delta.state_before,
                    state_after=delta.state_after,
                    branch=decision,
                ),
                prefolded=state.evolve(workflow=new_wf,
                                        last_event_seq=state.last_event_seq + 1),
            )

    def _choose_branch(self, entry: wf.EnabledEntry, ctx: scripting.EvalContext) -> int:
        otherwise = None
        for i, cond in enumerate(entry.node.conditions):
            if cond is None:
                if otherwise is None:
                    otherwise = i
                continue
            if self._eval_condition(cond, f"{entry.path}[{i}]", ctx):
                return i
        if otherwise is None:
            raise ScriptError(f"{entry.path}: no branch condition held and no otherwise branch")
        return otherwise

    def _eval_condition(self, ref: wf.ScriptRef, path: str, ctx: scripting.EvalContext) -> bool:
        source = self._script_source(ref, path)
        try:
            return scripting.eval_condition(scripting.parse_script(source), ctx)
        except (ParseError, DdsError) as exc:
            raise ScriptError(f"{path}: {exc}") from exc

    # -- predefined steps -----------------------------------------------------

    def _plan_step(self, plan: _Plan, agent: ItemRef, item: ItemRef, step: PredefinedStep) -> None:
        state = plan.state_of(item)
        if state is None:
            raise UnknownItem(item.name)
        planner = {
            "WriteProperty": self._plan_write_property,
            "AddMemberToCollection": self._plan_add_member,
            "RemoveMemberFromCollection": self._plan_remove_member,
            "CreateItemFromDescription": self._plan_create,
            "ImportModule": self._plan_import,
        }[step.kind]
        planner(plan, agent, item, state, dict(step.args))

    def _plan_write_property(self, plan, agent, item, state: ItemState, args) -> None:
        name, value = args.get("name"), args.get("value")
        if not isinstance(name, str) or not name:
            raise ConstraintViolation("BadArgument", "WriteProperty needs a property name")
        if not is_scalar(value):
            raise ConstraintViolation("BadArgument", "property values are scalars")
        if name in RESERVED_PROPERTIES:
            raise ImmutableProperty(name)
        existing = state.property(name)
        if existing is not None and not existing.mutable:
            raise ImmutableProperty(name)
        plan.stage(
            item,
            EventDraft(
                agent=agent,
                activity_path="predefined/WriteProperty",
                transition="Step",
                predefined_step=PredefinedStep("WriteProperty", {"name": name, "value": value}),
            ),
        )

    def _member_properties(self, raw) -> list[dict]:
        props = []
        for entry in raw or []:
            if (
                not isinstance(entry, dict)
                or not isinstance(entry.get("name"), str)
                or not is_scalar(entry.get("value"))
            ):
                raise ConstraintViolation("BadArgument", f"bad property entry: {entry!r}")
            props.append(
                {"mutable": bool(entry.get("mutable", True)), "name": entry["name"],
                 "value": entry["value"]}
            )
        return props

    def _plan_add_member(self, plan, agent, item, state: ItemState, args) -> None:
        coll = state.collection(args.get("collection"))
        if coll is None:
            raise UnknownTarget(f"no collection {args.get('collection')!r} on {item.name}")
        target = self._resolve_target(plan, args.get("target"))
        member_type = plan.state_of(target).property_value("Type")
        slot = args.get("slot")
        verdict = check_collection_constraint(coll.definition, coll, slot, member_type)
        if verdict != "ok":
            raise ConstraintViolation(verdict, f"{coll.name}[{slot}] <- {target.name}")
        if coll.definition.kind == "Dependency":
            slot = max((m.slot for m in coll.members), default=-1) + 1
        plan.stage(
            item,
            EventDraft(
                agent=agent,
                activity_path="predefined/AddMemberToCollection",
                transition="Step",
                predefined_step=PredefinedStep(
                    "AddMemberToCollection",
                    {
                        "collection": coll.name,
                        "member-properties": self._member_properties(args.get("member-properties")),
                        "slot": slot,
                        "target": target.to_doc(),
                    },
                ),
            ),
        )

    def _plan_remove_member(self, plan, agent, item, state: ItemState, args) -> None:
        coll = state.collection(args.get("collection"))
        if coll is None:
            raise UnknownTarget(f"no collection {args.get('collection')!r} on {item.name}")
        slot = args.get("slot")
        if coll.member_at(slot) is None:
            raise UnknownTarget(f"no member at slot {slot!r} in {coll.name}")
        plan.stage(
            item,
            EventDraft(
                agent=agent,
                activity_path="predefined/RemoveMemberFromCollection",
                transition="Step",
                predefined_step=PredefinedStep(
                    "RemoveMemberFromCollection", {"collection": coll.name, "slot": slot}
                ),
            ),
        )

    def _resolve_target(self, plan: _Plan, spec) -> ItemRef:
        """Item lookup that also sees items staged earlier in this plan."""
        if isinstance(spec, dict) and "uuid" in spec:
            ref = ItemRef.from_doc(spec)
        elif isinstance(spec, str):
            try:
                ref = self.store.ref(spec)
            except UnknownItem:
                staged = [
                    s.ref for s in plan.states.values() if s is not None and s.ref.name == spec
                ]
                if not staged:
                    raise UnknownTarget(spec)
                ref = staged[0]
        else:
            raise UnknownTarget(repr(spec))
        if plan.state_of(ref) is None:
            raise UnknownTarget(ref.name)
        return ref

    # -- instantiation ----------------------------------------------------------

    def _plan_create(self, plan, agent, item, state: ItemState, args) -> None:
        desc_spec = args.get("description")
        if (isinstance(desc_spec, str) and desc_spec == item.name) or (
            isinstance(desc_spec, dict) and desc_spec.get("uuid") == item.uuid
        ):
            desc, desc_state = item, state
        else:
            desc = self._resolve_target(plan, desc_spec)
            desc_state = plan.state_of(desc)
        version = args.get("version", "last")
        if not isinstance(version, str):
            raise NoSuchVersion(str(version))
        new_name = args.get("name")
        if not isinstance(new_name, str) or not new_name or "/" in new_name:
            raise ConstraintViolation("BadArgument", f"bad item name {new_name!r}")
        self._claim_name(plan, new_name)

        wf_doc, wf_version = self._template(plan, desc, desc_state, "workflow-def", version, True)
        defaults_doc, _ = self._template(plan, desc, desc_state, "property-defaults", version, True)
        colls_doc, _ = self._template(plan, desc, desc_state, "collection-def", version, False)

        definition = wf.freeze_definition(
            wf.parse_workflow_doc(wf_doc),
            schema_resolver=self._freeze_schema_resolver,
            script_resolver=self._freeze_script_resolver,
        )
        definition = wf.WorkflowDef(name=definition.name, version=wf_version, body=definition.body)
        report = wf.validate_workflow(definition)
        if not report.valid:
            raise InvalidDefinition(report.defects)

        item_type = defaults_doc["type"]
        props: dict[str, dict] = {
            "Name": {"mutable": False, "name": "Name", "value": new_name},
            "Type": {"mutable": False, "name": "Type", "value": item_type},
        }
        for p in defaults_doc.get("properties", []):
            props[p["name"]] = {
                "mutable": bool(p.get("mutable", True)),
                "name": p["name"],
                "value": p["value"],
            }
        for p in self._member_properties(args.get("properties")):
            if p["name"] in RESERVED_PROPERTIES:
                raise ImmutableProperty(p["name"])
            props[p["name"]] = p

        collections = [] if colls_doc is None else list(colls_doc.get("collections", []))
        new_ref = ItemRef(uuid=self._id_factory(), name=new_name)

        plan.stage(
            item,
            EventDraft(
                agent=agent,
                activity_path=CREATE_PATH,
                transition="Step",
                predefined_step=PredefinedStep(
                    "CreateItemFromDescription",
                    {
                        "created": new_ref.to_doc(),
                        "description": desc.to_doc(),
                        "name": new_name,
                        "properties": args.get("properties") or [],
                        "version": version,
                    },
                ),
            ),
        )
        plan.stage(
            new_ref,
            EventDraft(
                agent=agent,
                activity_path=CREATE_PATH,
                transition="Create",
                predefined_step=PredefinedStep(
                    "CreateItemFromDescription",
                    {
                        "collections": collections,
                        "description": desc.to_doc(),
                        "name": new_name,
                        "properties": sorted(props.values(), key=lambda p: p["name"]),
                        "type": item_type,
                        "version": version,
                        "workflow": definition.to_doc(),
                    },
                ),
            ),
        )
        # a freshly created workflow may open on a split: settle it now
        self._resolve_decisions(plan, agent, new_ref, outcome=None)

    def _template(
        self, plan: _Plan, desc: ItemRef, desc_state: ItemState, kind: str, version: str,
        required: bool,
    ):
        """Resolve one template document of ``kind`` at a version tag. Integer
        tags missing for a kind fall back to that kind's "last" (document
        kinds are versioned independently)."""
        entry = desc_state.viewpoint(kind, version)
        if entry is None and version != "last" and kind != "workflow-def":
            entry = desc_state.viewpoint(kind, "last")
        if entry is None:
            if required:
                raise NoSuchVersion(f"{desc.name}:{kind}@{version}")
            return None, None
        ev = plan.event_at(desc, entry.seq)
        return ev.outcome, _pinned_version(ev, kind)

    def _freeze_schema_resolver(self, name: str, tag) -> int:
        if name in RESERVED_KINDS:
            return 0
        _, version = self.store.resolve_schema(name, tag)
        return version

    def _freeze_script_resolver(self, name: str, tag) -> str:
        doc, _ = self.store.resolve_script(name, tag)
        return doc["source"]

    def _resolved_schema(self, name: str, version) -> schemas.OutcomeSchema:
        if name == INSTANTIATE_KIND:
            return INSTANTIATE_SCHEMA
        if name in RESERVED_KINDS:
            # code-backed meta validation; the schema object is a stub
            return schemas.OutcomeSchema(name=name, version=0, fields=())
        doc, resolved = self.store.resolve_schema(name, version)
        return schemas.parse_schema_doc(doc, assigned_version=resolved)

    def _validate_doc(
        self, kind: str, resolved: schemas.OutcomeSchema, outcome, item: ItemRef
    ) -> list[dict]:
        """Validate an outcome document; reserved kinds get their code-backed
        meta checks, everything else the dialect validator."""
        if kind == "workflow-def":
            report = wf.validate_workflow(wf.parse_workflow_doc(outcome))
            if not report.valid:
                raise InvalidDefinition(report.defects)
            return []
        if kind == "outcome-schema":
            parsed = schemas.parse_schema_doc(outcome)
            if parsed.name in RESERVED_KINDS:
                return [schemas.violation("ReservedName", "name")]
            owner = self.store.schema_owner(parsed.name)
            if owner is not None and owner != item.uuid:
                return [schemas.violation("NameOwned", "name")]
            return []
        if kind == "collection-def":
            return _check_collection_def_doc(outcome)
        if kind == "property-defaults":
            return _check_property_defaults_doc(outcome)
        if kind == "script-def":
            try:
                parsed_script = scripting.parse_script_doc(outcome)
            except ParseError:
                return [schemas.violation("ParseError", "source")]
            owner = self.store.script_owner(parsed_script.name)
            if owner is not None and owner != item.uuid:
                return [schemas.violation("NameOwned", "name")]
            return []
        if kind == MODULE_KIND:
            if not isinstance(outcome, dict) or "manifest" not in outcome:
                return [schemas.violation("TypeViolation", "")]
            return []
        return schemas.validate_outcome(resolved, outcome)

    # -- module import step -----------------------------------------------------

    def _plan_import(self, plan, agent, item, state: ItemState, args) -> None:
        bundle = args.get("bundle")
        if bundle is None:
            # script-built form: (module, version) referencing a known import
            registry = self.store.module_registry()
            entry = registry.get(args.get("module"), {}).get("versions", {}).get(
                args.get("version")
            )
            if entry is None:
                raise UnknownTarget(f"module {args.get('module')}@{args.get('version')}")
            plan.stage(
                item,
                EventDraft(
                    agent=agent,
                    activity_path="predefined/ImportModule",
                    transition="Step",
                    predefined_step=PredefinedStep("ImportModule", dict(args)),
                ),
            )
            return
        manifest = bundle["manifest"]
        plan.stage(
            item,
            EventDraft(
                agent=agent,
                activity_path="predefined/ImportModule",
                transition="Step",
                outcome=bundle,
                outcome_schema=(MODULE_KIND, 0),
                predefined_step=PredefinedStep(
                    "ImportModule",
                    {
                        "bundle-hash": digest(bundle),
                        "module": manifest["name"],
                        "version": manifest["version"],
                    },
                ),
                viewpoint_updates=(
                    (MODULE_KIND, "last"),
                    (MODULE_KIND, str(_next_version(state, MODULE_KIND))),
                ),
            ),
        )

    # -- commit -------------------------------------------------------------------

    def _commit(self, plan: _Plan) -> list[Event]:
        return self.store._append_batch(plan.batch)

    # -- names and locks ------------------------------------------------------------

    def _claim_name(self, plan: _Plan, name: str) -> None:
        with self._guard:
            if self.store.has_name(name) or name in self._pending_names:
                raise NameTaken(name)
            self._pending_names.add(name)
            plan.claimed_names.append(name)

    def _release_names(self, plan: _Plan) -> None:
        with self._guard:
            for name in plan.claimed_names:
                self._pending_names.discard(name)

    def _item_lock(self, item: ItemRef) -> threading.Lock:
        with self._guard:
            lock = self._item_locks.get(item.uuid)
            if lock is None:
                lock = threading.Lock()
                self._item_locks[item.uuid] = lock
            return lock


def _check_collection_def_doc(doc) -> list[dict]:
    from .model import CollectionDef

    if not isinstance(doc, dict) or not isinstance(doc.get("collections"), list):
        return [schemas.violation("TypeViolation", "")]
    problems = []
    seen = set()
    for i, cdoc in enumerate(doc["collections"]):
        try:
            cdef = CollectionDef.from_doc(cdoc)
        except (DdsError, KeyError, TypeError):
            problems.append(schemas.violation("TypeViolation", f"collections[{i}]"))
            continue
        if cdef.name in seen:
            problems.append(schemas.violation("DuplicateField", f"collections[{i}]"))
        seen.add(cdef.name)
    return problems


def _check_property_defaults_doc(doc) -> list[dict]:
    if not isinstance(doc, dict):
        return [schemas.violation("TypeViolation", "")]
    problems = []
    if not isinstance(doc.get("type"), str) or not doc.get("type"):
        problems.append(schemas.violation("MissingRequired", "type"))
    props = doc.get("properties", [])
    if not isinstance(props, list):
        problems.append(schemas.violation("TypeViolation", "properties"))
        return problems
    for i, p in enumerate(props):
        if not isinstance(p, dict) or not isinstance(p.get("name"), str) or not is_scalar(p.get("value")):
            problems.append(schemas.violation("TypeViolation", f"properties[{i}]"))
            continue
        if p["name"] in RESERVED_PROPERTIES:
            problems.append(schemas.violation("ReservedProperty", f"properties[{i}]"))
    return problems
