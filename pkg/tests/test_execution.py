"""Execution engine: the sole write path and its guarantees."""

import threading

import pytest

from dds import descriptions as desc
from dds.errors import (
    ConstraintViolation,
    IllegalTransition,
    ImmutableProperty,
    SchemaViolation,
    StaleJob,
    UnknownAgent,
    UnknownTarget,
)
from dds.events import store_digest
from dds.model import PredefinedStep, state_digest

from helpers import (
    PLUG_TEST_SCHEMA,
    PLUG_WORKFLOW_V0,
    booted_engine,
)


@pytest.fixture
def rig():
    engine, refs = booted_engine()
    system = refs.system_agent
    tester = desc.create_agent(engine, system, "alice", "tester")
    assembler = desc.create_agent(engine, system, "bob", "assembler")
    plug_type = desc.instantiate(engine, system, refs.item_description, "last",
                                 "NewcarSparkPlugType")
    desc.add_description_version(engine, system, plug_type, "outcome-schema", PLUG_TEST_SCHEMA)
    desc.add_description_version(engine, system, plug_type, "workflow-def", PLUG_WORKFLOW_V0)
    desc.add_description_version(engine, system, plug_type, "property-defaults",
                                 {"properties": [], "type": "Newcar spark plug"})
    plug = desc.instantiate(engine, system, plug_type, "0", "#123")
    return {
        "engine": engine, "refs": refs, "system": system, "tester": tester,
        "assembler": assembler, "plug_type": plug_type, "plug": plug,
    }


class TestJobs:
    def test_fresh_item_offers_exactly_one_tester_job(self, rig):
        jobs = [j for j in rig["engine"].jobs_for_agent(rig["tester"]) if j.item.name == "#123"]
        assert len(jobs) == 1
        assert jobs[0].activity_path == "plug-life/test"
        assert jobs[0].schema == ("PlugTest", 0)
        assert jobs[0].form is not None
        assert [w.input_kind for w in jobs[0].form.widgets] == ["checkbox", "number"]

    def test_role_filter_hides_other_roles(self, rig):
        jobs = [j for j in rig["engine"].jobs_for_agent(rig["assembler"]) if j.item.name == "#123"]
        assert jobs == []

    def test_mount_job_appears_after_test_completes(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.execute(rig["tester"], plug, "plug-life/test", "Start")
        engine.execute(rig["tester"], plug, "plug-life/test", "Complete",
                       outcome={"pass": True, "resistance_ohm": 4.7})
        jobs = [j for j in engine.jobs_for_agent(rig["assembler"]) if j.item.name == "#123"]
        assert [j.activity_path for j in jobs] == ["plug-life/mount"]

    def test_unknown_agent(self, rig):
        from dds.model import ItemRef

        with pytest.raises(UnknownAgent):
            rig["engine"].jobs_for_agent(ItemRef(uuid="nope", name="ghost"))

    def test_non_agent_item_cannot_act(self, rig):
        with pytest.raises(UnknownAgent):
            rig["engine"].jobs_for_agent(rig["plug"])


class TestExecute:
    def test_nominal_complete_appends_event_with_outcome_ref(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.execute(rig["tester"], plug, "plug-life/test", "Start")
        before = engine.store.last_seq(plug)
        ev = engine.execute(rig["tester"], plug, "plug-life/test", "Complete",
                            outcome={"pass": True, "resistance_ohm": 4.7})
        assert ev.seq == before + 1
        assert ev.outcome_ref == ("PlugTest", 0, ev.seq)
        assert ev.state_after == "Completed"

    def test_schema_violation_is_atomic(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.execute(rig["tester"], plug, "plug-life/test", "Start")
        log_len = engine.store.last_seq(plug)
        digest_before = state_digest(engine.store.state(plug))
        with pytest.raises(SchemaViolation) as err:
            engine.execute(rig["tester"], plug, "plug-life/test", "Complete",
                           outcome={"pass": "yes", "resistance_ohm": 4.7})
        assert err.value.violations == [{"code": "TypeViolation", "path": "pass"}]
        assert engine.store.last_seq(plug) == log_len
        assert state_digest(engine.store.state(plug)) == digest_before

    def test_missing_outcome_on_schema_activity(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.execute(rig["tester"], plug, "plug-life/test", "Start")
        with pytest.raises(SchemaViolation):
            engine.execute(rig["tester"], plug, "plug-life/test", "Complete")

    def test_consequence_steps_append_child_events(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.execute(rig["tester"], plug, "plug-life/test", "Start")
        ev = engine.execute(rig["tester"], plug, "plug-life/test", "Complete",
                            outcome={"pass": True, "resistance_ohm": 4.7})
        follow = engine.store.events(plug, ev.seq + 1, ev.seq + 1)[0]
        assert follow.predefined_step.kind == "WriteProperty"
        assert engine.store.state(plug).property_value("Tested") == "yes"
        assert [r.name for r in engine.store.query_by_property("Tested", "yes")] == ["#123"]
        # replay sees the same state
        assert state_digest(engine.store.replay(plug)) == state_digest(engine.store.state(plug))

    def test_failing_branch_keeps_property_unset(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.execute(rig["tester"], plug, "plug-life/test", "Start")
        engine.execute(rig["tester"], plug, "plug-life/test", "Complete",
                       outcome={"pass": False, "resistance_ohm": 9.9})
        assert engine.store.state(plug).property_value("Tested") is None

    def test_illegal_transition(self, rig):
        with pytest.raises(IllegalTransition):
            rig["engine"].execute(rig["tester"], rig["plug"], "plug-life/test", "Complete",
                                  outcome={"pass": True, "resistance_ohm": 1.0})

    def test_stale_expected_seq(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        current = engine.store.last_seq(plug)
        engine.execute(rig["tester"], plug, "plug-life/test", "Start", expected_seq=current)
        with pytest.raises(StaleJob):
            engine.execute(rig["tester"], plug, "plug-life/test", "Complete",
                           outcome={"pass": True, "resistance_ohm": 1.0},
                           expected_seq=current)

    def test_concurrent_conflict_exactly_one_winner(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        expected = engine.store.last_seq(plug)
        results = []
        barrier = threading.Barrier(2)

        def contender():
            barrier.wait()
            try:
                engine.execute(rig["tester"], plug, "plug-life/test", "Start",
                               expected_seq=expected)
                results.append("won")
            except StaleJob:
                results.append("stale")

        threads = [threading.Thread(target=contender) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == ["stale", "won"]


class TestPredefinedSteps:
    def test_write_property_and_query(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        ev = engine.run_predefined_step(
            rig["system"], plug, PredefinedStep("WriteProperty",
                                                {"name": "Location", "value": "CERN"})
        )
        assert ev.predefined_step.args == {"name": "Location", "value": "CERN"}
        assert [r.name for r in engine.store.query_by_property("Location", "CERN")] == ["#123"]

    def test_name_and_type_are_immutable(self, rig):
        for prop in ("Name", "Type"):
            with pytest.raises(ImmutableProperty):
                rig["engine"].run_predefined_step(
                    rig["system"], rig["plug"],
                    PredefinedStep("WriteProperty", {"name": prop, "value": "X"}),
                )

    def test_add_member_constraint_then_occupied(self, rig):
        engine, system, refs = rig["engine"], rig["system"], rig["refs"]
        engine_type = desc.instantiate(engine, system, refs.item_description, "last", "EngineType")
        desc.add_description_version(engine, system, engine_type, "workflow-def", {
            "name": "engine-life",
            "body": {"kind": "Sequence",
                     "children": [{"kind": "Activity", "id": "assemble", "role": "assembler"}]},
        })
        desc.add_description_version(engine, system, engine_type, "property-defaults",
                                     {"properties": [], "type": "Engine"})
        desc.add_description_version(engine, system, engine_type, "collection-def", {
            "collections": [
                {"name": "plugs", "kind": "Aggregation",
                 "slots": [{"slot-id": 0, "type-constraint": "Newcar spark plug"}]},
            ]
        })
        engine_item = desc.instantiate(engine, system, engine_type, "0", "engine-1")
        add = PredefinedStep("AddMemberToCollection",
                             {"collection": "plugs", "target": "#123", "slot": 0})
        engine.run_predefined_step(rig["system"], engine_item, add)
        members = engine.store.state(engine_item).collection("plugs").members
        assert [m.target.name for m in members] == ["#123"]
        with pytest.raises(ConstraintViolation) as err:
            engine.run_predefined_step(rig["system"], engine_item, add)
        assert err.value.reason == "SlotOccupied"

    def test_add_member_type_mismatch(self, rig):
        engine, system, refs = rig["engine"], rig["system"], rig["refs"]
        engine_type = desc.instantiate(engine, system, refs.item_description, "last", "EngineType2")
        desc.add_description_version(engine, system, engine_type, "workflow-def", {
            "name": "engine-life",
            "body": {"kind": "Sequence",
                     "children": [{"kind": "Activity", "id": "assemble", "role": "assembler"}]},
        })
        desc.add_description_version(engine, system, engine_type, "property-defaults",
                                     {"properties": [], "type": "Engine"})
        desc.add_description_version(engine, system, engine_type, "collection-def", {
            "collections": [
                {"name": "plugs", "kind": "Aggregation",
                 "slots": [{"slot-id": 0, "type-constraint": "Newcar spark plug"}]},
            ]
        })
        engine_item = desc.instantiate(engine, system, engine_type, "0", "engine-2")
        with pytest.raises(ConstraintViolation) as err:
            engine.run_predefined_step(
                rig["system"], engine_item,
                PredefinedStep("AddMemberToCollection",
                               {"collection": "plugs", "target": "alice", "slot": 0}),
            )
        assert err.value.reason == "TypeMismatch"

    def test_remove_member(self, rig):
        engine, system, refs = rig["engine"], rig["system"], rig["refs"]
        holder_type = desc.instantiate(engine, system, refs.item_description, "last", "BoxType")
        desc.add_description_version(engine, system, holder_type, "workflow-def", {
            "name": "box-life",
            "body": {"kind": "Sequence",
                     "children": [{"kind": "Activity", "id": "fill", "role": "op"}]},
        })
        desc.add_description_version(engine, system, holder_type, "property-defaults",
                                     {"properties": [], "type": "Box"})
        desc.add_description_version(engine, system, holder_type, "collection-def", {
            "collections": [{"name": "contents", "kind": "Dependency"}]
        })
        box = desc.instantiate(engine, system, holder_type, "0", "box-1")
        engine.run_predefined_step(
            rig["system"], box,
            PredefinedStep("AddMemberToCollection", {"collection": "contents", "target": "#123"}),
        )
        members = engine.store.state(box).collection("contents").members
        assert [m.slot for m in members] == [0]
        engine.run_predefined_step(
            rig["system"], box,
            PredefinedStep("RemoveMemberFromCollection", {"collection": "contents", "slot": 0}),
        )
        assert engine.store.state(box).collection("contents").members == ()
        with pytest.raises(UnknownTarget):
            engine.run_predefined_step(
                rig["system"], box,
                PredefinedStep("RemoveMemberFromCollection",
                               {"collection": "contents", "slot": 0}),
            )

    def test_unknown_collection_target(self, rig):
        with pytest.raises(UnknownTarget):
            rig["engine"].run_predefined_step(
                rig["system"], rig["plug"],
                PredefinedStep("AddMemberToCollection", {"collection": "nope", "target": "alice"}),
            )

    def test_steps_replay_to_identical_state(self, rig):
        engine, plug = rig["engine"], rig["plug"]
        engine.run_predefined_step(
            rig["system"], plug,
            PredefinedStep("WriteProperty", {"name": "Location", "value": "CERN"}),
        )
        assert state_digest(engine.store.replay(plug)) == state_digest(engine.store.state(plug))


class TestWriteControl:
    def test_engine_public_surface_is_three_operations(self, rig):
        public = [n for n in dir(rig["engine"]) if not n.startswith("_")]
        assert sorted(public) == ["execute", "import_lock", "jobs_for_agent",
                                  "run_predefined_step", "store"]

    def test_store_public_surface(self, rig):
        from dds.events import EventStore

        public = [n for n in dir(EventStore) if not n.startswith("_")]
        writers = [n for n in public if n in ("append_event",)]
        readers = sorted(set(public) - set(writers))
        assert writers == ["append_event"]
        assert readers == [
            "close", "events", "has_item", "has_name", "items", "last_seq",
            "module_registry", "query_by_property", "ref", "replay",
            "resolve_schema", "resolve_script", "resolve_viewpoint",
            "schema_owner", "script_owner", "snapshot", "state",
        ]

    def test_digest_changes_iff_log_grows(self, rig):
        engine, plug, tester = rig["engine"], rig["plug"], rig["tester"]
        store = engine.store

        def observe():
            return (
                sum(store.last_seq(r) + 1 for r in store.items()),
                store_digest(store),
            )

        actions = [
            lambda: engine.execute(tester, plug, "plug-life/test", "Start"),
            lambda: engine.execute(tester, plug, "plug-life/test", "Start"),  # illegal now
            lambda: engine.execute(tester, plug, "plug-life/test", "Complete",
                                   outcome={"pass": True, "resistance_ohm": -1.0}),  # bound
            lambda: engine.execute(tester, plug, "plug-life/test", "Complete",
                                   outcome={"pass": True, "resistance_ohm": 4.7}),
            lambda: engine.run_predefined_step(
                rig["system"], plug, PredefinedStep("WriteProperty",
                                                    {"name": "Type", "value": "X"})),
            lambda: engine.run_predefined_step(
                rig["system"], plug, PredefinedStep("WriteProperty",
                                                    {"name": "Batch", "value": "7"})),
        ]
        for action in actions:
            log_before, digest_before = observe()
            try:
                action()
            except Exception:
                pass
            log_after, digest_after = observe()
            assert (log_after > log_before) == (digest_after != digest_before)


class TestHistoryInterpretability:
    def test_step_events_alone_describe_all_property_changes(self, rig):
        engine, plug, tester = rig["engine"], rig["plug"], rig["tester"]
        engine.execute(tester, plug, "plug-life/test", "Start")
        engine.execute(tester, plug, "plug-life/test", "Complete",
                       outcome={"pass": True, "resistance_ohm": 4.7})
        engine.run_predefined_step(rig["system"], plug, PredefinedStep(
            "WriteProperty", {"name": "Location", "value": "CERN"}))
        # reconstruct the mutable properties purely from the step records
        reconstructed = {}
        for ev in engine.store.events(plug):
            step = ev.predefined_step
            if step is None:
                continue
            if step.kind == "CreateItemFromDescription" and ev.seq == 0:
                for p in step.args["properties"]:
                    reconstructed[p["name"]] = p["value"]
            elif step.kind == "WriteProperty":
                reconstructed[step.args["name"]] = step.args["value"]
        live = {p.name: p.value for p in engine.store.state(plug).properties}
        assert reconstructed == live


class TestXOrTotality:
    def test_exactly_one_branch_for_any_outcome(self, rig):
        import random

        engine, system, refs = rig["engine"], rig["system"], rig["refs"]
        t = desc.instantiate(engine, system, refs.item_description, "last", "TotalityType")
        desc.add_description_version(engine, system, t, "outcome-schema", {
            "name": "Readings",
            "fields": [{"name": "a", "type": "integer", "required": True},
                       {"name": "b", "type": "integer", "required": True}],
        })
        desc.add_description_version(engine, system, t, "workflow-def", {
            "name": "total",
            "body": {"kind": "Sequence", "children": [
                {"kind": "Activity", "id": "measure", "role": "tester",
                 "schema": {"name": "Readings", "version": "last"}},
                {"kind": "XOrSplit",
                 "children": [
                     {"kind": "Activity", "id": "low", "role": "op"},
                     {"kind": "Activity", "id": "high", "role": "op"},
                     {"kind": "Activity", "id": "other", "role": "op"},
                 ],
                 "conditions": ["outcome.a < 0", "outcome.a > outcome.b", None]},
            ]},
        })
        desc.add_description_version(engine, system, t, "property-defaults",
                                     {"properties": [], "type": "Total"})
        rng = random.Random(99)
        from dds.workflow import enabled_entries

        for i in range(30):
            item = desc.instantiate(engine, system, t, "last", f"tot-{i}")
            engine.execute(rig["tester"], item, "total/measure", "Start")
            engine.execute(rig["tester"], item, "total/measure", "Complete",
                           outcome={"a": rng.randint(-5, 5), "b": rng.randint(-5, 5)})
            enabled = enabled_entries(engine.store.state(item).workflow)
            assert len(enabled) == 1 and enabled[0].kind == "activity"


class TestNamedScriptResolution:
    def test_workflow_can_reference_a_script_def_by_name(self, rig):
        engine, system, refs = rig["engine"], rig["system"], rig["refs"]
        t = desc.instantiate(engine, system, refs.item_description, "last", "ScriptedType")
        desc.add_description_version(engine, system, t, "script-def", {
            "name": "tag-done", "kind": "consequence",
            "source": '[step WriteProperty("Done", "yes")]',
        })
        desc.add_description_version(engine, system, t, "workflow-def", {
            "name": "scripted",
            "body": {"kind": "Sequence", "children": [
                {"kind": "Activity", "id": "work", "role": "op",
                 "on-complete": [{"name": "tag-done", "version": "0"}]},
            ]},
        })
        desc.add_description_version(engine, system, t, "property-defaults",
                                     {"properties": [], "type": "Scripted"})
        item = desc.instantiate(engine, system, t, "last", "scripted-1")
        # the frozen copy inlines the source: versioning later cannot change it
        frozen = engine.store.state(item).workflow.definition
        assert frozen.body.children[0].on_complete[0].source is not None
        engine.execute(system, item, "scripted/work", "Start")
        engine.execute(system, item, "scripted/work", "Complete")
        assert engine.store.state(item).property_value("Done") == "yes"


class TestDecisionResolution:
    def test_xor_picks_exactly_one_branch(self, rig):
        engine, system, refs = rig["engine"], rig["system"], rig["refs"]
        t = desc.instantiate(engine, system, refs.item_description, "last", "GradedType")
        desc.add_description_version(engine, system, t, "outcome-schema", {
            "name": "Grading",
            "fields": [{"name": "score", "type": "integer", "required": True}],
        })
        desc.add_description_version(engine, system, t, "workflow-def", {
            "name": "graded",
            "body": {"kind": "Sequence", "children": [
                {"kind": "Activity", "id": "grade", "role": "tester",
                 "schema": {"name": "Grading", "version": "last"}},
                {"kind": "XOrSplit",
                 "children": [
                     {"kind": "Activity", "id": "ship", "role": "assembler"},
                     {"kind": "Activity", "id": "rework", "role": "assembler"},
                 ],
                 "conditions": ["outcome.score >= 50", None]},
            ]},
        })
        desc.add_description_version(engine, system, t, "property-defaults",
                                     {"properties": [], "type": "Graded"})
        good = desc.instantiate(engine, system, t, "0", "good-1")
        engine.execute(rig["tester"], good, "graded/grade", "Start")
        engine.execute(rig["tester"], good, "graded/grade", "Complete", outcome={"score": 80})
        paths = [j.activity_path for j in engine.jobs_for_agent(rig["assembler"])
                 if j.item.name == "good-1"]
        assert paths == ["graded/xorsplit1/ship"]

        bad = desc.instantiate(engine, system, t, "0", "bad-1")
        engine.execute(rig["tester"], bad, "graded/grade", "Start")
        engine.execute(rig["tester"], bad, "graded/grade", "Complete", outcome={"score": 10})
        paths = [j.activity_path for j in engine.jobs_for_agent(rig["assembler"])
                 if j.item.name == "bad-1"]
        assert paths == ["graded/xorsplit1/rework"]
        # the decisions are explicit events with the branch recorded
        decisions = [e for e in engine.store.events(bad) if e.branch is not None]
        assert decisions and decisions[-1].branch == 1
