"""Descriptions-as-items: authoring, instantiation, layering."""

import pytest

from dds import descriptions as desc
from dds.errors import (
    InvalidDefinition,
    NameTaken,
    NoSuchVersion,
    SchemaViolation,
)
from dds.model import state_digest

from helpers import PLUG_TEST_SCHEMA, PLUG_WORKFLOW_V0, PLUG_WORKFLOW_V1, booted_engine


@pytest.fixture
def rig():
    engine, refs = booted_engine()
    return engine, refs


def make_plug_type(engine, refs, name="NewcarSparkPlugType"):
    system = refs.system_agent
    plug_type = desc.instantiate(engine, system, refs.item_description, "last", name)
    desc.add_description_version(engine, system, plug_type, "outcome-schema", PLUG_TEST_SCHEMA)
    desc.add_description_version(engine, system, plug_type, "workflow-def", PLUG_WORKFLOW_V0)
    desc.add_description_version(engine, system, plug_type, "property-defaults",
                                 {"properties": [], "type": "Newcar spark plug"})
    return plug_type


class TestAuthoring:
    def test_first_version_is_zero_then_one(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        assert desc.add_description_version(
            engine, refs.system_agent, t, "workflow-def", PLUG_WORKFLOW_V1) == 1

    def test_pinned_views_stay_put(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        doc_v0, seq_v0 = engine.store.resolve_viewpoint(t, "workflow-def", "0")
        desc.add_description_version(engine, refs.system_agent, t, "workflow-def",
                                     PLUG_WORKFLOW_V1)
        assert engine.store.resolve_viewpoint(t, "workflow-def", "0") == (doc_v0, seq_v0)
        doc_last, _ = engine.store.resolve_viewpoint(t, "workflow-def", "last")
        assert doc_last["body"] == PLUG_WORKFLOW_V1["body"]

    def test_invalid_workflow_rejected_without_event(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        entry = desc._activity_for_kind(engine, t, "workflow-def")
        engine.execute(refs.system_agent, t, entry.path, "Start")
        log_len = engine.store.last_seq(t)
        digest_before = state_digest(engine.store.state(t))
        with pytest.raises(InvalidDefinition) as err:
            desc.add_description_version(
                engine, refs.system_agent, t, "workflow-def",
                {"name": "broken", "body": {"kind": "Sequence", "children": []}},
            )
        assert any(d["code"] == "EmptyBlock" for d in err.value.defects)
        assert engine.store.last_seq(t) == log_len
        assert state_digest(engine.store.state(t)) == digest_before

    def test_schema_doc_must_be_well_formed(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        with pytest.raises(SchemaViolation):
            desc.add_description_version(
                engine, refs.system_agent, t, "outcome-schema",
                {"name": "Bad", "fields": [{"name": "e", "type": "enum", "values": []}]},
            )

    def test_schema_name_ownership(self, rig):
        engine, refs = rig
        make_plug_type(engine, refs)
        other = desc.instantiate(engine, refs.system_agent, refs.item_description, "last",
                                 "OtherType")
        with pytest.raises(SchemaViolation) as err:
            desc.add_description_version(engine, refs.system_agent, other, "outcome-schema",
                                         PLUG_TEST_SCHEMA)
        assert err.value.violations[0]["code"] == "NameOwned"


class TestInstantiation:
    def test_type_comes_from_property_defaults(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        plug = desc.instantiate(engine, refs.system_agent, t, "0", "#123")
        state = engine.store.state(plug)
        assert state.property_value("Type") == "Newcar spark plug"
        assert state.property_value("Name") == "#123"
        assert state.workflow.definition.version == 0

    def test_coexisting_versions_run_different_workflows(self, rig):
        engine, refs = rig
        system = refs.system_agent
        t = make_plug_type(engine, refs)
        plug123 = desc.instantiate(engine, system, t, "0", "#123")
        desc.add_description_version(engine, system, t, "workflow-def", PLUG_WORKFLOW_V1)
        desc.add_description_version(engine, system, t, "property-defaults",
                                     {"properties": [], "type": "improved Newcar spark plug"})
        plug124 = desc.instantiate(engine, system, t, "last", "#124")

        wf123 = engine.store.state(plug123).workflow.definition
        wf124 = engine.store.state(plug124).workflow.definition
        assert wf123.version == 0 and wf124.version == 1
        assert len(wf124.body.children) == len(wf123.body.children) + 1
        assert [r.name for r in engine.store.query_by_property(
            "Type", "Newcar spark plug")] == ["#123"]
        assert [r.name for r in engine.store.query_by_property(
            "Type", "improved Newcar spark plug")] == ["#124"]

    def test_init_props_are_applied(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        plug = desc.instantiate(engine, refs.system_agent, t, "0", "#99",
                                init_props=[{"name": "Batch", "value": "B7"}])
        assert engine.store.state(plug).property_value("Batch") == "B7"

    def test_missing_version(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        with pytest.raises(NoSuchVersion):
            desc.instantiate(engine, refs.system_agent, t, "7", "#x")

    def test_name_taken(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        desc.instantiate(engine, refs.system_agent, t, "0", "#123")
        with pytest.raises(NameTaken):
            desc.instantiate(engine, refs.system_agent, t, "0", "#123")

    def test_creation_is_evented_on_both_sides(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        before = engine.store.last_seq(t)
        plug = desc.instantiate(engine, refs.system_agent, t, "0", "#123")
        creation = engine.store.events(plug, 0, 0)[0]
        assert creation.predefined_step.kind == "CreateItemFromDescription"
        desc_steps = [
            e for e in engine.store.events(t, before + 1)
            if e.predefined_step is not None
            and e.predefined_step.kind == "CreateItemFromDescription"
        ]
        assert len(desc_steps) == 1
        assert desc_steps[0].predefined_step.args["created"]["name"] == "#123"


class TestLayering:
    def test_three_layer_chain(self, rig):
        engine, refs = rig
        system = refs.system_agent
        # meta-description -> description -> instance, all through execute
        t = make_plug_type(engine, refs)
        plug = desc.instantiate(engine, system, t, "0", "#123")
        for item in (refs.item_description, t, plug):
            events = engine.store.events(item)
            assert len(events) >= 1
            assert state_digest(engine.store.replay(item)) == state_digest(
                engine.store.state(item))

    def test_instances_do_not_get_instantiate_jobs(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        plug = desc.instantiate(engine, refs.system_agent, t, "0", "#123")
        state = engine.store.state(plug)
        from dds.workflow import enabled_entries

        schemas = [
            e.activity.schema[0]
            for e in enabled_entries(state.workflow)
            if e.kind == "activity" and e.activity.schema
        ]
        assert "instantiate-request" not in schemas

    def test_descriptions_and_instances_share_the_directory(self, rig):
        engine, refs = rig
        t = make_plug_type(engine, refs)
        plug = desc.instantiate(engine, refs.system_agent, t, "0", "#123")
        names = [r.name for r in engine.store.items()]
        assert "NewcarSparkPlugType" in names and "#123" in names
        # one digest function serves both layers
        assert state_digest(engine.store.state(t)) != state_digest(engine.store.state(plug))

    def test_intermediate_layer_can_still_describe(self, rig):
        engine, refs = rig
        system = refs.system_agent
        # an instance of ItemDescription is itself a description: it can author
        # documents and instantiate
        mid = desc.instantiate(engine, system, refs.item_description, "last", "MidLayer")
        desc.add_description_version(engine, system, mid, "workflow-def", PLUG_WORKFLOW_V0)
        desc.add_description_version(engine, system, mid, "property-defaults",
                                     {"properties": [], "type": "MidThing"})
        desc.add_description_version(engine, system, mid, "outcome-schema", PLUG_TEST_SCHEMA)
        leaf = desc.instantiate(engine, system, mid, "last", "leaf-1")
        assert engine.store.state(leaf).property_value("Type") == "MidThing"


class TestOldStockRule:
    def test_kernel_is_permissive_unless_constrained(self, rig):
        engine, refs = rig
        system = refs.system_agent
        t = make_plug_type(engine, refs)
        old = desc.instantiate(engine, system, t, "0", "old-plug")
        desc.add_description_version(engine, system, t, "property-defaults",
                                     {"properties": [], "type": "improved Newcar spark plug"})
        desc.add_description_version(engine, system, t, "workflow-def", PLUG_WORKFLOW_V1)

        assembly = desc.instantiate(engine, system, refs.item_description, "last", "AssemblyType")
        desc.add_description_version(engine, system, assembly, "workflow-def", {
            "name": "assembly-life",
            "body": {"kind": "Sequence",
                     "children": [{"kind": "Activity", "id": "build", "role": "assembler"}]},
        })
        desc.add_description_version(engine, system, assembly, "property-defaults",
                                     {"properties": [], "type": "Assembly"})
        desc.add_description_version(engine, system, assembly, "collection-def", {
            "collections": [
                {"name": "free", "kind": "Dependency"},
                {"name": "strict", "kind": "Aggregation",
                 "slots": [{"slot-id": 0, "type-constraint": "improved Newcar spark plug"}]},
            ]
        })
        box = desc.instantiate(engine, system, assembly, "0", "assembly-1")
        from dds.errors import ConstraintViolation
        from dds.model import PredefinedStep

        # unconstrained collection takes old stock
        engine.run_predefined_step(system, box, PredefinedStep(
            "AddMemberToCollection", {"collection": "free", "target": "old-plug"}))
        # constrained slot refuses it
        with pytest.raises(ConstraintViolation):
            engine.run_predefined_step(system, box, PredefinedStep(
                "AddMemberToCollection", {"collection": "strict", "target": "old-plug", "slot": 0}))
