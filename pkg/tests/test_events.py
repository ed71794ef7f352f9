"""Event store: dense sequences, durability, replay, viewpoints, the index."""

import os
import random

import pytest

from dds.errors import RangeOutOfBounds, StorageFailure, UnknownItem
from dds.events import LOG_FILE, SNAPSHOT_FILE, EventStore, EventDraft, store_digest
from dds.model import ItemRef, PredefinedStep, state_digest

from helpers import booted_engine, counter_ids, random_workflow_doc
from dds import descriptions as desc
from dds.workflow import enabled_entries


def creation_draft(agent: ItemRef, name: str) -> EventDraft:
    return EventDraft(
        agent=agent,
        activity_path="predefined/CreateItemFromDescription",
        transition="Create",
        predefined_step=PredefinedStep(
            "CreateItemFromDescription",
            {
                "collections": [],
                "description": None,
                "name": name,
                "properties": [
                    {"mutable": False, "name": "Name", "value": name},
                    {"mutable": False, "name": "Type", "value": "Thing"},
                ],
                "type": "Thing",
                "version": "0",
                "workflow": {
                    "name": "w",
                    "body": {"kind": "Sequence",
                             "children": [{"kind": "Activity", "id": "a", "role": "op"}]},
                },
            },
        ),
    )


def transition_draft(agent, path, transition, before, after) -> EventDraft:
    return EventDraft(
        agent=agent,
        activity_path=path,
        transition=transition,
        state_before=before,
        state_after=after,
    )


@pytest.fixture
def store():
    with EventStore() as s:
        yield s


AGENT = ItemRef(uuid="agent-uuid", name="operator")


class TestAppend:
    def test_first_event_gets_seq_zero(self, store):
        ref = ItemRef(uuid="u1", name="x")
        assert store.append_event(ref, creation_draft(AGENT, "x")) == 0

    def test_two_appends_are_dense(self, store):
        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        seq = store.append_event(ref, transition_draft(AGENT, "w/a", "Start", "Waiting", "Started"))
        assert seq == 1
        assert len(store.events(ref)) == 2

    def test_append_to_unknown_item_fails(self, store):
        ref = ItemRef(uuid="nope", name="ghost")
        with pytest.raises((UnknownItem, StorageFailure)):
            store.append_event(ref, transition_draft(AGENT, "w/a", "Start", "Waiting", "Started"))

    def test_duplicate_name_rejected(self, store):
        store.append_event(ItemRef(uuid="u1", name="x"), creation_draft(AGENT, "x"))
        with pytest.raises(StorageFailure):
            store.append_event(ItemRef(uuid="u2", name="x"), creation_draft(AGENT, "x"))


class TestSlices:
    def fill(self, store, n=6):
        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        state = "Waiting"
        for i in range(1, n):
            transition = "Start" if state == "Waiting" else "Suspend" if state == "Started" else "Resume"
            after = {"Start": "Started", "Suspend": "Suspended", "Resume": "Started"}[transition]
            store.append_event(ref, transition_draft(AGENT, "w/a", transition, state, after))
            state = after
        return ref

    def test_full_history(self, store):
        ref = self.fill(store)
        events = store.events(ref, 0)
        assert [e.seq for e in events] == list(range(6))

    def test_single_event_slice(self, store):
        ref = self.fill(store)
        events = store.events(ref, 2, 2)
        assert len(events) == 1 and events[0].seq == 2

    def test_out_of_bounds(self, store):
        ref = self.fill(store)
        with pytest.raises(RangeOutOfBounds):
            store.events(ref, 0, 99)
        with pytest.raises(RangeOutOfBounds):
            store.events(ref, 4, 2)
        with pytest.raises(RangeOutOfBounds):
            store.events(ref, -1, 2)

    def test_random_slices_concatenate_to_full_read(self, store):
        rng = random.Random(17)
        ref = self.fill(store, n=50)
        cuts = sorted(rng.sample(range(1, 50), 6))
        bounds = [0] + cuts + [50]
        pieces = []
        for lo, hi in zip(bounds, bounds[1:]):
            pieces.extend(store.events(ref, lo, hi - 1))
        assert pieces == store.events(ref)


class TestReplayAndViewpoints:
    def test_replay_of_creation_only(self, store):
        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        assert state_digest(store.replay(ref)) == state_digest(store.state(ref))

    def test_last_viewpoint_follows_highest_seq(self, store):
        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        for i, value in enumerate(["a", "b", "c"]):
            store.append_event(
                ref,
                EventDraft(
                    agent=AGENT,
                    activity_path="predefined/WriteProperty",
                    transition="Step",
                    outcome={"v": value},
                    outcome_schema=("Measurement", 0),
                    predefined_step=PredefinedStep("WriteProperty", {"name": "P", "value": value}),
                    viewpoint_updates=(("Measurement", "last"), ("Measurement", str(i))),
                ),
            )
        outcome, seq = store.resolve_viewpoint(ref, "Measurement", "last")
        assert (outcome, seq) == ({"v": "c"}, 3)
        outcome, seq = store.resolve_viewpoint(ref, "Measurement", "0")
        assert (outcome, seq) == ({"v": "a"}, 1)

    def test_integer_views_are_write_once(self, store):
        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        draft = EventDraft(
            agent=AGENT, activity_path="predefined/WriteProperty", transition="Step",
            outcome={"v": 1}, outcome_schema=("M", 0),
            predefined_step=PredefinedStep("WriteProperty", {"name": "P", "value": 1}),
            viewpoint_updates=(("M", "0"),),
        )
        store.append_event(ref, draft)
        before = store_digest(store)
        with pytest.raises(StorageFailure):
            store.append_event(ref, draft)
        assert store_digest(store) == before

    def test_unknown_view(self, store):
        from dds.errors import NoSuchView

        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        with pytest.raises(NoSuchView):
            store.resolve_viewpoint(ref, "Measurement", "last")

    def test_last_seq_is_monotonic(self, store):
        ref = ItemRef(uuid="u1", name="x")
        store.append_event(ref, creation_draft(AGENT, "x"))
        seen = []
        for i in range(5):
            store.append_event(
                ref,
                EventDraft(
                    agent=AGENT, activity_path="predefined/WriteProperty", transition="Step",
                    outcome={"v": i}, outcome_schema=("M", 0),
                    predefined_step=PredefinedStep("WriteProperty", {"name": "P", "value": i}),
                    viewpoint_updates=(("M", "last"),),
                ),
            )
            _, seq = store.resolve_viewpoint(ref, "M", "last")
            seen.append(seq)
        assert seen == sorted(seen)


class TestQueryByProperty:
    def test_finds_by_type(self, store):
        ref = ItemRef(uuid="u1", name="#123")
        store.append_event(ref, creation_draft(AGENT, "#123"))
        assert [r.name for r in store.query_by_property("Type", "Thing")] == ["#123"]

    def test_absent_value_gives_empty(self, store):
        assert store.query_by_property("Type", "Nothing") == []

    def test_agreement_with_full_scan(self):
        rng = random.Random(23)
        for _ in range(20):
            with EventStore() as store:
                names = []
                for i in range(rng.randint(1, 8)):
                    name = f"it{i}"
                    store.append_event(ItemRef(uuid=f"u{i}", name=name),
                                       creation_draft(AGENT, name))
                    names.append(name)
                    if rng.random() < 0.7:
                        store.append_event(
                            store.ref(name),
                            EventDraft(
                                agent=AGENT, activity_path="predefined/WriteProperty",
                                transition="Step",
                                predefined_step=PredefinedStep(
                                    "WriteProperty",
                                    {"name": "Batch", "value": rng.choice(["a", "b"])}),
                            ),
                        )
                for value in ("a", "b", "missing"):
                    indexed = {r.name for r in store.query_by_property("Batch", value)}
                    scanned = {
                        r.name
                        for r in store.items()
                        if store.replay(r).property_value("Batch") == value
                    }
                    assert indexed == scanned


class TestPersistence:
    def test_reopen_preserves_everything(self, tmp_path):
        path = str(tmp_path / "store")
        with EventStore(path) as store:
            ref = ItemRef(uuid="u1", name="x")
            store.append_event(ref, creation_draft(AGENT, "x"))
            store.append_event(ref, transition_draft(AGENT, "w/a", "Start", "Waiting", "Started"))
            before = store_digest(store)
        with EventStore(path) as store:
            assert store_digest(store) == before
            assert len(store.events(store.ref("x"))) == 2

    def test_torn_final_line_is_discarded(self, tmp_path):
        path = str(tmp_path / "store")
        with EventStore(path) as store:
            ref = ItemRef(uuid="u1", name="x")
            store.append_event(ref, creation_draft(AGENT, "x"))
            store.append_event(ref, transition_draft(AGENT, "w/a", "Start", "Waiting", "Started"))
            acknowledged = store_digest(store)
        log = os.path.join(path, LOG_FILE)
        with open(log, "ab") as f:
            f.write(b'{"seq": 2, "item": {"name": "x", "uuid"')  # crash mid-write
        with EventStore(path) as store:
            assert store_digest(store) == acknowledged
            assert store.last_seq(store.ref("x")) == 1

    def test_snapshot_is_discardable(self, tmp_path):
        path = str(tmp_path / "store")
        engine, refs = booted_engine(path)
        digest_live = store_digest(engine.store)
        engine.store.snapshot()
        engine.store.close()
        with EventStore(path) as store:
            assert store_digest(store) == digest_live
        os.remove(os.path.join(path, SNAPSHOT_FILE))
        with EventStore(path) as store:
            assert store_digest(store) == digest_live

    def test_corrupt_snapshot_falls_back_to_replay(self, tmp_path):
        path = str(tmp_path / "store")
        engine, refs = booted_engine(path)
        digest_live = store_digest(engine.store)
        engine.store.close()
        with open(os.path.join(path, SNAPSHOT_FILE), "w") as f:
            f.write("{broken json")
        with EventStore(path) as store:
            assert store_digest(store) == digest_live

    def test_kill_and_reopen_matches_acknowledged_digest(self, tmp_path):
        """Crash-recovery: run a subprocess that appends events, records the
        digest after every acknowledged append, then dies without closing."""
        import json
        import subprocess
        import sys
        import textwrap

        path = str(tmp_path / "store")
        script = textwrap.dedent(
            """
            import json, os, sys
            sys.path.insert(0, %r)
            from helpers import booted_engine
            from dds import descriptions as D
            from dds.events import store_digest

            engine, refs = booted_engine(%r)
            D.create_agent(engine, refs.system_agent, "worker", "op")
            print(json.dumps({"digest": store_digest(engine.store)}))
            sys.stdout.flush()
            os._exit(9)  # no close(), no flush beyond append's own fsync
            """
        ) % (os.path.dirname(__file__), path)
        result = subprocess.run(
            [sys.executable, "-c", script], capture_output=True, text=True, timeout=60
        )
        acknowledged = json.loads(result.stdout.strip().splitlines()[-1])["digest"]
        with EventStore(path) as store:
            assert store_digest(store) == acknowledged
