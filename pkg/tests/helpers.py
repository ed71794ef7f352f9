"""Shared test fixtures: deterministic engines, scenario drivers, generators."""

from __future__ import annotations

import itertools
import json
import random
import urllib.error
import urllib.request
from urllib.parse import quote

import dds
from dds import descriptions as desc
from dds.events import EventStore, store_digest
from dds.execution import Engine


def counter_ids(prefix: str = ""):
    """Deterministic 32-hex uuid factory; same sequence every run."""
    counter = itertools.count(1)

    def make() -> str:
        return f"{prefix}{next(counter):032x}"[-32:]

    return make


def fresh_engine(path=None, fsync=True, deterministic=True):
    store = EventStore(path, fsync=fsync)
    engine = Engine(store, id_factory=counter_ids() if deterministic else None)
    return engine


def booted_engine(path=None, deterministic=True):
    engine = fresh_engine(path=path, deterministic=deterministic)
    refs = desc.bootstrap(engine)
    return engine, refs


PLUG_TEST_SCHEMA = {
    "name": "PlugTest",
    "fields": [
        {"name": "pass", "type": "boolean", "required": True},
        {"name": "resistance_ohm", "type": "number", "required": True, "min": 0},
    ],
}

PLUG_WORKFLOW_V0 = {
    "name": "plug-life",
    "body": {
        "kind": "Sequence",
        "children": [
            {
                "kind": "Activity",
                "id": "test",
                "role": "tester",
                "schema": {"name": "PlugTest", "version": "last"},
                "on-complete": [
                    'if outcome.pass then [step WriteProperty("Tested", "yes")] else []'
                ],
            },
            {"kind": "Activity", "id": "mount", "role": "assembler"},
        ],
    },
}

PLUG_WORKFLOW_V1 = {
    "name": "plug-life",
    "body": {
        "kind": "Sequence",
        "children": [
            {
                "kind": "Activity",
                "id": "test",
                "role": "tester",
                "schema": {"name": "PlugTest", "version": "last"},
                "on-complete": [
                    'if outcome.pass then [step WriteProperty("Tested", "yes")] else []'
                ],
            },
            {"kind": "Activity", "id": "inspect", "role": "tester"},
            {"kind": "Activity", "id": "mount", "role": "assembler"},
        ],
    },
}


def run_spark_plug_scenario(engine, refs):
    """The whole product-versioning walk: type v0, #123 through its workflow,
    type v1, #124 alongside. Returns the refs the assertions need."""
    store = engine.store
    system = refs.system_agent

    tester = desc.create_agent(engine, system, "alice", "tester")
    assembler = desc.create_agent(engine, system, "bob", "assembler")

    plug_type = desc.instantiate(engine, system, refs.item_description, "last", "NewcarSparkPlugType")
    desc.add_description_version(engine, system, plug_type, "outcome-schema", PLUG_TEST_SCHEMA)
    desc.add_description_version(engine, system, plug_type, "workflow-def", PLUG_WORKFLOW_V0)
    desc.add_description_version(
        engine, system, plug_type, "property-defaults",
        {"properties": [], "type": "Newcar spark plug"},
    )

    plug123 = desc.instantiate(engine, system, plug_type, "0", "#123")

    jobs = [j for j in engine.jobs_for_agent(tester) if j.item.name == "#123"]
    assert len(jobs) == 1
    engine.execute(tester, plug123, jobs[0].activity_path, "Start",
                   expected_seq=jobs[0].expected_seq)
    engine.execute(tester, plug123, jobs[0].activity_path, "Complete",
                   outcome={"pass": True, "resistance_ohm": 4.7})
    jobs = [j for j in engine.jobs_for_agent(assembler) if j.item.name == "#123"]
    assert len(jobs) == 1
    engine.execute(assembler, plug123, jobs[0].activity_path, "Start")
    engine.execute(assembler, plug123, jobs[0].activity_path, "Complete")

    desc.add_description_version(engine, system, plug_type, "workflow-def", PLUG_WORKFLOW_V1)
    desc.add_description_version(
        engine, system, plug_type, "property-defaults",
        {"properties": [], "type": "improved Newcar spark plug"},
    )
    plug124 = desc.instantiate(engine, system, plug_type, "1", "#124")

    return {
        "store": store,
        "system": system,
        "tester": tester,
        "assembler": assembler,
        "plug_type": plug_type,
        "plug123": plug123,
        "plug124": plug124,
        "digest": store_digest(store),
    }


# --- HTTP driving -------------------------------------------------------------


class HttpClient:
    """Thin wrapper over urllib for driving a DdsServer in tests."""

    def __init__(self, host: str, port: int):
        self.base = f"http://{host}:{port}"
        self.token = None

    def get(self, path: str):
        try:
            with urllib.request.urlopen(self.base + path) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read()

    def get_json(self, path: str):
        status, body = self.get(path)
        return status, json.loads(body)

    def post(self, path: str, doc, with_token: bool = True):
        req = urllib.request.Request(
            self.base + path, data=json.dumps(doc).encode("utf-8"), method="POST"
        )
        req.add_header("Content-Type", "application/json")
        if with_token and self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            return exc.code, json.loads(exc.read())

    def login(self, agent_name: str) -> None:
        status, doc = self.post("/sessions", {"agent-name": agent_name}, with_token=False)
        assert status == 200, doc
        self.token = doc["token"]

    def item_path(self, name: str) -> str:
        return f"/items/{quote(name, safe='')}"

    def execute(self, item: str, activity_path: str, transition: str, outcome=None,
                expected_seq=None):
        body = {"activity-path": activity_path, "transition": transition}
        if outcome is not None:
            body["outcome"] = outcome
        if expected_seq is not None:
            body["expected-seq"] = expected_seq
        return self.post(f"{self.item_path(item)}/execute", body)

    def complete_activity(self, item: str, schema_kind: str, outcome):
        """Find the enabled activity bearing a schema kind, start it if
        needed, complete it with the outcome."""
        status, state = self.get_json(self.item_path(item))
        assert status == 200, state
        for path in state["enabled"]:
            # the frozen definition in the state document says which enabled
            # path carries the wanted schema
            if _path_schema(state["workflow"]["def"], path) == schema_kind:
                activity_state = state["workflow"]["states"].get(path, "Waiting")
                if activity_state == "Waiting":
                    status, doc = self.execute(item, path, "Start")
                    assert status == 200, doc
                status, doc = self.execute(item, path, "Complete", outcome=outcome)
                assert status == 200, doc
                return doc
        raise AssertionError(f"no enabled {schema_kind!r} activity on {item}")


def _path_schema(def_doc: dict, path: str):
    """Schema name of the activity at ``path`` in a workflow-def document."""
    segments = path.split("/")[1:]
    node = def_doc["body"]
    for seg in segments:
        for i, child in enumerate(node["children"]):
            if child["kind"] == "Activity" and child.get("id") == seg:
                node = child
                break
            if child["kind"] != "Activity" and f"{child['kind'].lower()}{i}" == seg:
                node = child
                break
        else:
            return None
    if node.get("kind") == "Activity":
        schema = node.get("schema")
        return schema["name"] if schema else None
    return None


# --- random valid workflow definitions (for fuzzing) -------------------------


def random_workflow_doc(rng: random.Random, max_activities: int = 8) -> dict:
    """A random valid block-structured definition with coin-flip conditions."""
    ids = iter(f"a{i}" for i in range(max_activities))
    budget = [rng.randint(1, max_activities)]
    # conditions the engine can evaluate in any context (no outcome fields)
    xor_conditions = ["true", "false", "iteration == 0", "iteration > 0"]

    def make_node(depth: int) -> dict:
        if budget[0] <= 0:
            raise AssertionError("budget exhausted")
        if depth >= 3 or budget[0] == 1 or rng.random() < 0.5:
            budget[0] -= 1
            return {"id": next(ids), "kind": "Activity", "role": "op"}
        kind = rng.choice(["Sequence", "AndSplit", "XOrSplit", "Loop"])
        if kind == "Loop":
            child = make_node(depth + 1)
            return {
                "children": [child],
                "condition": f"iteration < {rng.randint(0, 2)}",
                "kind": "Loop",
            }
        n = rng.randint(1, min(3, budget[0]))
        children = []
        for _ in range(n):
            if budget[0] <= 0:
                break
            children.append(make_node(depth + 1))
        if kind == "XOrSplit":
            conditions = [rng.choice(xor_conditions) for _ in children]
            conditions[rng.randrange(len(children))] = None  # otherwise branch
            return {"children": children, "conditions": conditions, "kind": kind}
        return {"children": children, "kind": kind}

    body = make_node(1)
    if body["kind"] == "Activity":
        body = {"children": [body], "kind": "Sequence"}
    return {"body": body, "name": f"wf{rng.randint(0, 10**6)}", "version": 0}
