"""Pluggable description bundles with exact-version dependencies.

A bundle is one canonical JSON file (`.ddsmod`): a manifest naming the module,
its version and its dependencies, plus resources — description items with
their template documents. Importing registers the module as an item of its
own (every import is an event on it, carrying the whole bundle, so imports
are reconstructible from that item's history alone) and creates or extends
the description items. The same file doubles as the transfer format between
stores: descriptions travel exactly like anything else.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import descriptions
from . import schema as schemas
from . import scripting
from . import workflow as wf
from .canonical import canonical_bytes, digest
from .errors import (
    ConflictingVersion,
    CycleError,
    DdsError,
    MissingDependency,
    ParseError,
    SchemaViolation,
    StorageFailure,
    UnknownModule,
)
from .events import EventStore
from .execution import (
    DESCRIPTION_KINDS,
    Engine,
    RESERVED_KINDS,
    _check_collection_def_doc,
    _check_property_defaults_doc,
)
from .model import ItemRef, PredefinedStep

BUNDLE_EXTENSION = ".ddsmod"


@dataclass(frozen=True)
class ModuleManifest:
    name: str
    version: str  # dotted integers, e.g. "1.0"
    dependencies: tuple[tuple[str, str], ...] = ()

    def to_doc(self) -> dict:
        return {
            "dependencies": [{"name": n, "version": v} for n, v in self.dependencies],
            "name": self.name,
            "version": self.version,
        }


def _is_dotted_version(text) -> bool:
    if not isinstance(text, str) or not text:
        return False
    return all(part.isdigit() for part in text.split("."))


def parse_manifest(doc) -> ModuleManifest:
    if not isinstance(doc, dict):
        raise SchemaViolation([schemas.violation("TypeViolation", "manifest")])
    problems = []
    name = doc.get("name")
    if not isinstance(name, str) or not name or "/" in name:
        problems.append(schemas.violation("MissingRequired", "manifest.name"))
    if not _is_dotted_version(doc.get("version")):
        problems.append(schemas.violation("TypeViolation", "manifest.version"))
    deps = []
    raw_deps = doc.get("dependencies", [])
    if not isinstance(raw_deps, list):
        problems.append(schemas.violation("TypeViolation", "manifest.dependencies"))
        raw_deps = []
    for i, d in enumerate(raw_deps):
        if (
            not isinstance(d, dict)
            or not isinstance(d.get("name"), str)
            or not _is_dotted_version(d.get("version"))
        ):
            problems.append(schemas.violation("TypeViolation", f"manifest.dependencies[{i}]"))
            continue
        if d["name"] == name:
            problems.append(schemas.violation("SelfDependency", f"manifest.dependencies[{i}]"))
        deps.append((d["name"], d["version"]))
    if problems:
        raise SchemaViolation(problems)
    return ModuleManifest(name=name, version=doc["version"], dependencies=tuple(deps))


def resolve_order(manifests: list[ModuleManifest]) -> list[ModuleManifest]:
    """Topological order, dependencies first. Ties break lexicographically on
    (name, version) so the order is deterministic. Dependencies must be
    satisfied within the input list."""
    by_key = {(m.name, m.version): m for m in manifests}
    for m in manifests:
        for dep in m.dependencies:
            if dep not in by_key:
                raise MissingDependency(dep[0], dep[1])
    remaining = dict(by_key)
    out: list[ModuleManifest] = []
    placed: set[tuple[str, str]] = set()
    while remaining:
        ready = sorted(
            key for key, m in remaining.items() if all(d in placed for d in m.dependencies)
        )
        if not ready:
            raise CycleError(_find_cycle(remaining))
        for key in ready:
            out.append(remaining.pop(key))
            placed.add(key)
    return out


def _find_cycle(remaining: dict) -> list[str]:
    # every remaining node has an unplaced dependency; walk until a repeat
    start = min(remaining)
    seen: list[tuple[str, str]] = []
    node = start
    while node not in seen:
        seen.append(node)
        manifest = remaining[node]
        node = next(d for d in manifest.dependencies if d in remaining)
    cycle = seen[seen.index(node):] + [node]
    return [f"{n}@{v}" for n, v in cycle]


# --- Bundle validation -------------------------------------------------------


def validate_bundle(doc) -> tuple[ModuleManifest, list[dict]]:
    """Full structural check of a bundle: manifest shape, resource documents
    against their meta checks, workflow definitions against the validator.
    Returns the manifest and every problem found."""
    problems: list[dict] = []
    if not isinstance(doc, dict):
        return ModuleManifest("?", "0"), [schemas.violation("TypeViolation", "")]
    try:
        manifest = parse_manifest(doc.get("manifest"))
    except SchemaViolation as exc:
        return ModuleManifest("?", "0"), exc.violations
    resources = doc.get("resources")
    if not isinstance(resources, list):
        return manifest, [schemas.violation("MissingRequired", "resources")]
    seen_names = set()
    for i, res in enumerate(resources):
        where = f"resources[{i}]"
        if not isinstance(res, dict) or not isinstance(res.get("name"), str) or not res["name"]:
            problems.append(schemas.violation("TypeViolation", where))
            continue
        if res["name"] in seen_names:
            problems.append(schemas.violation("DuplicateField", where))
        seen_names.add(res["name"])
        docs = res.get("documents")
        if not isinstance(docs, list):
            problems.append(schemas.violation("MissingRequired", f"{where}.documents"))
            continue
        for j, entry in enumerate(docs):
            dwhere = f"{where}.documents[{j}]"
            if not isinstance(entry, dict) or entry.get("kind") not in DESCRIPTION_KINDS:
                problems.append(schemas.violation("UnknownType", f"{dwhere}.kind"))
                continue
            problems.extend(
                schemas.violation(v["code"], f"{dwhere}.{v['path']}" if v["path"] else dwhere)
                for v in _check_document(entry["kind"], entry.get("doc"))
            )
    return manifest, problems


def _check_document(kind: str, doc) -> list[dict]:
    try:
        if kind == "workflow-def":
            report = wf.validate_workflow(wf.parse_workflow_doc(doc))
            return [
                schemas.violation(d["code"], d["activity-id"]) for d in report.defects
            ]
        if kind == "outcome-schema":
            parsed = schemas.parse_schema_doc(doc)
            if parsed.name in RESERVED_KINDS:
                return [schemas.violation("ReservedName", "name")]
            return []
        if kind == "collection-def":
            return _check_collection_def_doc(doc)
        if kind == "property-defaults":
            return _check_property_defaults_doc(doc)
        if kind == "script-def":
            scripting.parse_script_doc(doc)
            return []
    except SchemaViolation as exc:
        return exc.violations
    except ParseError:
        return [schemas.violation("ParseError", "source")]
    except DdsError as exc:
        return [schemas.violation(exc.code, "")]
    raise DdsError(f"unchecked document kind {kind!r}")  # unreachable


def _provided_names(bundle_doc: dict) -> tuple[set[str], set[str]]:
    """Schema and script names a bundle itself defines."""
    schema_names: set[str] = set()
    script_names: set[str] = set()
    for res in bundle_doc.get("resources", []):
        for entry in res.get("documents", []):
            doc = entry.get("doc") or {}
            if entry.get("kind") == "outcome-schema" and isinstance(doc.get("name"), str):
                schema_names.add(doc["name"])
            if entry.get("kind") == "script-def" and isinstance(doc.get("name"), str):
                script_names.add(doc["name"])
    return schema_names, script_names


def _reference_problems(bundle_doc: dict, dep_schemas: set[str], dep_scripts: set[str]) -> list[dict]:
    """Schema and script references in workflow documents must resolve within
    the bundle plus its declared dependencies."""
    own_schemas, own_scripts = _provided_names(bundle_doc)
    schemas_ok = own_schemas | dep_schemas | set(RESERVED_KINDS)
    scripts_ok = own_scripts | dep_scripts
    problems = []
    for i, res in enumerate(bundle_doc.get("resources", [])):
        for j, entry in enumerate(res.get("documents", [])):
            if entry.get("kind") != "workflow-def":
                continue
            where = f"resources[{i}].documents[{j}]"
            try:
                definition = wf.parse_workflow_doc(entry.get("doc"))
            except DdsError:
                continue  # already reported by validate_bundle
            for path, node in wf._walk_paths(definition.body, definition.name):
                if isinstance(node, wf.ActivityDef):
                    if node.schema is not None and node.schema[0] not in schemas_ok:
                        problems.append(
                            schemas.violation("UnresolvedReference", f"{where}:{node.schema[0]}")
                        )
                    for ref in node.on_complete:
                        if ref.name is not None and ref.name not in scripts_ok:
                            problems.append(
                                schemas.violation("UnresolvedReference", f"{where}:{ref.name}")
                            )
    return problems


# --- Import / export ---------------------------------------------------------


def import_module(engine: Engine, agent: ItemRef, bundle_doc: dict) -> ItemRef:
    """Import a bundle. Transactional by construction: everything is validated
    before the first event lands. Re-importing an identical (name, version)
    appends nothing and returns the existing module item."""
    with engine.import_lock:
        store = engine.store
        manifest, problems = validate_bundle(bundle_doc)
        if problems:
            raise SchemaViolation(problems)
        content_hash = digest(bundle_doc)

        registry = store.module_registry()
        dep_schemas: set[str] = set()
        dep_scripts: set[str] = set()
        for dep_name, dep_version in manifest.dependencies:
            dep = registry.get(dep_name, {}).get("versions", {}).get(dep_version)
            if dep is None:
                raise MissingDependency(dep_name, dep_version)
            ds, dc = _provided_names(dep["bundle"])
            dep_schemas |= ds
            dep_scripts |= dc
        problems = _reference_problems(bundle_doc, dep_schemas, dep_scripts)
        if problems:
            raise SchemaViolation(problems)

        existing = registry.get(manifest.name)
        if existing is not None:
            prior = existing["versions"].get(manifest.version)
            if prior is not None:
                if prior["hash"] != content_hash:
                    raise ConflictingVersion(f"{manifest.name}@{manifest.version}")
                return store.ref(existing["item"])

        _check_resource_names(store, manifest, bundle_doc)

        try:
            if existing is not None:
                module_item = store.ref(existing["item"])
            else:
                module_item = descriptions.instantiate(
                    engine, agent, store.ref(descriptions.MODULE_TYPE), "last", manifest.name
                )
            engine.run_predefined_step(
                agent, module_item, PredefinedStep("ImportModule", {"bundle": bundle_doc})
            )
            for res in bundle_doc.get("resources", []):
                if store.has_name(res["name"]):
                    res_ref = store.ref(res["name"])
                else:
                    res_ref = descriptions.instantiate(
                        engine, agent, store.ref(descriptions.ITEM_DESCRIPTION), "last", res["name"]
                    )
                for entry in res.get("documents", []):
                    descriptions.add_description_version(
                        engine, agent, res_ref, entry["kind"], entry["doc"]
                    )
        except DdsError as exc:
            # pre-validation should make this unreachable; surface loudly
            raise StorageFailure(f"import of {manifest.name} halted mid-apply: {exc}") from exc
        return module_item


def _check_resource_names(store: EventStore, manifest: ModuleManifest, bundle_doc: dict) -> None:
    """Names the import will claim must be free or already owned by this
    module's earlier imports (same description items gain new versions)."""
    registry = store.module_registry()
    owned: set[str] = set()
    prior = registry.get(manifest.name)
    if prior is not None:
        for version in prior["versions"].values():
            for res in version["bundle"].get("resources", []):
                owned.add(res["name"])
    problems = []
    for res in bundle_doc.get("resources", []):
        name = res["name"]
        if store.has_name(name) and name not in owned:
            problems.append(schemas.violation("NameTaken", name))
        # schema/script ownership: a name owned by an item outside this module
        for entry in res.get("documents", []):
            doc = entry.get("doc") or {}
            if entry["kind"] == "outcome-schema":
                owner = store.schema_owner(doc.get("name"))
            elif entry["kind"] == "script-def":
                owner = store.script_owner(doc.get("name"))
            else:
                continue
            if owner is not None and (not store.has_name(name) or store.ref(name).uuid != owner):
                problems.append(schemas.violation("NameOwned", f"{name}:{doc.get('name')}"))
    if not store.has_name(manifest.name):
        pass
    elif store.state(store.ref(manifest.name)).property_value("Type") != "Module":
        problems.append(schemas.violation("NameTaken", manifest.name))
    if problems:
        raise SchemaViolation(problems)


def export_bundle(store: EventStore, name: str, version: str) -> bytes:
    """Byte-stable bundle for a previously imported module version."""
    entry = store.module_registry().get(name, {}).get("versions", {}).get(version)
    if entry is None:
        raise UnknownModule(f"{name}@{version}")
    return canonical_bytes(entry["bundle"]) + b"\n"


def load_bundle_bytes(raw: bytes) -> dict:
    import json

    try:
        doc = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaViolation([schemas.violation("ParseError", "")]) from exc
    if not isinstance(doc, dict):
        raise SchemaViolation([schemas.violation("TypeViolation", "")])
    return doc
