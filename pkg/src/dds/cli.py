"""Administration command line: serve, bootstrap, import/export, inspect.

Reads answer from the store in-process, or over HTTP with --remote; either
way the JSON output is byte-identical to the corresponding HTTP body. Exit
codes: 0 ok, 1 validation failure, 2 usage/state error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.error
import urllib.request
from pathlib import Path
from urllib.parse import quote

from . import descriptions, modules, views
from .canonical import canonical_bytes
from .errors import DdsError, InvalidDefinition, SchemaViolation
from .events import LOG_FILE, EventStore
from .execution import Engine
from .server import DdsServer

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_STATE = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dds", description=__doc__)
    parser.add_argument("--store", default=os.environ.get("DDS_STORE"),
                        help="store directory (env DDS_STORE)")
    parser.add_argument("--format", choices=("human", "json"), default="human")
    parser.add_argument("--remote", default=None,
                        help="base URL of a running server; reads go over HTTP")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create and bootstrap a store")
    p.add_argument("store_path", nargs="?", default=None)

    p = sub.add_parser("serve", help="run the HTTP server")
    p.add_argument("--addr", default=os.environ.get("DDS_ADDR", "127.0.0.1:8000"))

    p = sub.add_parser("import", help="import a module bundle")
    p.add_argument("bundle", type=Path)

    p = sub.add_parser("export", help="export a module bundle")
    p.add_argument("name")
    p.add_argument("version")
    p.add_argument("-o", "--output", type=Path, required=True)

    p = sub.add_parser("items", help="list items")
    p.add_argument("--type", dest="type_filter", default=None)
    p.add_argument("--prop", action="append", default=[], metavar="NAME=VALUE")

    p = sub.add_parser("show", help="item state summary")
    p.add_argument("item")

    p = sub.add_parser("history", help="item event log")
    p.add_argument("item")
    p.add_argument("--from", dest="from_seq", type=int, default=0)
    p.add_argument("--to", dest="to_seq", type=int, default=None)

    p = sub.add_parser("provenance", help="history joined with outcomes")
    p.add_argument("item")

    p = sub.add_parser("validate", help="check a bundle without importing")
    p.add_argument("bundle", type=Path)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except DdsError as exc:
        _emit_error(args, exc.to_doc())
        return EXIT_STATE
    except OSError as exc:
        _emit_error(args, {"error": "IOError", "message": str(exc)})
        return EXIT_IO


def _run(args) -> int:
    cmd = args.command
    if cmd == "init":
        return _cmd_init(args)
    if cmd == "serve":
        return _cmd_serve(args)
    if cmd == "validate":
        return _cmd_validate(args)
    if args.remote:
        return _cmd_remote(args)
    store = _open_store(args)
    try:
        engine = Engine(store)
        if cmd == "import":
            return _cmd_import(args, engine)
        if cmd == "export":
            return _cmd_export(args, store)
        if cmd == "items":
            doc = views.items_listing(store, args.type_filter, _parse_props(args.prop))
            return _emit(args, doc, _render_items)
        ref = store.ref(args.item)
        if cmd == "show":
            return _emit(args, views.item_state_doc(store, ref), _render_state)
        if cmd == "history":
            doc = views.events_doc(store, ref, args.from_seq, args.to_seq)
            return _emit(args, doc, _render_history)
        if cmd == "provenance":
            return _emit(args, views.provenance_doc(store, ref), _render_provenance)
        raise DdsError(f"unknown command {cmd!r}")
    finally:
        store.close()


def _store_path(args) -> Path:
    if not args.store:
        _emit_error(args, {"error": "Usage", "message": "--store (or DDS_STORE) is required"})
        raise SystemExit(EXIT_STATE)
    return Path(args.store)


def _open_store(args) -> EventStore:
    path = _store_path(args)
    if not (path / LOG_FILE).exists():
        _emit_error(args, {"error": "Usage", "message": f"no store at {path}; run dds init"})
        raise SystemExit(EXIT_STATE)
    return EventStore(str(path))


def _cmd_init(args) -> int:
    path = Path(args.store_path) if args.store_path else _store_path(args)
    log = path / LOG_FILE
    if log.exists() and log.stat().st_size > 0:
        _emit_error(args, {"error": "AlreadyInitialized", "message": str(path)})
        return EXIT_STATE
    store = EventStore(str(path))
    try:
        descriptions.bootstrap(Engine(store))
        store.snapshot()
    finally:
        store.close()
    _println(args, {"initialized": str(path)}, f"initialized store at {path}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    store = _open_store(args)
    engine = Engine(store)
    host, _, port = args.addr.rpartition(":")
    server = DdsServer(engine, host=host or "127.0.0.1", port=int(port))
    host, port = server.address
    print(f"serving on http://{host}:{port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        store.close()
    return EXIT_OK


def _cmd_import(args, engine: Engine) -> int:
    try:
        raw = args.bundle.read_bytes()
    except OSError as exc:
        _emit_error(args, {"error": "IOError", "message": str(exc)})
        return EXIT_IO
    bundle = modules.load_bundle_bytes(raw)
    manifest = modules.parse_manifest(bundle.get("manifest"))
    already = manifest.version in engine.store.module_registry().get(
        manifest.name, {}
    ).get("versions", {})
    try:
        ref = modules.import_module(engine, descriptions.bootstrap(engine).system_agent, bundle)
    except (SchemaViolation, InvalidDefinition) as exc:
        _emit_error(args, exc.to_doc())
        return EXIT_INVALID
    if already:
        _println(args, {"already-imported": manifest.to_doc(), "item": ref.to_doc()},
                 f"already imported {manifest.name}@{manifest.version}")
    else:
        _println(args, {"imported": manifest.to_doc(), "item": ref.to_doc()},
                 f"imported {manifest.name}@{manifest.version} as {ref.name}")
    return EXIT_OK


def _cmd_export(args, store: EventStore) -> int:
    data = modules.export_bundle(store, args.name, args.version)
    args.output.write_bytes(data)
    _println(args, {"exported": args.name, "file": str(args.output)},
             f"exported {args.name}@{args.version} to {args.output}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        raw = args.bundle.read_bytes()
    except OSError as exc:
        _emit_error(args, {"error": "IOError", "message": str(exc)})
        return EXIT_IO
    try:
        bundle = modules.load_bundle_bytes(raw)
    except SchemaViolation as exc:
        _emit_error(args, exc.to_doc())
        return EXIT_INVALID
    manifest, problems = modules.validate_bundle(bundle)
    if problems:
        _emit(args, {"problems": problems, "valid": False},
              lambda doc, out: out.write(
                  "invalid bundle:\n"
                  + "".join(f"  {p['code']} at {p['path']}\n" for p in problems)
              ))
        return EXIT_INVALID
    _println(args, {"manifest": manifest.to_doc(), "valid": True},
             f"bundle ok: {manifest.name}@{manifest.version}")
    return EXIT_OK


def _cmd_remote(args) -> int:
    base = args.remote.rstrip("/")
    cmd = args.command
    if cmd == "items":
        params = []
        if args.type_filter:
            params.append(f"type={quote(args.type_filter)}")
        for name, value in _parse_props(args.prop):
            params.append(f"property.{quote(name)}={quote(str(value))}")
        url = f"{base}/items" + ("?" + "&".join(params) if params else "")
    elif cmd == "show":
        url = f"{base}/items/{quote(args.item, safe='')}"
    elif cmd == "history":
        url = f"{base}/items/{quote(args.item, safe='')}/events?from={args.from_seq}"
        if args.to_seq is not None:
            url += f"&to={args.to_seq}"
    elif cmd == "export":
        url = f"{base}/modules/{quote(args.name)}/{quote(args.version)}/bundle"
    else:
        _emit_error(args, {"error": "Usage", "message": f"{cmd} is not a remote command"})
        return EXIT_STATE
    try:
        with urllib.request.urlopen(url) as resp:
            data = resp.read()
    except urllib.error.HTTPError as exc:
        _emit_error(args, {"error": f"HTTP {exc.code}", "message": exc.read().decode("utf-8", "replace")})
        return EXIT_STATE
    except urllib.error.URLError as exc:
        _emit_error(args, {"error": "IOError", "message": str(exc.reason)})
        return EXIT_IO
    if cmd == "export":
        args.output.write_bytes(data)
        return EXIT_OK
    sys.stdout.buffer.write(data)  # verbatim: byte-equal to the HTTP body
    sys.stdout.buffer.flush()
    return EXIT_OK


def _parse_props(pairs: list[str]) -> list[tuple[str, str]]:
    out = []
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise DdsError(f"--prop wants NAME=VALUE, got {pair!r}")
        out.append((name, value))
    return out


# --- output ------------------------------------------------------------------


def _emit(args, doc, render_human) -> int:
    if args.format == "json":
        sys.stdout.buffer.write(canonical_bytes(doc) + b"\n")
        sys.stdout.buffer.flush()
    else:
        render_human(doc, sys.stdout)
    return EXIT_OK


def _println(args, doc, text: str) -> None:
    if args.format == "json":
        sys.stdout.buffer.write(canonical_bytes(doc) + b"\n")
        sys.stdout.buffer.flush()
    else:
        print(text)


def _emit_error(args, doc: dict) -> None:
    if args.format == "json":
        sys.stderr.buffer.write(canonical_bytes(doc) + b"\n")
        sys.stderr.buffer.flush()
    else:
        detail = doc.get("message", "")
        print(f"error: {doc.get('error')}: {detail}", file=sys.stderr)
        for v in doc.get("violations", []) or doc.get("defects", []):
            print(f"  {v}", file=sys.stderr)


def _render_items(doc, out) -> None:
    for entry in doc:
        out.write(f"{entry['name']}\t{entry['type']}\t{entry['uuid']}\n")


def _render_state(doc, out) -> None:
    out.write(f"{doc['ref']['name']} ({doc['ref']['uuid']})\n")
    out.write(f"  last event seq: {doc['last-event-seq']}\n")
    out.write("  properties:\n")
    for p in doc["properties"]:
        marker = "" if p["mutable"] else " [fixed]"
        out.write(f"    {p['name']} = {json.dumps(p['value'])}{marker}\n")
    if doc["collections"]:
        out.write("  collections:\n")
        for c in doc["collections"]:
            out.write(f"    {c['name']} ({c['def']['kind']}):\n")
            for m in c["members"]:
                out.write(f"      [{m['slot']}] {m['target']['name']}\n")
    if doc["viewpoints"]:
        out.write("  viewpoints:\n")
        for v in doc["viewpoints"]:
            out.write(f"    {v['schema-name']}/{v['view-name']} -> seq {v['seq']}\n")
    out.write("  enabled activities:\n")
    for path in doc["enabled"]:
        out.write(f"    {path}\n")


def _render_history(doc, out) -> None:
    for ev in doc:
        extra = ""
        if ev["state-before"] is not None:
            extra = f" {ev['state-before']}->{ev['state-after']}"
        if ev["predefined-step"] is not None:
            extra += f" [{ev['predefined-step']['kind']}]"
        out.write(f"{ev['seq']:4d}  {ev['transition']:<9} {ev['activity-path']}{extra}"
                  f"  by {ev['agent']['name']}\n")


def _render_provenance(doc, out) -> None:
    for ev in doc:
        out.write(f"{ev['seq']:4d}  {ev['transition']:<9} {ev['activity-path']}"
                  f"  by {ev['agent']}\n")
        if ev.get("branch") is not None:
            out.write(f"      branch: {json.dumps(ev['branch'])}\n")
        if ev["predefined-step"] is not None:
            step = ev["predefined-step"]
            out.write(f"      step {step['kind']}: {json.dumps(step['args'], sort_keys=True)}\n")
        if ev["outcome"] is not None:
            out.write(f"      outcome: {json.dumps(ev['outcome'], sort_keys=True)}\n")


if __name__ == "__main__":
    sys.exit(main())
