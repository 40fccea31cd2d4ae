"""Command-line face of the engine; subcommands mirror the HTTP API 1:1 and
print the same JSON the API returns. Exit codes: 0 success, 1 engine error,
2 usage error."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import load_config
from .engine import Engine
from .errors import EngineError


def _dump(obj) -> str:
    # Same serialization FastAPI uses for response bodies.
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _echo(obj) -> None:
    click.echo(_dump(obj))


def _engine(ctx: click.Context) -> Engine:
    return Engine(load_config(ctx.obj["config"]))


def _read_payload(text: str | None, file: str | None) -> dict:
    if (text is None) == (file is None):
        raise click.UsageError("provide exactly one of --json or --file")
    if file is not None:
        raw = sys.stdin.read() if file == "-" else Path(file).read_text(encoding="utf-8")
    else:
        raw = text
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"payload is not valid JSON: {exc.msg}")


def _parse_params(pairs: tuple[str, ...]) -> dict:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--param needs key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    return params


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="engine config file")
@click.pass_context
def cli(ctx, config_path):
    """Metadata-driven evolvable data warehouse engine."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config_path


@cli.group()
def source():
    """Manage source wrappers."""


@source.command("register")
@click.option("--json", "text", default=None, help="source descriptor JSON")
@click.option("--file", "file", default=None, help="descriptor file ('-' for stdin)")
@click.pass_context
def source_register(ctx, text, file):
    _echo(_engine(ctx).register_source(_read_payload(text, file)).to_doc())


@source.command("list")
@click.pass_context
def source_list(ctx):
    _echo(_engine(ctx).list_sources())


@cli.command()
@click.option("--source", "source_id", required=True)
@click.option("--file", "file", required=True, help="batch payload file ('-' for stdin)")
@click.pass_context
def ingest(ctx, source_id, file):
    """Load one raw batch into level 0."""
    data = sys.stdin.buffer.read() if file == "-" else Path(file).read_bytes()
    _echo(_engine(ctx).ingest(source_id, data))


@cli.command()
@click.pass_context
def tick(ctx):
    """Advance the ELT scheduler by one tick."""
    _echo(_engine(ctx).tick())


@cli.group()
def level():
    """Inspect highway levels."""


@level.command("datasets")
@click.argument("n", type=int)
@click.pass_context
def level_datasets(ctx, n):
    _echo(_engine(ctx).level_datasets(n))


@level.command("records")
@click.argument("n", type=int)
@click.argument("dataset_id")
@click.option("--table", default=None, help="star dimension table name")
@click.pass_context
def level_records(ctx, n, dataset_id, table):
    _echo(_engine(ctx).dataset_records(n, dataset_id, table))


@cli.group()
def changes():
    """Detected source changes."""


@changes.command("list")
@click.option("--status", default=None)
@click.pass_context
def changes_list(ctx, status):
    _echo(_engine(ctx).list_changes(status))


@changes.command("propose")
@click.argument("change_id")
@click.pass_context
def changes_propose(ctx, change_id):
    _echo(_engine(ctx).propose(change_id))


@cli.group()
def options():
    """Generated adaptation options."""


@options.command("list")
@click.argument("change_id")
@click.pass_context
def options_list(ctx, change_id):
    _echo(_engine(ctx).options_for_change(change_id))


@options.command("preview")
@click.argument("pc_id")
@click.pass_context
def options_preview(ctx, pc_id):
    _echo(_engine(ctx).preview(pc_id))


@cli.command()
@click.option("--change", "change_id", required=True)
@click.option("--option", "pc_id", required=True)
@click.option("--param", "params", multiple=True, help="key=value (value parsed as JSON when possible)")
@click.option("--actor", default="developer")
@click.pass_context
def apply(ctx, change_id, pc_id, params, actor):
    """Apply the chosen adaptation option."""
    engine = _engine(ctx)
    pc = engine.store.get_potential_change(pc_id)
    expected = pc.change_id if pc.change_id is not None else "none"
    if change_id != expected:
        raise EngineError("NOT_FOUND", f"option {pc_id} does not belong to change {change_id}")
    _echo(engine.apply(pc_id, _parse_params(params), actor))


@cli.command()
@click.option("--option", "pc_id", required=True)
@click.option("--actor", default="developer")
@click.pass_context
def reject(ctx, pc_id, actor):
    """Reject one proposed option."""
    _echo(_engine(ctx).reject(pc_id, actor))


@cli.group()
def cube():
    """Cube definitions and OLAP operations."""


@cube.command("create")
@click.option("--json", "text", default=None)
@click.option("--file", "file", default=None)
@click.pass_context
def cube_create(ctx, text, file):
    _echo(_engine(ctx).create_cube(_read_payload(text, file)))


@cube.command("materialize")
@click.argument("cube_id")
@click.pass_context
def cube_materialize(ctx, cube_id):
    _echo(_engine(ctx).materialize(cube_id))


@cube.command("navigate")
@click.argument("cube_id")
@click.option("--json", "text", default=None)
@click.option("--file", "file", default=None)
@click.pass_context
def cube_navigate(ctx, cube_id, text, file):
    _echo(_engine(ctx).navigate(cube_id, _read_payload(text, file)))


@cli.command()
@click.argument("cube_id")
@click.option("--json", "text", default=None)
@click.option("--file", "file", default=None)
@click.pass_context
def query(ctx, cube_id, text, file):
    """Run one cube query."""
    _echo(_engine(ctx).query(cube_id, _read_payload(text, file)))


@cli.command()
@click.option("--out", "out", default=None, help="write the document to a file instead of stdout")
@click.pass_context
def export(ctx, out):
    """Export the full metadata document."""
    data = _engine(ctx).export_bytes()
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)


@cli.command("import")
@click.option("--file", "file", required=True, help="metadata document ('-' for stdin)")
@click.pass_context
def import_(ctx, file):
    """Replace the metastore with a metadata document."""
    raw = sys.stdin.buffer.read() if file == "-" else Path(file).read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise EngineError("MALFORMED_DOCUMENT", f"not JSON: {exc.msg}")
    _echo({"loaded": _engine(ctx).import_document(doc)})


@cli.command()
@click.pass_context
def history(ctx):
    """Chosen changes that were actually implemented."""
    _echo(_engine(ctx).history())


@cli.command()
@click.argument("cube_id")
@click.option("--json", "text", default=None)
@click.option("--file", "file", default=None)
@click.option("--out", "out_dir", required=True, help="directory for the CSV and chart")
@click.option("--name", default="report", help="base file name")
@click.pass_context
def report(ctx, cube_id, text, file, out_dir, name):
    """Run a cube query and render it as CSV plus a PNG chart."""
    from .report import render_report

    engine = _engine(ctx)
    spec = _read_payload(text, file)
    result = engine.query(cube_id, spec)
    paths = render_report(result, spec, Path(out_dir), name)
    _echo({"rows": len(result["rows"]), "files": [str(p) for p in paths]})


@cli.command()
@click.pass_context
def serve(ctx):
    """Run the HTTP API."""
    from .api import serve as run_server

    run_server(_engine(ctx))


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
        return 0
    except EngineError as exc:
        click.echo(_dump({"error": {"code": exc.code, "message": exc.message}}))
        return 1
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.exceptions.Abort:
        return 2


if __name__ == "__main__":
    sys.exit(main())
