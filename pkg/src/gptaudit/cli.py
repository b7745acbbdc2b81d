"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 diff found changes.
Structured output goes to stdout as JSON Lines; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Sequence
from urllib.parse import urlsplit

import httpx

from ._util import json_line
from .analysis import export_report
from .audit import Auditor, AuditPolicy, Resolver, StaticResolver, SystemResolver
from .driver import DEFAULT_RATE_LIMIT, NativeUiDriver, PrivacyEntry, SimulatedDriver
from .fixture import REFERENCE_CORPUS, CorpusConfig, FixtureServer, InconsistentConfig, generate_corpus
from .model import DEFAULT_BASE_URL
from .pipeline import crawl, ingest
from .store import StoreError, diff_snapshots, load_snapshot

log = logging.getLogger("gptaudit")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
EXIT_CHANGES = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags with suppressed defaults so values
    # given before the subcommand are not overwritten
    def default(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--base-url", default=default(DEFAULT_BASE_URL), help="store base URL")
    common.add_argument("--snapshot-root", default=default(Path("snapshots")), type=Path, help="snapshot directory")
    common.add_argument("--timeout-secs", default=default(10.0), type=float, help="per-attempt policy fetch timeout")
    common.add_argument("--parallelism", default=default(8), type=_positive_int, help="concurrent fetches")
    common.add_argument("--seed", type=int, default=default(None), help="corpus seed for serve-fixture")
    common.add_argument("-v", "--verbose", action="count", default=default(0))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)

    audit_flags = argparse.ArgumentParser(add_help=False)
    audit_flags.add_argument("--max-redirects", type=int, default=10)
    audit_flags.add_argument("--per-host", type=_positive_int, default=2, help="concurrent fetches per host")
    audit_flags.add_argument(
        "--fixture-dns",
        action="store_true",
        help="resolve policy hosts through the fixture store at --base-url instead of system DNS",
    )

    parser = _Parser(prog="gptaudit", description="Collect privacy panels from an app store, audit the declared policy links, and track changes.", parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate a metadata JSON Lines file")
    p.add_argument("path", type=Path)

    p = sub.add_parser("crawl", parents=[common, audit_flags], help="collect panels, audit links, write a snapshot")
    p.add_argument("path", type=Path, help="metadata JSON Lines file")
    p.add_argument("--driver", choices=("simulated", "native"), default="simulated")
    p.add_argument("--rate-limit", type=float, default=DEFAULT_RATE_LIMIT, help="store requests per second")

    p = sub.add_parser("audit", parents=[common, audit_flags], help="audit policy URLs or a snapshot's links")
    p.add_argument("urls", nargs="*")
    p.add_argument("--snapshot", help="re-audit every entry of this snapshot")

    p = sub.add_parser("report", parents=[common], help="export measurements for a snapshot")
    p.add_argument("snapshot_id")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: <snapshot>/report)")

    p = sub.add_parser("diff", parents=[common], help="list change events between two snapshots")
    p.add_argument("from_id")
    p.add_argument("to_id")

    p = sub.add_parser("serve-fixture", parents=[common], help="run the deterministic fixture store")
    p.add_argument("--config", type=Path, default=None, help="CorpusConfig JSON (default: reference corpus)")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--write-apps", type=Path, default=None, help="also write the corpus metadata JSON Lines here")
    return parser


def _audit_policy(args: argparse.Namespace) -> AuditPolicy:
    try:
        return AuditPolicy(
            timeout_secs=args.timeout_secs,
            max_redirects=args.max_redirects,
            parallelism=args.parallelism,
            per_host=args.per_host,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _resolver(args: argparse.Namespace) -> Resolver:
    if not args.fixture_dns:
        return SystemResolver()
    resp = httpx.get(f"{args.base_url.rstrip('/')}/_fixture/hosts", timeout=args.timeout_secs)
    resp.raise_for_status()
    address = urlsplit(args.base_url).netloc
    return StaticResolver({host: address for host in resp.json()["hosts"]})


def cmd_ingest(args: argparse.Namespace) -> int:
    result = ingest(args.path)
    for err in result.errors:
        print(f"{args.path}: {err}", file=sys.stderr)
    print(json_line(result.summary()))
    return EXIT_OK if not result.errors else EXIT_FAILURE


def cmd_crawl(args: argparse.Namespace) -> int:
    result = ingest(args.path)
    if result.errors:
        for err in result.errors:
            print(f"{args.path}: {err}", file=sys.stderr)
        print(f"{len(result.errors)} invalid metadata records; nothing crawled", file=sys.stderr)
        return EXIT_FAILURE
    if args.driver == "native":
        driver = NativeUiDriver(args.base_url)
    else:
        driver = SimulatedDriver(args.base_url, rate_limit=args.rate_limit, timeout=args.timeout_secs)
    with Auditor(_audit_policy(args), _resolver(args)) as auditor:
        outcome = crawl(result.apps, driver, auditor, args.snapshot_root, args.parallelism)
    if isinstance(driver, SimulatedDriver):
        driver.close()
    manifest = json.loads((outcome.location / "manifest.json").read_text(encoding="utf-8"))
    print(json_line({k: manifest[k] for k in ("snapshot_id", "partial", "counts")}))
    for line in manifest["failures"]:
        print(f"crawl failure: {line}", file=sys.stderr)
    return EXIT_FAILURE if outcome.transport_failed else EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    if bool(args.urls) == bool(args.snapshot):
        raise UsageError("give either policy URLs or --snapshot")
    with Auditor(_audit_policy(args), _resolver(args)) as auditor:
        if args.snapshot:
            snap = load_snapshot(args.snapshot_root, args.snapshot)
            records = auditor.run(snap.panels).records
        else:
            records = []
            for url in args.urls:
                host = urlsplit(url).hostname
                if not host:
                    raise UsageError(f"not an absolute URL: {url}")
                try:
                    entry = PrivacyEntry.declared(host, url)
                except ValueError as exc:
                    raise UsageError(str(exc)) from exc
                records.append(auditor.audit_link(entry))
    for rec in records:
        print(json_line(rec.to_dict()))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    snap = load_snapshot(args.snapshot_root, args.snapshot_id)
    out = args.out or (args.snapshot_root / args.snapshot_id / "report")
    written = export_report(snap, args.format, out)
    print(json_line({"snapshot_id": snap.snapshot_id, "files": [str(p) for p in written]}))
    return EXIT_OK


def cmd_diff(args: argparse.Namespace) -> int:
    a = load_snapshot(args.snapshot_root, args.from_id)
    b = load_snapshot(args.snapshot_root, args.to_id)
    diff = diff_snapshots(a, b)
    sys.stdout.write(diff.to_jsonl())
    return EXIT_CHANGES if diff.events else EXIT_OK


def cmd_serve_fixture(args: argparse.Namespace) -> int:
    config = CorpusConfig.load(args.config) if args.config else REFERENCE_CORPUS
    if args.seed is not None:
        config = CorpusConfig.from_dict({**config.to_dict(), "seed": args.seed})
    corpus = generate_corpus(config)
    if args.write_apps:
        args.write_apps.write_bytes(corpus.apps_jsonl())
    server = FixtureServer(corpus, port=args.port).start()
    print(json_line({"endpoint": server.address, "base_url": server.base_url, "apps": len(corpus.apps)}), flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "crawl": cmd_crawl,
    "audit": cmd_audit,
    "report": cmd_report,
    "diff": cmd_diff,
    "serve-fixture": cmd_serve_fixture,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help and on usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gptaudit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotImplementedError as exc:
        print(f"gptaudit: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (StoreError, InconsistentConfig, OSError, httpx.HTTPError, ValueError) as exc:
        print(f"gptaudit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
