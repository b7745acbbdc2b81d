"""Ingest metadata, collect privacy panels, audit their links, snapshot the result."""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .audit import Auditor
from .driver import DriverError, PrivacyPanel, StoreDriver, TransportFailure
from .model import GptClass, GptMetadata, MetadataError, classify
from .store import Snapshot, new_snapshot_id, write_snapshot

log = logging.getLogger(__name__)


class IngestError(ValueError):
    def __init__(self, line: int, message: str, field: str | None = None):
        where = f"line {line}" + (f", field {field!r}" if field else "")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.field = field


class ParseFailure(IngestError):
    pass


class ValidationFailure(IngestError):
    pass


@dataclass
class IngestResult:
    apps: list[GptMetadata] = field(default_factory=list)
    errors: list[IngestError] = field(default_factory=list)

    def class_counts(self) -> dict[str, int]:
        counts = Counter(classify(a) for a in self.apps)
        return {c.value: counts[c] for c in GptClass}

    def summary(self) -> dict:
        return {"ingested": len(self.apps), "rejected": len(self.errors), "classes": self.class_counts()}


def ingest_lines(lines: Iterable[str]) -> IngestResult:
    result = IngestResult()
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except ValueError as exc:
            result.errors.append(ParseFailure(lineno, f"invalid JSON ({exc.msg})"))
            continue
        try:
            meta = GptMetadata.from_dict(raw)
        except MetadataError as exc:
            result.errors.append(ValidationFailure(lineno, str(exc), exc.field))
            continue
        if meta.gizmo_id in seen:
            result.errors.append(ValidationFailure(lineno, "duplicate gizmo_id", "gizmo_id"))
            continue
        seen.add(meta.gizmo_id)
        result.apps.append(meta)
    return result


def ingest(path: str | Path) -> IngestResult:
    with open(path, encoding="utf-8") as fh:
        return ingest_lines(fh)


@dataclass
class CrawlResult:
    snapshot: Snapshot
    location: Path | None
    failures: dict[str, DriverError]

    @property
    def transport_failed(self) -> bool:
        return any(isinstance(e, TransportFailure) for e in self.failures.values())


def collect_panels(
    apps: Iterable[GptMetadata], driver: StoreDriver, parallelism: int = 8
) -> tuple[list[PrivacyPanel], dict[str, DriverError]]:
    apps = list(apps)
    failures: dict[str, DriverError] = {}

    def fetch(meta: GptMetadata) -> PrivacyPanel | None:
        try:
            return driver.fetch_privacy_panel(meta.gizmo_id)
        except DriverError as exc:
            log.warning("%s (%s): %s: %s", meta.gizmo_id, meta.name, type(exc).__name__, exc)
            failures[str(meta.gizmo_id)] = exc
            return None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        panels = [p for p in pool.map(fetch, apps) if p is not None]
    return panels, failures


def crawl(
    apps: Iterable[GptMetadata],
    driver: StoreDriver,
    auditor: Auditor,
    snapshot_root: str | Path | None,
    parallelism: int = 8,
    snapshot_id: str | None = None,
) -> CrawlResult:
    """Fetch every app's panel, audit all entries and write one snapshot.

    Apps whose panel could not be fetched are kept in the snapshot without a
    panel, and the snapshot is marked partial.
    """
    apps = sorted(apps, key=lambda a: str(a.gizmo_id))
    panels, failures = collect_panels(apps, driver, parallelism)
    audited = auditor.run(panels)
    snapshot = Snapshot(
        snapshot_id=snapshot_id or new_snapshot_id(),
        apps=tuple(apps),
        panels=tuple(sorted(panels, key=lambda p: str(p.gizmo_id))),
        audits=tuple(audited.records),
        documents=tuple(audited.documents),
        partial=bool(failures),
        failures=tuple(f"{gid}: {type(exc).__name__}: {exc}" for gid, exc in sorted(failures.items())),
    )
    location = write_snapshot(snapshot, snapshot_root) if snapshot_root is not None else None
    return CrawlResult(snapshot, location, failures)
