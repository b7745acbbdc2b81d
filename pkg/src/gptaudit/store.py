"""Snapshot persistence and change detection between snapshots.

Layout of one snapshot::

    root/<snapshot_id>/apps.jsonl
                       panels.jsonl
                       audits.jsonl
                       documents.jsonl
                       manifest.json

The manifest records per-file counts and SHA-256 digests; loading verifies them.
"""

from __future__ import annotations

import enum
import json
import os
import secrets
import shutil
import tempfile
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Mapping

from ._util import format_ts, json_line, jsonl_bytes, sha256_hex, utcnow
from .audit import AuditRecord, OutcomeKind, PolicyDocument
from .driver import PrivacyPanel
from .model import GizmoId, GptMetadata, classify

DATA_FILES = ("apps", "panels", "audits", "documents")
MANIFEST = "manifest.json"


class StoreError(Exception):
    pass


class IoFailure(StoreError):
    pass


class DuplicateSnapshotId(StoreError):
    pass


class SnapshotNotFound(StoreError):
    pass


class CorruptManifest(StoreError):
    def __init__(self, name: str, detail: str = "digest mismatch"):
        super().__init__(f"{name}: {detail}")
        self.name = name


class InvalidSnapshot(StoreError):
    pass


def new_snapshot_id(now: datetime | None = None) -> str:
    stamp = (now or utcnow()).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"{stamp}-{secrets.token_hex(2)}"


@dataclass(frozen=True)
class Snapshot:
    snapshot_id: str
    apps: tuple[GptMetadata, ...] = ()
    panels: tuple[PrivacyPanel, ...] = ()
    audits: tuple[AuditRecord, ...] = ()
    documents: tuple[PolicyDocument, ...] = ()
    partial: bool = False
    failures: tuple[str, ...] = ()

    def validate(self) -> None:
        ids = [a.gizmo_id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise InvalidSnapshot("duplicate gizmo_id among apps")
        known = set(ids)
        for panel in self.panels:
            if panel.gizmo_id not in known:
                raise InvalidSnapshot(f"panel for unknown app {panel.gizmo_id}")
        declared = {(p.gizmo_id, e) for p in self.panels for e in p.entries}
        for rec in self.audits:
            if (rec.gizmo_id, rec.entry) not in declared:
                raise InvalidSnapshot(f"audit for undeclared entry {rec.gizmo_id} {rec.entry.policy_url}")

    def app(self, gizmo_id: str) -> GptMetadata | None:
        for a in self.apps:
            if a.gizmo_id == gizmo_id:
                return a
        return None


def _rows(snapshot: Snapshot, name: str) -> list[dict[str, Any]]:
    return [item.to_dict() for item in getattr(snapshot, name)]


def write_snapshot(snapshot: Snapshot, root: str | Path) -> Path:
    """Write atomically: build in a temp dir beside the target, then rename."""
    snapshot.validate()
    root = Path(root)
    target = root / snapshot.snapshot_id
    if target.exists():
        raise DuplicateSnapshotId(snapshot.snapshot_id)
    try:
        root.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{snapshot.snapshot_id}.", dir=root))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        counts: dict[str, int] = {}
        digests: dict[str, str] = {}
        for name in DATA_FILES:
            rows = _rows(snapshot, name)
            payload = jsonl_bytes(rows)
            (tmp / f"{name}.jsonl").write_bytes(payload)
            counts[name] = len(rows)
            digests[name] = sha256_hex(payload)
        manifest = {
            "snapshot_id": snapshot.snapshot_id,
            "created_at": format_ts(utcnow()),
            "partial": snapshot.partial,
            "failures": list(snapshot.failures),
            "counts": counts,
            "digests": digests,
        }
        (tmp / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        for path in tmp.iterdir():
            with path.open("rb") as fh:
                os.fsync(fh.fileno())
        if target.exists():
            raise DuplicateSnapshotId(snapshot.snapshot_id)
        os.rename(tmp, target)
    except StoreError:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise IoFailure(str(exc)) from exc
    return target


def read_manifest(root: str | Path, snapshot_id: str) -> dict[str, Any]:
    path = Path(root) / snapshot_id / MANIFEST
    if not path.is_file():
        raise SnapshotNotFound(snapshot_id)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise CorruptManifest("manifest", f"unreadable ({exc})") from exc


def load_snapshot(root: str | Path, snapshot_id: str) -> Snapshot:
    manifest = read_manifest(root, snapshot_id)
    base = Path(root) / snapshot_id
    rows: dict[str, list[dict[str, Any]]] = {}
    for name in DATA_FILES:
        try:
            payload = (base / f"{name}.jsonl").read_bytes()
        except FileNotFoundError as exc:
            raise CorruptManifest(name, "file missing") from exc
        if sha256_hex(payload) != manifest.get("digests", {}).get(name):
            raise CorruptManifest(name)
        try:
            rows[name] = [json.loads(line) for line in payload.decode("utf-8").splitlines() if line]
        except ValueError as exc:
            raise CorruptManifest(name, f"unparseable ({exc})") from exc
        if len(rows[name]) != manifest["counts"].get(name):
            raise CorruptManifest(name, "row count mismatch")
    try:
        return Snapshot(
            snapshot_id=manifest["snapshot_id"],
            apps=tuple(GptMetadata.from_dict(r) for r in rows["apps"]),
            panels=tuple(PrivacyPanel.from_dict(r) for r in rows["panels"]),
            audits=tuple(AuditRecord.from_dict(r) for r in rows["audits"]),
            documents=tuple(PolicyDocument.from_dict(r) for r in rows["documents"]),
            partial=bool(manifest.get("partial", False)),
            failures=tuple(manifest.get("failures", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest("manifest", f"records do not match manifest ({exc})") from exc


def list_snapshots(root: str | Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / MANIFEST).is_file())


# diffing ----------------------------------------------------------------


class ChangeKind(str, enum.Enum):
    # declaration order is the sort order within one app
    DOMAIN_ADDED = "domain_added"
    DOMAIN_REMOVED = "domain_removed"
    POLICY_URL_CHANGED = "policy_url_changed"
    POLICY_TEXT_CHANGED = "policy_text_changed"
    APP_ADDED = "app_added"
    APP_REMOVED = "app_removed"
    CLASS_CHANGED = "class_changed"


_KIND_ORDER = {k: i for i, k in enumerate(ChangeKind)}
_MIRROR = {
    ChangeKind.APP_ADDED: ChangeKind.APP_REMOVED,
    ChangeKind.APP_REMOVED: ChangeKind.APP_ADDED,
    ChangeKind.DOMAIN_ADDED: ChangeKind.DOMAIN_REMOVED,
    ChangeKind.DOMAIN_REMOVED: ChangeKind.DOMAIN_ADDED,
}


@dataclass(frozen=True)
class ChangeEvent:
    """One change for one app.

    ``before``/``after`` by kind: app events carry the app name; class events
    the class label; domain events the sorted policy URLs declared for that
    domain; URL changes the sorted URL tuples; text changes
    ``(url, content_hash)``.
    """

    kind: ChangeKind
    gizmo_id: GizmoId
    domain: str | None = None
    before: Any = None
    after: Any = None

    def __post_init__(self) -> None:
        if self.kind.value.endswith("_changed") and self.before == self.after:
            raise ValueError(f"{self.kind.value} needs differing before/after")
        if self.kind in (ChangeKind.APP_ADDED, ChangeKind.DOMAIN_ADDED) and self.after is None:
            raise ValueError(f"{self.kind.value} needs an after value")
        if self.kind in (ChangeKind.APP_REMOVED, ChangeKind.DOMAIN_REMOVED) and self.before is None:
            raise ValueError(f"{self.kind.value} needs a before value")
        if self.kind.value.startswith(("domain", "policy")) and not self.domain:
            raise ValueError(f"{self.kind.value} needs a domain")

    def sort_key(self) -> tuple:
        return (str(self.gizmo_id), _KIND_ORDER[self.kind], self.domain or "", repr(self.before), repr(self.after))

    def mirrored(self) -> "ChangeEvent":
        return ChangeEvent(_MIRROR.get(self.kind, self.kind), self.gizmo_id, self.domain, self.after, self.before)

    def to_dict(self) -> dict[str, Any]:
        def plain(v: Any) -> Any:
            return list(v) if isinstance(v, tuple) else v

        return {
            "kind": self.kind.value,
            "gizmo_id": str(self.gizmo_id),
            "domain": self.domain,
            "before": plain(self.before),
            "after": plain(self.after),
        }


@dataclass(frozen=True)
class SnapshotDiff:
    from_id: str
    to_id: str
    events: tuple[ChangeEvent, ...]

    def __bool__(self) -> bool:
        return bool(self.events)

    def to_jsonl(self) -> str:
        return "".join(json_line(e.to_dict()) + "\n" for e in self.events)


def _urls_by_domain(panel: PrivacyPanel | None) -> dict[str, tuple[str, ...]]:
    out: dict[str, set[str]] = {}
    for entry in panel.entries if panel else ():
        out.setdefault(entry.domain, set()).add(entry.policy_url)
    return {d: tuple(sorted(urls)) for d, urls in out.items()}


def _accessible_hashes(audits: Iterable[AuditRecord]) -> dict[tuple[str, str, str], str]:
    return {
        (str(r.gizmo_id), r.entry.domain, r.entry.policy_url): r.content_hash
        for r in audits
        if r.outcome.kind is OutcomeKind.ACCESSIBLE and r.content_hash is not None
    }


def diff_snapshots(a: Snapshot, b: Snapshot) -> SnapshotDiff:
    apps_a = {str(m.gizmo_id): m for m in a.apps}
    apps_b = {str(m.gizmo_id): m for m in b.apps}
    panels_a = {str(p.gizmo_id): p for p in a.panels}
    panels_b = {str(p.gizmo_id): p for p in b.panels}
    hashes_a = _accessible_hashes(a.audits)
    hashes_b = _accessible_hashes(b.audits)

    events: list[ChangeEvent] = []
    for gid in sorted(apps_a.keys() | apps_b.keys()):
        gizmo = GizmoId(gid)
        if gid not in apps_a:
            events.append(ChangeEvent(ChangeKind.APP_ADDED, gizmo, after=apps_b[gid].name))
            continue
        if gid not in apps_b:
            events.append(ChangeEvent(ChangeKind.APP_REMOVED, gizmo, before=apps_a[gid].name))
            continue
        cls_a, cls_b = classify(apps_a[gid]), classify(apps_b[gid])
        if cls_a != cls_b:
            events.append(ChangeEvent(ChangeKind.CLASS_CHANGED, gizmo, before=cls_a.value, after=cls_b.value))
        urls_a = _urls_by_domain(panels_a.get(gid))
        urls_b = _urls_by_domain(panels_b.get(gid))
        for domain in sorted(urls_b.keys() - urls_a.keys()):
            events.append(ChangeEvent(ChangeKind.DOMAIN_ADDED, gizmo, domain, after=urls_b[domain]))
        for domain in sorted(urls_a.keys() - urls_b.keys()):
            events.append(ChangeEvent(ChangeKind.DOMAIN_REMOVED, gizmo, domain, before=urls_a[domain]))
        for domain in sorted(urls_a.keys() & urls_b.keys()):
            if urls_a[domain] != urls_b[domain]:
                events.append(
                    ChangeEvent(ChangeKind.POLICY_URL_CHANGED, gizmo, domain, urls_a[domain], urls_b[domain])
                )
            for url in sorted(set(urls_a[domain]) & set(urls_b[domain])):
                ha = hashes_a.get((gid, domain, url))
                hb = hashes_b.get((gid, domain, url))
                if ha and hb and ha != hb:
                    events.append(ChangeEvent(ChangeKind.POLICY_TEXT_CHANGED, gizmo, domain, (url, ha), (url, hb)))
    events.sort(key=ChangeEvent.sort_key)
    return SnapshotDiff(a.snapshot_id, b.snapshot_id, tuple(events))
