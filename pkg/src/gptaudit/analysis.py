"""Corpus-level measurements over a snapshot, plus CSV/JSON export."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .audit import AuditRecord, OutcomeKind
from .model import GptClass, classify
from .store import IoFailure, Snapshot

# export label for each top-level audit outcome
OUTCOME_LABELS = {
    OutcomeKind.ACCESSIBLE: "accessible",
    OutcomeKind.BROKEN_LINK: "broken",
    OutcomeKind.HOMEPAGE_ONLY: "homepage",
    OutcomeKind.TIMEOUT: "timeout",
    OutcomeKind.SERVER_ERROR: "server_error",
}


class InconsistentSnapshot(ValueError):
    pass


@dataclass(frozen=True)
class DomainCountDistribution:
    zero: int
    one: int
    two_plus: int
    per_app: dict[str, int] = field(default_factory=dict)

    def buckets(self) -> dict[str, int]:
        return {"0": self.zero, "1": self.one, "2+": self.two_plus}


@dataclass(frozen=True)
class AuditDistribution:
    accessible: int = 0
    broken: int = 0
    homepage: int = 0
    timeout: int = 0
    server_error: int = 0

    @property
    def total(self) -> int:
        return self.accessible + self.broken + self.homepage + self.timeout + self.server_error

    def as_dict(self) -> dict[str, int]:
        return {
            "accessible": self.accessible,
            "broken": self.broken,
            "homepage": self.homepage,
            "timeout": self.timeout,
            "server_error": self.server_error,
        }


def domain_count_distribution(s: Snapshot) -> DomainCountDistribution:
    panels = {str(p.gizmo_id): p for p in s.panels}
    per_app = {}
    for app in s.apps:
        panel = panels.get(str(app.gizmo_id))
        per_app[str(app.gizmo_id)] = len(panel.domains) if panel else 0
    counts = Counter(min(n, 2) for n in per_app.values())
    return DomainCountDistribution(counts[0], counts[1], counts[2], dict(sorted(per_app.items())))


def domain_frequency(s: Snapshot) -> list[tuple[str, int]]:
    """(domain, number of distinct apps declaring it), most used first, ties by name."""
    counts: Counter[str] = Counter()
    for panel in s.panels:
        counts.update(panel.domains)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def audit_distribution(records: Iterable[AuditRecord]) -> AuditDistribution:
    counts = Counter(OUTCOME_LABELS[r.outcome.kind] for r in records)
    return AuditDistribution(**counts)


def classification_distribution(s: Snapshot) -> dict[GptClass, int]:
    with_entries = {str(p.gizmo_id) for p in s.panels if p.entries}
    out = {c: 0 for c in GptClass}
    for app in s.apps:
        label = classify(app)
        if str(app.gizmo_id) in with_entries and label is not GptClass.ACTION_BASED:
            raise InconsistentSnapshot(f"{app.gizmo_id} declares third-party domains but has no actions")
        out[label] += 1
    return out


def _csv(header: tuple[str, str], rows: Iterable[tuple[object, object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _nonzero(rows: Iterable[tuple[str, int]]) -> list[tuple[str, int]]:
    return [(k, n) for k, n in rows if n]


def export_report(s: Snapshot, fmt: str, path: str | Path) -> list[Path]:
    """Write the four measurement files into directory ``path``; returns their paths."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    counts = domain_count_distribution(s)
    freq = domain_frequency(s)
    audits = audit_distribution(s.audits)
    classes = classification_distribution(s)

    if fmt == "csv":
        # zero-count rows are omitted, so an empty snapshot yields header-only files
        files = {
            "domain_count_distribution.csv": _csv(("bucket", "count"), _nonzero(counts.buckets().items())),
            "domain_frequency.csv": _csv(("domain", "app_count"), freq),
            "audit_distribution.csv": _csv(("outcome", "count"), _nonzero(audits.as_dict().items())),
            "classification.csv": _csv(("class", "count"), _nonzero((c.value, n) for c, n in classes.items())),
        }
    else:

        def dump(obj: object) -> str:
            return json.dumps(obj, indent=2) + "\n"

        files = {
            "domain_count_distribution.json": dump({"buckets": counts.buckets(), "per_app": counts.per_app}),
            "domain_frequency.json": dump([{"domain": d, "app_count": n} for d, n in freq]),
            "audit_distribution.json": dump(audits.as_dict()),
            "classification.json": dump({c.value: n for c, n in classes.items()}),
        }

    out_dir = Path(path)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            target = out_dir / name
            target.write_text(text, encoding="utf-8", newline="\n")
            written.append(target)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return written
