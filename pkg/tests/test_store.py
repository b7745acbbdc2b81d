import json
import random
import re
from datetime import datetime, timezone

import pytest

from gptaudit.audit import ACCESSIBLE, AuditRecord, client_error
from gptaudit.driver import PrivacyEntry, PrivacyPanel
from gptaudit.model import ActionSpec, GizmoId, GptMetadata, KnowledgeFile
from gptaudit.store import (
    ChangeEvent,
    ChangeKind,
    CorruptManifest,
    DuplicateSnapshotId,
    InvalidSnapshot,
    Snapshot,
    SnapshotNotFound,
    diff_snapshots,
    list_snapshots,
    load_snapshot,
    new_snapshot_id,
    read_manifest,
    write_snapshot,
)

from helpers import implementation_events, make_snapshot, oracle_events, random_pair, random_spec

T0 = datetime(2025, 3, 1, 12, 0, tzinfo=timezone.utc)
GID = GizmoId("1abcD2EFG")
JOBRIGHT = PrivacyEntry("swan-api.jobright.ai", "https://jobright.ai/privacy")
WEBPILOT = PrivacyEntry("gpts.webpilot.ai", "https://gpts.webpilot.ai/privacy")


def one_app(sid, entries, hashes=None, knowledge=None):
    app = GptMetadata(
        GID, "Job Helper", "Find jobs.",
        knowledge=knowledge,
        actions=tuple(ActionSpec(e.domain, e.policy_url) for e in entries) or None,
    )
    hashes = hashes or {}
    audits = tuple(
        AuditRecord(GID, e, ACCESSIBLE, e.policy_url, 200, hashes.get(e, "a" * 64), T0, 10) for e in entries
    )
    return Snapshot(sid, (app,), (PrivacyPanel(GID, tuple(entries), T0),), audits)


def test_snapshot_id_shape():
    sid = new_snapshot_id(T0)
    assert re.fullmatch(r"2025-03-01T12:00:00Z-[0-9a-f]{4}", sid)
    assert len({new_snapshot_id(T0) for _ in range(50)}) > 1


def test_round_trip_examples(tmp_path):
    s = one_app("S1", [WEBPILOT, JOBRIGHT])
    loc = write_snapshot(s, tmp_path)
    assert loc == tmp_path / "S1"
    assert load_snapshot(tmp_path, "S1") == s
    assert list_snapshots(tmp_path) == ["S1"]


@pytest.mark.parametrize("seed", range(20))
def test_round_trip_random(tmp_path, seed):
    rng = random.Random(seed)
    s = make_snapshot(f"R{seed}", random_spec(rng, rng.randrange(15)), rng)
    write_snapshot(s, tmp_path)
    assert load_snapshot(tmp_path, s.snapshot_id) == s


def test_empty_snapshot(tmp_path):
    write_snapshot(Snapshot("E"), tmp_path)
    for name in ("apps", "panels", "audits", "documents"):
        assert (tmp_path / "E" / f"{name}.jsonl").read_bytes() == b""
    manifest = read_manifest(tmp_path, "E")
    assert manifest["counts"] == {"apps": 0, "panels": 0, "audits": 0, "documents": 0}
    assert load_snapshot(tmp_path, "E") == Snapshot("E")


def test_manifest_counts_and_digests(tmp_path):
    import hashlib

    s = one_app("M", [WEBPILOT, JOBRIGHT])
    write_snapshot(s, tmp_path)
    m = read_manifest(tmp_path, "M")
    assert m["counts"] == {"apps": 1, "panels": 1, "audits": 2, "documents": 0}
    assert m["digests"]["audits"] == hashlib.sha256((tmp_path / "M" / "audits.jsonl").read_bytes()).hexdigest()
    lines = (tmp_path / "M" / "audits.jsonl").read_text().splitlines()
    assert list(json.loads(lines[0]))[1:4] == ["entry_domain", "policy_url", "outcome"]


def test_missing_snapshot(tmp_path):
    with pytest.raises(SnapshotNotFound):
        load_snapshot(tmp_path, "nope")


@pytest.mark.parametrize("name", ["apps", "panels", "audits"])
def test_single_byte_corruption_names_file(tmp_path, name):
    write_snapshot(one_app("C", [WEBPILOT]), tmp_path)
    path = tmp_path / "C" / f"{name}.jsonl"
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptManifest) as exc:
        load_snapshot(tmp_path, "C")
    assert exc.value.name == name


def test_missing_data_file_names_file(tmp_path):
    write_snapshot(one_app("C", [WEBPILOT]), tmp_path)
    (tmp_path / "C" / "documents.jsonl").unlink()
    with pytest.raises(CorruptManifest) as exc:
        load_snapshot(tmp_path, "C")
    assert exc.value.name == "documents"


def test_duplicate_id_and_no_leftovers(tmp_path):
    write_snapshot(one_app("D", [WEBPILOT]), tmp_path)
    with pytest.raises(DuplicateSnapshotId):
        write_snapshot(one_app("D", []), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["D"]
    assert load_snapshot(tmp_path, "D") == one_app("D", [WEBPILOT])


def test_invalid_snapshots_rejected(tmp_path):
    app = one_app("X", [WEBPILOT])
    with pytest.raises(InvalidSnapshot):
        write_snapshot(Snapshot("X", app.apps * 2), tmp_path)
    with pytest.raises(InvalidSnapshot):
        write_snapshot(Snapshot("X", (), app.panels), tmp_path)
    with pytest.raises(InvalidSnapshot):
        write_snapshot(Snapshot("X", app.apps, (PrivacyPanel(GID, ()),), app.audits), tmp_path)
    assert list(tmp_path.iterdir()) == []


def test_partial_flag_persists(tmp_path):
    s = Snapshot("P", partial=True, failures=("1abcD2EFG: transport failure",))
    write_snapshot(s, tmp_path)
    assert read_manifest(tmp_path, "P")["partial"] is True
    assert load_snapshot(tmp_path, "P") == s


# diff ---------------------------------------------------------------------


def test_diff_identity():
    s = one_app("A", [WEBPILOT, JOBRIGHT])
    assert diff_snapshots(s, s).events == ()
    assert not diff_snapshots(s, s)


def test_diff_domain_added():
    d = diff_snapshots(one_app("A", [WEBPILOT]), one_app("B", [WEBPILOT, JOBRIGHT]))
    assert [(e.kind, e.domain) for e in d.events] == [(ChangeKind.DOMAIN_ADDED, "swan-api.jobright.ai")]
    assert d.events[0].after == ("https://jobright.ai/privacy",)


def test_diff_policy_text_changed():
    a = one_app("A", [WEBPILOT], {WEBPILOT: "a" * 64})
    b = one_app("B", [WEBPILOT], {WEBPILOT: "b" * 64})
    (ev,) = diff_snapshots(a, b).events
    assert ev.kind is ChangeKind.POLICY_TEXT_CHANGED
    assert ev.before == (WEBPILOT.policy_url, "a" * 64) and ev.after == (WEBPILOT.policy_url, "b" * 64)


def test_diff_url_changed_and_no_event_for_outcome_flip():
    moved = PrivacyEntry(WEBPILOT.domain, "https://gpts.webpilot.ai/legal")
    (ev,) = diff_snapshots(one_app("A", [WEBPILOT]), one_app("B", [moved])).events
    assert ev.kind is ChangeKind.POLICY_URL_CHANGED
    a = one_app("A", [WEBPILOT])
    flipped = Snapshot("B", a.apps, a.panels, (AuditRecord(GID, WEBPILOT, client_error(404), WEBPILOT.policy_url, 404, None, T0, 5),))
    assert diff_snapshots(a, flipped).events == ()


def test_diff_app_added_is_single_event():
    b = one_app("B", [WEBPILOT, JOBRIGHT])
    d = diff_snapshots(Snapshot("A"), b)
    assert [e.kind for e in d.events] == [ChangeKind.APP_ADDED]


def test_diff_class_changed():
    a = one_app("A", [])
    b = one_app("B", [], knowledge=(KnowledgeFile("cv.pdf", 100),))
    (ev,) = diff_snapshots(a, b).events
    assert (ev.kind, ev.before, ev.after) == (ChangeKind.CLASS_CHANGED, "prompt_based", "knowledge_based")


def test_change_event_invariants():
    with pytest.raises(ValueError):
        ChangeEvent(ChangeKind.CLASS_CHANGED, GID, before="x", after="x")
    with pytest.raises(ValueError):
        ChangeEvent(ChangeKind.DOMAIN_ADDED, GID, "a.test")
    with pytest.raises(ValueError):
        ChangeEvent(ChangeKind.DOMAIN_REMOVED, GID, None, before=("u",))


def test_diff_ordering_and_jsonl():
    a, b = random_pair(3)
    d = diff_snapshots(a, b)
    assert list(d.events) == sorted(d.events, key=ChangeEvent.sort_key)
    lines = d.to_jsonl().splitlines()
    assert len(lines) == len(d.events)
    assert all(list(json.loads(x)) == ["kind", "gizmo_id", "domain", "before", "after"] for x in lines)


@pytest.mark.parametrize("seed", range(40))
def test_diff_matches_oracle(seed):
    a, b = random_pair(seed)
    assert implementation_events(diff_snapshots(a, b)) == oracle_events(a, b)


@pytest.mark.parametrize("seed", range(40))
def test_diff_antisymmetry(seed):
    a, b = random_pair(seed)
    forward = diff_snapshots(a, b).events
    backward = diff_snapshots(b, a).events
    assert sorted((e.mirrored() for e in forward), key=ChangeEvent.sort_key) == list(backward)
    for kind, twin in [(ChangeKind.DOMAIN_ADDED, ChangeKind.DOMAIN_REMOVED), (ChangeKind.APP_ADDED, ChangeKind.APP_REMOVED)]:
        assert sum(e.kind is kind for e in forward) == sum(e.kind is twin for e in backward)


def domain_set(s, gid):
    return {e.domain for p in s.panels if p.gizmo_id == gid for e in p.entries}


def apply_domain_events(domains, diff, gid):
    out = set(domains)
    for e in diff.events:
        if e.gizmo_id != gid:
            continue
        if e.kind is ChangeKind.DOMAIN_ADDED:
            out.add(e.domain)
        elif e.kind is ChangeKind.DOMAIN_REMOVED:
            out.discard(e.domain)
    return out


@pytest.mark.parametrize("seed", range(30))
def test_diff_composes_on_domains(seed):
    from helpers import DOMAINS

    rng = random.Random(seed)

    def snap(sid):
        ds = rng.sample(DOMAINS, rng.randrange(len(DOMAINS)))
        return one_app(sid, [PrivacyEntry(d, f"https://{d}/privacy") for d in ds])

    a, b, c = snap("A"), snap("B"), snap("C")
    via_b = apply_domain_events(apply_domain_events(domain_set(a, GID), diff_snapshots(a, b), GID), diff_snapshots(b, c), GID)
    direct = apply_domain_events(domain_set(a, GID), diff_snapshots(a, c), GID)
    assert via_b == direct == domain_set(c, GID)
