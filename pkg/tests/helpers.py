"""Random snapshot builders and an independent brute-force diff oracle."""

from __future__ import annotations

import random
import string
from collections import Counter
from datetime import datetime, timedelta, timezone

from gptaudit._util import sha256_hex
from gptaudit.audit import (
    ACCESSIBLE,
    DNS_FAILURE,
    HOMEPAGE_ONLY,
    PLACEHOLDER,
    TIMEOUT,
    AuditRecord,
    PolicyDocument,
    client_error,
    server_error,
)
from gptaudit.driver import PrivacyEntry, PrivacyPanel
from gptaudit.model import ActionSpec, GizmoId, GptMetadata, KnowledgeFile
from gptaudit.store import Snapshot

DOMAINS = [f"svc{i}.example-host.test" for i in range(8)] + ["gpts.webpilot.ai", "b12.io", "swan-api.jobright.ai"]
HASHES = ["a" * 64, "b" * 64, "c" * 64]
EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


def rand_id(rng: random.Random) -> GizmoId:
    return GizmoId("".join(rng.choices(string.ascii_letters + string.digits, k=9)))


def rand_ts(rng: random.Random) -> datetime:
    return EPOCH + timedelta(seconds=rng.randrange(10**7), microseconds=rng.randrange(10**6))


def rand_outcome(rng: random.Random):
    return rng.choice(
        [ACCESSIBLE, ACCESSIBLE, ACCESSIBLE, PLACEHOLDER, DNS_FAILURE, HOMEPAGE_ONLY, TIMEOUT,
         client_error(404), client_error(310), server_error(500), server_error(503)]
    )


def build_app(rng: random.Random, gid: GizmoId, entries: list[PrivacyEntry], knowledge: bool) -> GptMetadata:
    return GptMetadata(
        gizmo_id=gid,
        name=rng.choice(["Helper", "Tutor", "Helper"]),
        instructions="Be helpful.",
        description=rng.choice([None, "", "about"]),
        conversation=rng.choice([None, (), ("hi?",)]),
        knowledge=(KnowledgeFile("doc.pdf", rng.randrange(100)),) if knowledge else rng.choice([None, ()]),
        capabilities=rng.choice([None, ("web_browsing",)]),
        actions=tuple(ActionSpec(e.domain, e.policy_url) for e in entries) or None,
    )


def make_snapshot(sid: str, apps_spec: dict, rng: random.Random) -> Snapshot:
    """apps_spec: gizmo_id -> (entries, knowledge flag, {entry: (outcome, hash)})."""
    apps, panels, audits, docs = [], [], [], []
    for gid in sorted(apps_spec):
        entries, knowledge, results = apps_spec[gid]
        apps.append(build_app(rng, gid, entries, knowledge))
        panels.append(PrivacyPanel(gid, tuple(entries), rand_ts(rng)))
        for e in entries:
            outcome, digest = results[e]
            ts = rand_ts(rng)
            audits.append(
                AuditRecord(gid, e, outcome, e.policy_url if outcome is not PLACEHOLDER else None,
                            outcome.status or (200 if outcome is ACCESSIBLE else None),
                            digest if outcome is ACCESSIBLE else None, ts, rng.randrange(5000))
            )
            if outcome is ACCESSIBLE and rng.random() < 0.5:
                text = f"policy text {digest[:4]} für {e.domain}"
                docs.append(PolicyDocument(gid, e, text, sha256_hex(text), ts))
    return Snapshot(sid, tuple(apps), tuple(panels), tuple(audits), tuple(docs), partial=rng.random() < 0.2)


def random_entries(rng: random.Random) -> list[PrivacyEntry]:
    entries: list[PrivacyEntry] = []
    for _ in range(rng.choice([0, 0, 1, 1, 2, 3])):
        d = rng.choice(DOMAINS)
        e = PrivacyEntry(d, f"https://{d}/{rng.choice(['privacy', 'legal', 'p'])}")
        if e not in entries:
            entries.append(e)
    return entries


def random_spec(rng: random.Random, n_apps: int) -> dict:
    spec = {}
    while len(spec) < n_apps:
        entries = random_entries(rng)
        spec[rand_id(rng)] = (entries, rng.random() < 0.3, {e: (rand_outcome(rng), rng.choice(HASHES)) for e in entries})
    return spec


def mutate_spec(rng: random.Random, spec: dict) -> dict:
    out = {}
    for gid, (entries, knowledge, results) in spec.items():
        roll = rng.random()
        if roll < 0.1:
            continue  # app removed
        entries = list(entries)
        results = dict(results)
        if roll < 0.5:
            op = rng.choice(["add", "drop", "url", "hash", "knowledge", "outcome"])
            if op == "add":
                entries += [e for e in random_entries(rng) if e not in entries]
            elif op == "drop" and entries:
                entries.pop(rng.randrange(len(entries)))
            elif op == "url" and entries:
                i = rng.randrange(len(entries))
                new = PrivacyEntry(entries[i].domain, entries[i].policy_url + "-v2")
                if new not in entries:
                    entries[i] = new
            elif op == "hash" and entries:
                e = rng.choice(entries)
                results[e] = (results.get(e, (ACCESSIBLE, HASHES[0]))[0], rng.choice(HASHES))
            elif op == "knowledge":
                knowledge = not knowledge
            elif op == "outcome" and entries:
                e = rng.choice(entries)
                results[e] = (rand_outcome(rng), results.get(e, (ACCESSIBLE, HASHES[0]))[1])
        for e in entries:
            results.setdefault(e, (rand_outcome(rng), rng.choice(HASHES)))
        out[gid] = (entries, knowledge, {e: results[e] for e in entries})
    for _ in range(rng.randrange(3)):
        entries = random_entries(rng)
        out[rand_id(rng)] = (entries, False, {e: (rand_outcome(rng), rng.choice(HASHES)) for e in entries})
    return out


def random_pair(seed: int, max_apps: int = 50) -> tuple[Snapshot, Snapshot]:
    rng = random.Random(seed)
    spec_a = random_spec(rng, rng.randrange(max_apps - 2))
    spec_b = mutate_spec(rng, spec_a)
    while len(spec_b) > max_apps:
        spec_b.pop(next(iter(spec_b)))
    return make_snapshot("A", spec_a, rng), make_snapshot("B", spec_b, rng)


# brute-force oracle -----------------------------------------------------


def _class(app: GptMetadata) -> str:
    # written from the definitions, independent of gptaudit.model.classify
    table = {(False, False): "prompt", (True, False): "knowledge", (False, True): "action", (True, True): "action"}
    return table[(bool(app.knowledge), bool(app.actions))]


def oracle_events(a: Snapshot, b: Snapshot) -> Counter:
    """Multiset of (kind, gizmo_id, domain, extra) by exhaustive pairwise comparison."""
    events: Counter = Counter()

    def entries(s: Snapshot, gid: str) -> list[PrivacyEntry]:
        return [e for p in s.panels if p.gizmo_id == gid for e in p.entries]

    def accessible_hash(s: Snapshot, gid: str, e: PrivacyEntry):
        for r in s.audits:
            if r.gizmo_id == gid and r.entry == e and r.outcome == ACCESSIBLE:
                return r.content_hash
        return None

    ids_a = [app.gizmo_id for app in a.apps]
    ids_b = [app.gizmo_id for app in b.apps]
    for gid in ids_a:
        if gid not in ids_b:
            events[("app_removed", gid, None, None)] += 1
    for gid in ids_b:
        if gid not in ids_a:
            events[("app_added", gid, None, None)] += 1
    for gid in ids_a:
        if gid not in ids_b:
            continue
        app_a = next(x for x in a.apps if x.gizmo_id == gid)
        app_b = next(x for x in b.apps if x.gizmo_id == gid)
        if _class(app_a) != _class(app_b):
            events[("class_changed", gid, None, None)] += 1
        ea, eb = entries(a, gid), entries(b, gid)
        seen_domains = set()
        for x in ea + eb:
            if x.domain in seen_domains:
                continue
            seen_domains.add(x.domain)
            in_a = any(y.domain == x.domain for y in ea)
            in_b = any(y.domain == x.domain for y in eb)
            if in_a and not in_b:
                events[("domain_removed", gid, x.domain, None)] += 1
            elif in_b and not in_a:
                events[("domain_added", gid, x.domain, None)] += 1
            else:
                url_mismatch = any(
                    not any(z.domain == y.domain and z.policy_url == y.policy_url for z in eb)
                    for y in ea if y.domain == x.domain
                ) or any(
                    not any(z.domain == y.domain and z.policy_url == y.policy_url for z in ea)
                    for y in eb if y.domain == x.domain
                )
                if url_mismatch:
                    events[("policy_url_changed", gid, x.domain, None)] += 1
        for x in ea:
            for y in eb:
                if x == y:
                    ha, hb = accessible_hash(a, gid, x), accessible_hash(b, gid, y)
                    if ha and hb and ha != hb:
                        events[("policy_text_changed", gid, x.domain, x.policy_url)] += 1
    return events


def implementation_events(diff) -> Counter:
    out: Counter = Counter()
    for ev in diff.events:
        extra = ev.before[0] if ev.kind.value == "policy_text_changed" else None
        out[(ev.kind.value, ev.gizmo_id, ev.domain, extra)] += 1
    return out


# audit precedence site ----------------------------------------------------

POLICY_SENTENCE = "We collect your email address only to send receipts, and we never sell it to anyone."


def build_precedence_site(srv, hang: float = 3.0) -> dict[str, tuple[str, object]]:
    """Register hosts on a FixtureServer; returns name -> (declared URL, expected outcome)."""
    from gptaudit.audit import client_error as ce, server_error as se
    from gptaudit.fixture import Route, policy_page

    page = Route(200, policy_page(POLICY_SENTENCE))
    home = Route(200, b"<html><body><h1>Welcome</h1></body></html>")
    srv.add_route("policy.site.test", "/privacy", page)
    srv.add_route("home.site.test", "/privacy-policy", Route(301, headers=(("Location", "/"),)))
    srv.add_route("home.site.test", "/", home)
    srv.add_route("root.site.test", "/", home)
    srv.add_route("query.site.test", "/?page=privacy", page)
    srv.add_route("down.site.test", "/privacy", Route(500, b"oops", "text/plain"))
    srv.add_route("hop.site.test", "/privacy", Route(302, headers=(("Location", "http://down2.site.test/privacy"),)))
    srv.add_route("down2.site.test", "/privacy", Route(503, b"busy", "text/plain"))
    srv.add_route("gone.site.test", "/privacy", Route(404, b"missing", "text/plain"))
    srv.add_route("loop.site.test", "/a", Route(302, headers=(("Location", "/b"),)))
    srv.add_route("loop.site.test", "/b", Route(302, headers=(("Location", "/a"),)))
    srv.add_route("slow.site.test", "/privacy", Route(200, policy_page(POLICY_SENTENCE), delay=hang))
    return {
        "placeholder": ("https://app.example.com/privacy_policy", PLACEHOLDER),
        "placeholder_dead_dns": ("http://www.example.org/privacy", PLACEHOLDER),
        "dns_failure": ("http://nxdomain.site.test/privacy", DNS_FAILURE),
        "timeout": ("http://slow.site.test/privacy", TIMEOUT),
        "server_error": ("http://down.site.test/privacy", se(500)),
        "server_error_after_redirect": ("http://hop.site.test/privacy", se(503)),
        "client_error": ("http://gone.site.test/privacy", ce(404)),
        "redirect_loop": ("http://loop.site.test/a", ce(310)),
        "homepage_redirect": ("http://home.site.test/privacy-policy", HOMEPAGE_ONLY),
        "homepage_direct": ("http://root.site.test/", HOMEPAGE_ONLY),
        "root_with_query": ("http://query.site.test/?page=privacy", ACCESSIBLE),
        "dedicated": ("http://policy.site.test/privacy", ACCESSIBLE),
    }
