"""Privacy-policy link auditing.

Each declared policy URL lands in exactly one of five outcomes: accessible,
broken link, homepage only, timeout, or server error. Rules are checked in a
fixed order: placeholder host, name resolution, timeout, 5xx, 4xx, site root,
anything else 2xx.
"""

from __future__ import annotations

import enum
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from html.parser import HTMLParser
from typing import Any, Iterable, Mapping, Protocol, Sequence
from urllib.parse import urljoin, urlsplit, urlunsplit

import httpx

from ._util import format_ts, parse_ts, sha256_hex, utcnow
from .driver import PrivacyEntry, PrivacyPanel
from .model import GizmoId

log = logging.getLogger(__name__)

REDIRECT_OVERFLOW_STATUS = 310
PLACEHOLDER_REGISTRABLE = frozenset({"example.com", "example.org", "example.net"})

# Public-suffix subset, enough to find the registrable part of common hosts.
PUBLIC_SUFFIXES = frozenset(
    """
    com org net edu gov mil int arpa info biz name pro mobi
    io ai co app dev me tv cc us uk de fr es it nl be ch at se no dk fi pl cz ru ua
    jp cn kr in br mx ar cl au nz ca za sg hk tw id my th vn ph tr ir il eu asia xyz
    site online tech store cloud page link top shop blog
    test example invalid localhost local
    co.uk org.uk ac.uk gov.uk ltd.uk plc.uk me.uk net.uk
    com.au net.au org.au edu.au gov.au
    co.jp ne.jp or.jp ac.jp go.jp
    com.cn net.cn org.cn gov.cn edu.cn
    co.nz org.nz net.nz
    co.in net.in org.in firm.in gen.in ind.in
    com.br net.br org.br gov.br
    co.kr or.kr ne.kr
    com.mx com.ar com.tr com.tw com.hk com.sg com.my co.za co.id co.il co.th
    github.io vercel.app netlify.app herokuapp.com pages.dev web.app firebaseapp.com
    """.split()
)

HTML_BLOCK_TAGS = frozenset(
    """
    address article aside blockquote br dd div dl dt fieldset figcaption figure footer
    form h1 h2 h3 h4 h5 h6 header hr li main nav ol p pre section table tbody td tfoot
    th thead tr ul title
    """.split()
)
HTML_DROP_TAGS = frozenset({"script", "style", "noscript", "template", "head"})


class OutcomeKind(str, enum.Enum):
    ACCESSIBLE = "accessible"
    BROKEN_LINK = "broken_link"
    HOMEPAGE_ONLY = "homepage_only"
    TIMEOUT = "timeout"
    SERVER_ERROR = "server_error"


class BrokenCause(str, enum.Enum):
    PLACEHOLDER = "placeholder"
    DNS_FAILURE = "dns_failure"
    CLIENT_ERROR = "client_error"


@dataclass(frozen=True)
class AuditOutcome:
    kind: OutcomeKind
    cause: BrokenCause | None = None
    status: int | None = None

    def __post_init__(self) -> None:
        if (self.kind is OutcomeKind.BROKEN_LINK) != (self.cause is not None):
            raise ValueError("a cause is required for broken links and only for them")
        needs_status = self.kind is OutcomeKind.SERVER_ERROR or self.cause is BrokenCause.CLIENT_ERROR
        if needs_status and self.status is None:
            raise ValueError(f"{self.kind.value} outcome needs a status")

    def __str__(self) -> str:
        if self.cause is BrokenCause.CLIENT_ERROR:
            return f"broken_link(client_error {self.status})"
        if self.cause is not None:
            return f"broken_link({self.cause.value})"
        if self.kind is OutcomeKind.SERVER_ERROR:
            return f"server_error({self.status})"
        return self.kind.value


ACCESSIBLE = AuditOutcome(OutcomeKind.ACCESSIBLE)
HOMEPAGE_ONLY = AuditOutcome(OutcomeKind.HOMEPAGE_ONLY)
TIMEOUT = AuditOutcome(OutcomeKind.TIMEOUT)
PLACEHOLDER = AuditOutcome(OutcomeKind.BROKEN_LINK, BrokenCause.PLACEHOLDER)
DNS_FAILURE = AuditOutcome(OutcomeKind.BROKEN_LINK, BrokenCause.DNS_FAILURE)


def client_error(status: int) -> AuditOutcome:
    return AuditOutcome(OutcomeKind.BROKEN_LINK, BrokenCause.CLIENT_ERROR, status)


def server_error(status: int) -> AuditOutcome:
    return AuditOutcome(OutcomeKind.SERVER_ERROR, status=status)


@dataclass(frozen=True)
class AuditPolicy:
    timeout_secs: float = 10.0
    max_redirects: int = 10
    timeout_retries: int = 1
    parallelism: int = 8
    per_host: int = 2
    max_body_bytes: int = 5 * 1024 * 1024

    def __post_init__(self) -> None:
        if self.timeout_secs <= 0:
            raise ValueError("timeout_secs must be positive")
        if self.max_redirects < 0 or self.timeout_retries < 0:
            raise ValueError("max_redirects and timeout_retries must be >= 0")
        if self.parallelism < 1 or self.per_host < 1:
            raise ValueError("parallelism and per_host must be >= 1")


@dataclass(frozen=True)
class AuditRecord:
    gizmo_id: GizmoId
    entry: PrivacyEntry
    outcome: AuditOutcome
    final_url: str | None
    http_status: int | None
    content_hash: str | None
    fetched_at: datetime
    elapsed_ms: int

    def __post_init__(self) -> None:
        if (self.content_hash is not None) != (self.outcome.kind is OutcomeKind.ACCESSIBLE):
            raise ValueError("content_hash is present exactly for accessible outcomes")

    def to_dict(self) -> dict[str, Any]:
        return {
            "gizmo_id": str(self.gizmo_id),
            "entry_domain": self.entry.domain,
            "policy_url": self.entry.policy_url,
            "outcome": self.outcome.kind.value,
            "cause": self.outcome.cause.value if self.outcome.cause else None,
            "final_url": self.final_url,
            "http_status": self.http_status,
            "content_hash": self.content_hash,
            "fetched_at": format_ts(self.fetched_at),
            "elapsed_ms": self.elapsed_ms,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "AuditRecord":
        kind = OutcomeKind(raw["outcome"])
        cause = BrokenCause(raw["cause"]) if raw["cause"] is not None else None
        status = raw["http_status"]
        outcome_status = status if kind is OutcomeKind.SERVER_ERROR or cause is BrokenCause.CLIENT_ERROR else None
        return cls(
            gizmo_id=GizmoId(raw["gizmo_id"]),
            entry=PrivacyEntry(raw["entry_domain"], raw["policy_url"]),
            outcome=AuditOutcome(kind, cause, outcome_status),
            final_url=raw["final_url"],
            http_status=status,
            content_hash=raw["content_hash"],
            fetched_at=parse_ts(raw["fetched_at"]),
            elapsed_ms=raw["elapsed_ms"],
        )


@dataclass(frozen=True)
class PolicyDocument:
    gizmo_id: GizmoId
    entry: PrivacyEntry
    text: str
    content_hash: str
    fetched_at: datetime

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("stored policy documents need text")
        if sha256_hex(self.text) != self.content_hash:
            raise ValueError("content_hash does not match text")

    def to_dict(self) -> dict[str, Any]:
        return {
            "gizmo_id": str(self.gizmo_id),
            "entry_domain": self.entry.domain,
            "policy_url": self.entry.policy_url,
            "content_hash": self.content_hash,
            "fetched_at": format_ts(self.fetched_at),
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "PolicyDocument":
        return cls(
            gizmo_id=GizmoId(raw["gizmo_id"]),
            entry=PrivacyEntry(raw["entry_domain"], raw["policy_url"]),
            text=raw["text"],
            content_hash=raw["content_hash"],
            fetched_at=parse_ts(raw["fetched_at"]),
        )


def registrable_domain(host: str) -> str | None:
    """Public suffix plus one label, or None when the host is itself a suffix."""
    labels = host.lower().rstrip(".").split(".")
    for i in range(len(labels)):
        if ".".join(labels[i:]) in PUBLIC_SUFFIXES:
            return ".".join(labels[i - 1 :]) if i > 0 else None
    # unknown TLD: treat the last label as the suffix
    return ".".join(labels[-2:]) if len(labels) >= 2 else None


def is_placeholder(url: str) -> bool:
    host = (urlsplit(url).hostname or "").rstrip(".")
    if not host:
        return False
    if host.split(".")[-1] == "example":
        return True
    registrable = registrable_domain(host)
    if registrable is None:
        return False
    return registrable in PLACEHOLDER_REGISTRABLE or registrable.split(".")[0] == "example"


def is_homepage_only(final_url: str) -> bool:
    parts = urlsplit(final_url)
    return parts.path in ("", "/") and not parts.query


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag: str, attrs: Any) -> None:
        if tag in HTML_DROP_TAGS:
            self._skip_depth += 1
        elif tag in HTML_BLOCK_TAGS:
            self.chunks.append(" ")

    def handle_startendtag(self, tag: str, attrs: Any) -> None:
        if tag in HTML_BLOCK_TAGS:
            self.chunks.append(" ")

    def handle_endtag(self, tag: str) -> None:
        if tag in HTML_DROP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag in HTML_BLOCK_TAGS:
            self.chunks.append(" ")

    def handle_data(self, data: str) -> None:
        if not self._skip_depth:
            self.chunks.append(data)


def extract_text(html: bytes | str) -> str:
    """Visible text of an HTML document with whitespace collapsed."""
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    parser = _TextExtractor()
    parser.feed(html)
    parser.close()
    return " ".join("".join(parser.chunks).split())


class NameResolutionError(Exception):
    pass


class Resolver(Protocol):
    def route(self, url: str) -> tuple[str, dict[str, str]]:
        """Return the URL to actually request plus extra headers; raise NameResolutionError."""
        ...


class SystemResolver:
    """Resolves with the host's DNS; the URL itself is requested unchanged."""

    def __init__(self) -> None:
        self._known: dict[str, bool] = {}
        self._lock = threading.Lock()

    def route(self, url: str) -> tuple[str, dict[str, str]]:
        host = urlsplit(url).hostname or ""
        with self._lock:
            ok = self._known.get(host)
        if ok is None:
            try:
                socket.getaddrinfo(host, None)
                ok = True
            except (socket.gaierror, UnicodeError):
                ok = False
            with self._lock:
                self._known[host] = ok
        if not ok:
            raise NameResolutionError(host)
        return url, {}


class StaticResolver:
    """Maps known hosts onto fixed plain-HTTP addresses; every other host fails to resolve.

    The original host travels in the Host header so a single listener can
    serve many virtual hosts.
    """

    def __init__(self, hosts: Mapping[str, str]):
        self.hosts = {h.lower(): addr for h, addr in hosts.items()}

    def route(self, url: str) -> tuple[str, dict[str, str]]:
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        addr = self.hosts.get(host)
        if addr is None:
            raise NameResolutionError(host)
        target = urlunsplit(("http", addr, parts.path or "/", parts.query, ""))
        return target, {"Host": parts.netloc}


@dataclass
class _Fetch:
    outcome: AuditOutcome | None = None
    final_url: str | None = None
    status: int | None = None
    body: bytes = b""
    content_type: str = ""
    no_response: bool = False


@dataclass
class AuditResult:
    records: list[AuditRecord] = field(default_factory=list)
    documents: list[PolicyDocument] = field(default_factory=list)


class Auditor:
    """Fetches and classifies policy links under an AuditPolicy."""

    def __init__(
        self,
        policy: AuditPolicy | None = None,
        resolver: Resolver | None = None,
        client: httpx.Client | None = None,
    ):
        self.policy = policy or AuditPolicy()
        self.resolver = resolver or SystemResolver()
        self._client = client or httpx.Client(
            timeout=httpx.Timeout(self.policy.timeout_secs),
            follow_redirects=False,
            limits=httpx.Limits(max_connections=max(self.policy.parallelism * 2, 10)),
            headers={"User-Agent": "gptaudit/0.1 (+policy link audit)"},
        )
        self._host_locks: dict[str, threading.Semaphore] = {}
        self._guard = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "Auditor":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _host_slot(self, url: str) -> threading.Semaphore:
        host = urlsplit(url).hostname or ""
        with self._guard:
            sem = self._host_locks.get(host)
            if sem is None:
                sem = self._host_locks[host] = threading.Semaphore(self.policy.per_host)
            return sem

    def _fetch_chain(self, url: str) -> _Fetch:
        result = _Fetch()
        current = url
        hops = 0
        while True:
            try:
                target, headers = self.resolver.route(current)
            except NameResolutionError:
                result.outcome = DNS_FAILURE
                return result
            try:
                with self._client.stream("GET", target, headers=headers) as resp:
                    result.final_url = current
                    result.status = resp.status_code
                    if 300 <= resp.status_code < 400:
                        location = resp.headers.get("location")
                    elif 200 <= resp.status_code < 300:
                        result.content_type = resp.headers.get("content-type", "")
                        result.body = self._read_body(resp)
                        return result
                    else:
                        return result
            except httpx.HTTPError as exc:
                log.debug("no response from %s: %s", current, exc)
                result.no_response = True
                return result
            nxt = urljoin(current, location.strip()) if location and location.strip() else None
            if nxt is None or urlsplit(nxt).scheme not in ("http", "https") or not urlsplit(nxt).hostname:
                result.outcome = client_error(result.status)
                return result
            hops += 1
            if hops > self.policy.max_redirects:
                result.outcome = client_error(REDIRECT_OVERFLOW_STATUS)
                return result
            current = nxt

    def _read_body(self, resp: httpx.Response) -> bytes:
        buf = bytearray()
        for chunk in resp.iter_bytes():
            buf.extend(chunk)
            if len(buf) >= self.policy.max_body_bytes:
                del buf[self.policy.max_body_bytes :]
                break
        return bytes(buf)

    def audit_entry(self, gizmo_id: GizmoId, entry: PrivacyEntry) -> tuple[AuditRecord, PolicyDocument | None]:
        fetched_at = utcnow()
        started = time.monotonic()

        def record(outcome: AuditOutcome, fetch: _Fetch | None = None, digest: str | None = None) -> AuditRecord:
            status = outcome.status if outcome.status is not None else (fetch.status if fetch else None)
            return AuditRecord(
                gizmo_id=gizmo_id,
                entry=entry,
                outcome=outcome,
                final_url=fetch.final_url if fetch else None,
                http_status=status,
                content_hash=digest,
                fetched_at=fetched_at,
                elapsed_ms=int((time.monotonic() - started) * 1000),
            )

        if is_placeholder(entry.policy_url):
            return record(PLACEHOLDER), None

        with self._host_slot(entry.policy_url):
            for attempt in range(self.policy.timeout_retries + 1):
                fetch = self._fetch_chain(entry.policy_url)
                if not fetch.no_response:
                    break
                log.info("%s: no response (attempt %d)", entry.policy_url, attempt + 1)

        if fetch.outcome is not None:
            return record(fetch.outcome, fetch), None
        if fetch.no_response:
            return record(TIMEOUT, fetch), None
        assert fetch.status is not None and fetch.final_url is not None
        if fetch.status >= 500:
            return record(server_error(fetch.status), fetch), None
        if fetch.status >= 400:
            return record(client_error(fetch.status), fetch), None
        if not 200 <= fetch.status < 300:
            return record(client_error(fetch.status), fetch), None
        if is_homepage_only(fetch.final_url):
            return record(HOMEPAGE_ONLY, fetch), None

        ctype = fetch.content_type.lower()
        if not ctype or "html" in ctype or "xml" in ctype or ctype.startswith("text/"):
            text = extract_text(fetch.body)
            digest = sha256_hex(text)
        else:
            text = ""
            digest = sha256_hex(fetch.body)
        rec = record(ACCESSIBLE, fetch, digest)
        doc = PolicyDocument(gizmo_id, entry, text, digest, fetched_at) if text else None
        return rec, doc

    def audit_link(self, entry: PrivacyEntry, gizmo_id: GizmoId | str = "000000000") -> AuditRecord:
        return self.audit_entry(GizmoId(gizmo_id), entry)[0]

    def run(self, panels: Iterable[PrivacyPanel]) -> AuditResult:
        """Audit every entry of every panel; each distinct URL is fetched once."""
        ordered = sorted(panels, key=lambda p: str(p.gizmo_id))
        pairs = [(p.gizmo_id, e) for p in ordered for e in p.entries]
        unique: dict[str, PrivacyEntry] = {}
        for _, entry in pairs:
            unique.setdefault(entry.policy_url, entry)

        def work(entry: PrivacyEntry):
            return self.audit_entry(GizmoId("000000000"), entry)

        with ThreadPoolExecutor(max_workers=self.policy.parallelism) as pool:
            fetched = dict(zip(unique, pool.map(work, unique.values())))

        result = AuditResult()
        for gizmo_id, entry in pairs:
            rec, doc = fetched[entry.policy_url]
            result.records.append(
                AuditRecord(
                    gizmo_id=gizmo_id,
                    entry=entry,
                    outcome=rec.outcome,
                    final_url=rec.final_url,
                    http_status=rec.http_status,
                    content_hash=rec.content_hash,
                    fetched_at=rec.fetched_at,
                    elapsed_ms=rec.elapsed_ms,
                )
            )
            if doc is not None:
                result.documents.append(PolicyDocument(gizmo_id, entry, doc.text, doc.content_hash, doc.fetched_at))
        return result


def audit_link(entry: PrivacyEntry, policy: AuditPolicy | None = None, resolver: Resolver | None = None) -> AuditRecord:
    with Auditor(policy, resolver) as auditor:
        return auditor.audit_link(entry)


def audit_corpus(
    panels: Sequence[PrivacyPanel], policy: AuditPolicy | None = None, resolver: Resolver | None = None
) -> list[AuditRecord]:
    with Auditor(policy, resolver) as auditor:
        return auditor.run(panels).records
