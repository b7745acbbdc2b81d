"""Store drivers: read an app's privacy-settings panel (third-party domains and policy links).

``SimulatedDriver`` talks to the JSON endpoint served by the fixture store.
``NativeUiDriver`` marks the slot for desktop UI automation, which is not
available on this platform.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence
from urllib.parse import urlsplit

import httpx

from ._util import format_ts, parse_ts, utcnow
from .model import DEFAULT_BASE_URL, GizmoId, build_access_url

log = logging.getLogger(__name__)

DEFAULT_RATE_LIMIT = 2.0
DEFAULT_BACKOFF = (0.25, 0.5, 1.0)


class InvalidHost(ValueError):
    pass


class DriverError(Exception):
    pass


class AppNotFound(DriverError):
    pass


class PanelUnavailable(DriverError):
    pass


class TransportFailure(DriverError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class RateLimited(DriverError):
    pass


def _check_label(label: str) -> bool:
    if not label or len(label) > 63:
        return False
    return all(c.isascii() and (c.isalnum() or c == "-") for c in label) and label == label.lower()


def normalize_domain(raw: str) -> str:
    """Canonical host for a declared domain.

    Lowercases, strips whitespace and the trailing dot, and keeps only the
    host when a full URL was pasted. Subdomains are preserved.
    """
    text = raw.strip()
    if not text:
        raise InvalidHost("empty host")
    if "://" in text:
        host = urlsplit(text).hostname or ""
    else:
        host = text.split("/", 1)[0]
        if "@" in host:
            host = host.rsplit("@", 1)[1]
        if host.count(":") == 1:
            host = host.split(":", 1)[0]
    host = host.strip().lower()
    if host.endswith("."):
        host = host[:-1]
    if not host.isascii():
        try:
            host = host.encode("idna").decode("ascii")
        except UnicodeError as exc:
            raise InvalidHost(f"cannot encode {raw!r} as a DNS name") from exc
    if not host or len(host) > 253 or not all(_check_label(lbl) for lbl in host.split(".")):
        raise InvalidHost(f"not a valid DNS host: {raw!r}")
    return host


def _check_policy_url(url: str) -> None:
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise ValueError(f"policy url must be absolute http(s): {url!r}")


@dataclass(frozen=True)
class PrivacyEntry:
    domain: str
    policy_url: str

    def __post_init__(self) -> None:
        if normalize_domain(self.domain) != self.domain:
            raise InvalidHost(f"domain is not normalized: {self.domain!r}")
        _check_policy_url(self.policy_url)

    @classmethod
    def declared(cls, domain: str, policy_url: str) -> "PrivacyEntry":
        return cls(normalize_domain(domain), policy_url.strip())


def dedupe_entries(entries: Iterable[PrivacyEntry]) -> tuple[PrivacyEntry, ...]:
    seen: set[PrivacyEntry] = set()
    out = []
    for entry in entries:
        if entry not in seen:
            seen.add(entry)
            out.append(entry)
    return tuple(out)


@dataclass(frozen=True)
class PrivacyPanel:
    gizmo_id: GizmoId
    entries: tuple[PrivacyEntry, ...]
    retrieved_at: datetime = field(default_factory=utcnow)

    def __post_init__(self) -> None:
        if len(set(self.entries)) != len(self.entries):
            raise ValueError(f"panel for {self.gizmo_id} has duplicate entries")

    @property
    def domains(self) -> frozenset[str]:
        return frozenset(e.domain for e in self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "gizmo_id": str(self.gizmo_id),
            "retrieved_at": format_ts(self.retrieved_at),
            "entries": [{"domain": e.domain, "privacy_policy": e.policy_url} for e in self.entries],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "PrivacyPanel":
        return cls(
            gizmo_id=GizmoId(raw["gizmo_id"]),
            entries=tuple(PrivacyEntry(e["domain"], e["privacy_policy"]) for e in raw["entries"]),
            retrieved_at=parse_ts(raw["retrieved_at"]),
        )


def panel_from_payload(gizmo_id: GizmoId, payload: Any) -> PrivacyPanel:
    """Validate a wire payload and normalize its entries.

    Entries whose domain or URL cannot be normalized are dropped with a
    warning; duplicate (domain, url) pairs keep their first occurrence.
    """
    if not isinstance(payload, Mapping) or not isinstance(payload.get("entries"), list):
        raise PanelUnavailable(f"{gizmo_id}: malformed panel payload")
    if payload.get("gizmo_id") != str(gizmo_id):
        raise PanelUnavailable(f"{gizmo_id}: payload is for {payload.get('gizmo_id')!r}")
    entries = []
    for raw in payload["entries"]:
        try:
            entries.append(PrivacyEntry.declared(raw["domain"], raw["privacy_policy"]))
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            log.warning("%s: dropping unusable panel entry %r (%s)", gizmo_id, raw, exc)
    return PrivacyPanel(gizmo_id, dedupe_entries(entries))


class RateLimiter:
    """Spaces request starts ``1/rate`` seconds apart across all threads.

    ``max_requests`` is an optional total budget; once spent, ``acquire``
    raises RateLimited.
    """

    def __init__(
        self,
        rate: float | None = DEFAULT_RATE_LIMIT,
        max_requests: int | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.interval = 1.0 / rate if rate and rate > 0 else 0.0
        self.max_requests = max_requests
        self.issued = 0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            if self.max_requests is not None and self.issued >= self.max_requests:
                raise RateLimited(f"request budget of {self.max_requests} exhausted")
            now = self._clock()
            slot = max(now, self._next)
            self._next = slot + self.interval
            self.issued += 1
        if slot > now:
            self._sleep(slot - now)


class StoreDriver(Protocol):
    def fetch_privacy_panel(self, gizmo_id: GizmoId) -> PrivacyPanel: ...


class SimulatedDriver:
    """Reads panels from ``GET {base}/g/g-{id}/privacy``."""

    def __init__(
        self,
        base_url: str,
        rate_limit: float | None = DEFAULT_RATE_LIMIT,
        backoff: Sequence[float] = DEFAULT_BACKOFF,
        timeout: float = 10.0,
        max_requests: int | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.backoff = tuple(backoff)
        self.limiter = RateLimiter(rate_limit, max_requests)
        self._client = client or httpx.Client(timeout=timeout, follow_redirects=False)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "SimulatedDriver":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def panel_url(self, gizmo_id: GizmoId) -> str:
        return build_access_url(gizmo_id, self.base_url) + "/privacy"

    def fetch_privacy_panel(self, gizmo_id: GizmoId) -> PrivacyPanel:
        url = self.panel_url(gizmo_id)
        failure = "no attempt made"
        throttled = False
        for attempt in range(len(self.backoff) + 1):
            if attempt:
                time.sleep(self.backoff[attempt - 1])
            self.limiter.acquire()
            try:
                resp = self._client.get(url)
            except httpx.HTTPError as exc:
                failure = f"{type(exc).__name__}: {exc}"
                log.debug("%s attempt %d failed: %s", gizmo_id, attempt + 1, failure)
                continue
            if resp.status_code == 404:
                raise AppNotFound(str(gizmo_id))
            if resp.status_code == 429:
                throttled = True
                failure = "HTTP 429"
                continue
            if resp.status_code != 200:
                failure = f"HTTP {resp.status_code}"
                continue
            try:
                payload = resp.json()
            except ValueError as exc:
                raise PanelUnavailable(f"{gizmo_id}: invalid JSON ({exc})") from exc
            return panel_from_payload(gizmo_id, payload)
        if throttled and failure == "HTTP 429":
            raise RateLimited(f"{gizmo_id}: store kept answering 429")
        raise TransportFailure(f"{gizmo_id}: {failure} after {len(self.backoff) + 1} attempts")


class NativeUiDriver:
    """Placeholder for the desktop click-automation driver."""

    def __init__(self, base_url: str = DEFAULT_BASE_URL):
        self.base_url = base_url

    def fetch_privacy_panel(self, gizmo_id: GizmoId) -> PrivacyPanel:
        raise NotImplementedError("native UI driver is not implemented on this platform")


def fetch_privacy_panel(driver: StoreDriver, gizmo_id: GizmoId) -> PrivacyPanel:
    return driver.fetch_privacy_panel(gizmo_id)
