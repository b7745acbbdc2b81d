"""Deterministic fixture store.

One loopback HTTP listener stands in for the app store (privacy panels) and
for every third-party policy host. Policy hosts are told apart by the Host
header; auditors reach them through ``StaticResolver`` (see ``resolver()``).
"""

from __future__ import annotations

import enum
import json
import logging
import random
import string
import threading
from collections import Counter
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Iterable, Mapping
from urllib.parse import urlsplit

from ._util import jsonl_bytes
from .audit import StaticResolver
from .model import ActionSpec, GizmoId, GptMetadata, KnowledgeFile

log = logging.getLogger(__name__)

PLACEHOLDER_URL = "https://app.example.com/privacy_policy"
DEFAULT_HANG_SECS = 15.0
STORE_HOSTS = frozenset({"127.0.0.1", "localhost"})


class InconsistentConfig(ValueError):
    pass


class BindFailure(OSError):
    pass


class PolicyBehavior(str, enum.Enum):
    DEDICATED_POLICY = "dedicated_policy"
    HOMEPAGE_REDIRECT = "homepage_redirect"
    NOT_FOUND = "not_found"
    SERVER_ERROR = "server_error"
    HANG = "hang"
    PLACEHOLDER = "placeholder"
    UNRESOLVABLE = "unresolvable"


@dataclass(frozen=True)
class CorpusConfig:
    total_apps: int
    zero_domain_apps: int
    one_domain_apps: int
    multi_domain_apps: int
    multi_domain_total_entries: int
    behavior_counts: Mapping[str, int]
    seed: int = 0
    hang_delay_secs: float = DEFAULT_HANG_SECS

    def validate(self) -> None:
        counts = [
            self.total_apps,
            self.zero_domain_apps,
            self.one_domain_apps,
            self.multi_domain_apps,
            self.multi_domain_total_entries,
            *self.behavior_counts.values(),
        ]
        if any(not isinstance(c, int) or c < 0 for c in counts):
            raise InconsistentConfig("all counts must be non-negative integers")
        unknown = sorted(set(self.behavior_counts) - {b.value for b in PolicyBehavior})
        if unknown:
            raise InconsistentConfig(f"unknown behavior kind {unknown[0]!r}")
        buckets = self.zero_domain_apps + self.one_domain_apps + self.multi_domain_apps
        if buckets != self.total_apps:
            raise InconsistentConfig(
                f"zero + one + multi = total_apps violated: "
                f"{self.zero_domain_apps} + {self.one_domain_apps} + {self.multi_domain_apps} != {self.total_apps}"
            )
        if self.multi_domain_total_entries < 2 * self.multi_domain_apps:
            raise InconsistentConfig(
                f"multi_domain_total_entries >= 2 x multi_domain_apps violated: "
                f"{self.multi_domain_total_entries} < 2 x {self.multi_domain_apps}"
            )
        if self.multi_domain_apps == 0 and self.multi_domain_total_entries:
            raise InconsistentConfig("multi_domain_total_entries must be 0 when multi_domain_apps is 0")
        entries = self.one_domain_apps + self.multi_domain_total_entries
        if sum(self.behavior_counts.values()) != entries:
            raise InconsistentConfig(
                f"sum(behavior_counts) = one_domain_apps + multi_domain_total_entries violated: "
                f"{sum(self.behavior_counts.values())} != {self.one_domain_apps} + {self.multi_domain_total_entries}"
            )
        if self.hang_delay_secs <= 0:
            raise InconsistentConfig("hang_delay_secs must be positive")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["behavior_counts"] = dict(sorted(self.behavior_counts.items()))
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "CorpusConfig":
        try:
            return cls(**raw)
        except TypeError as exc:
            raise InconsistentConfig(f"bad config fields: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "CorpusConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# Outcome counts 92/9/5/2/2 sum to 110 entries, so the 12 multi-domain apps
# carry 110 - 79 = 31 of them.
REFERENCE_CORPUS = CorpusConfig(
    total_apps=500,
    zero_domain_apps=409,
    one_domain_apps=79,
    multi_domain_apps=12,
    multi_domain_total_entries=31,
    behavior_counts={
        "dedicated_policy": 92,
        "not_found": 8,
        "placeholder": 1,
        "homepage_redirect": 5,
        "hang": 2,
        "server_error": 2,
    },
    seed=42,
)


@dataclass(frozen=True)
class Corpus:
    apps: tuple[GptMetadata, ...]
    behaviors: Mapping[str, PolicyBehavior]
    hang_delay_secs: float = DEFAULT_HANG_SECS
    policy_texts: Mapping[str, str] = field(default_factory=dict)

    @property
    def policy_urls(self) -> list[str]:
        return list(self.behaviors)

    @property
    def entry_count(self) -> int:
        return sum(len(a.actions or ()) for a in self.apps)

    def to_json(self) -> bytes:
        doc = {
            "hang_delay_secs": self.hang_delay_secs,
            "apps": [a.to_dict() for a in self.apps],
            "behaviors": [[url, b.value] for url, b in self.behaviors.items()],
        }
        return json.dumps(doc, ensure_ascii=False, sort_keys=True).encode("utf-8")

    def apps_jsonl(self) -> bytes:
        return jsonl_bytes(a.to_dict() for a in self.apps)


_WORDS = """
amber atlas birch cobalt delta ember fable garnet harbor indigo juniper kepler lumen
maple nimbus onyx pixel quartz raven sierra tundra umbra vertex willow xenon yonder
zephyr acorn beacon cinder drift echo fjord glacier hollow iris jasper kelp lotus
""".split()
_NAME_WORDS = """
Smart Quick Daily Pocket Expert Friendly Creative Data Travel Study Code Legal Health
Chef Writer Coach Tutor Planner Analyst Helper Guide Scout Buddy Mentor
""".split()
_CAPABILITIES = ("web_browsing", "image_generation", "code_interpreter", "canvas")
_ALNUM = string.ascii_letters + string.digits


def policy_text(domain: str) -> str:
    return (
        f"Privacy Policy for {domain}. This policy explains what personal information "
        f"the {domain} service collects when you use it through a conversational assistant, "
        "how that information is used to provide and improve the service, the third parties "
        "it may be shared with, how long it is retained, and the choices and rights you have, "
        "including access, correction and deletion. Contact the operator to exercise them."
    )


def _policy_url(domain: str, behavior: PolicyBehavior) -> str:
    if behavior is PolicyBehavior.PLACEHOLDER:
        return PLACEHOLDER_URL
    if behavior is PolicyBehavior.HOMEPAGE_REDIRECT:
        return f"http://{domain}/privacy-policy"
    return f"http://{domain}/privacy"


def generate_corpus(config: CorpusConfig) -> Corpus:
    """Synthesize apps and per-entry behaviors; a pure function of the config and its seed."""
    config.validate()
    rng = random.Random(config.seed)

    ids: list[str] = []
    seen: set[str] = set()
    while len(ids) < config.total_apps:
        candidate = "".join(rng.choices(_ALNUM, k=9))
        if candidate not in seen:
            seen.add(candidate)
            ids.append(candidate)

    buckets = [0] * config.zero_domain_apps + [1] * config.one_domain_apps + [2] * config.multi_domain_apps
    rng.shuffle(buckets)
    extra = config.multi_domain_total_entries - 2 * config.multi_domain_apps
    multi_slots = [i for i, b in enumerate(buckets) if b == 2]
    for _ in range(extra):
        buckets[rng.choice(multi_slots)] += 1

    behaviors: list[PolicyBehavior] = []
    for kind in PolicyBehavior:
        behaviors.extend([kind] * config.behavior_counts.get(kind.value, 0))
    rng.shuffle(behaviors)

    used_domains: set[str] = set()

    def fresh_domain() -> str:
        while True:
            domain = f"{rng.choice(_WORDS)}.{rng.choice(_WORDS)}.test"
            if domain in used_domains:
                domain = f"{rng.choice(_WORDS)}-{len(used_domains)}.{rng.choice(_WORDS)}.test"
            if domain not in used_domains:
                used_domains.add(domain)
                return domain

    apps: list[GptMetadata] = []
    url_behaviors: dict[str, PolicyBehavior] = {}
    next_behavior = iter(behaviors)
    for gizmo, n_domains in zip(ids, buckets):
        name = f"{rng.choice(_NAME_WORDS)} {rng.choice(_NAME_WORDS)}"
        actions = []
        for _ in range(n_domains):
            behavior = next(next_behavior)
            domain = fresh_domain()
            url = _policy_url(domain, behavior)
            url_behaviors[url] = behavior
            actions.append(ActionSpec(domain, url))
        knowledge = None
        if rng.random() < 0.25:
            knowledge = tuple(
                KnowledgeFile(f"{rng.choice(_WORDS)}-{i}.pdf", rng.randrange(1_000, 5_000_000))
                for i in range(rng.randint(1, 3))
            )
        capabilities = None
        if rng.random() < 0.7:
            capabilities = tuple(c for c in _CAPABILITIES if rng.random() < 0.5)
        conversation = None
        if rng.random() < 0.6:
            conversation = tuple(f"How can {name} help with {rng.choice(_WORDS)}?" for _ in range(rng.randint(1, 4)))
        apps.append(
            GptMetadata(
                gizmo_id=GizmoId(gizmo),
                name=name,
                instructions=f"You are {name}. Answer questions helpfully and concisely.",
                description=f"{name} assistant" if rng.random() < 0.8 else None,
                conversation=conversation,
                knowledge=knowledge,
                capabilities=capabilities,
                actions=tuple(actions) if actions else None,
            )
        )
    return Corpus(tuple(apps), url_behaviors, config.hang_delay_secs)


@dataclass(frozen=True)
class Route:
    status: int
    body: bytes = b""
    content_type: str = "text/html; charset=utf-8"
    headers: tuple[tuple[str, str], ...] = ()
    delay: float = 0.0


def _html(title: str, text: str) -> bytes:
    return (
        "<!doctype html><html><head><title>ignored</title>"
        "<style>body{font-family:sans-serif}</style>"
        "<script>window.analytics = [];</script></head>"
        f"<body><nav>Home</nav><h1>{title}</h1><p>{text}</p></body></html>"
    ).encode("utf-8")


def policy_page(text: str) -> bytes:
    """HTML body whose extracted text is exactly ``text``."""
    return (
        "<!doctype html><html><head><title>Privacy</title>"
        "<script>window.analytics = [];</script></head>"
        f"<body><main><p>{text}</p></main></body></html>"
    ).encode("utf-8")


class FixtureServer:
    """Threaded loopback HTTP server with a mutable route table."""

    def __init__(self, corpus: Corpus | None = None, port: int = 0, host: str = "127.0.0.1"):
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self.routes: dict[tuple[str, str], Route] = {}
        self.vhosts: set[str] = set()
        self.panels: dict[str, list[dict[str, str]]] = {}
        self.apps: dict[str, GptMetadata] = {}
        self.requests: Counter[tuple[str, str]] = Counter()
        self.store_request_limit: int | None = None
        self.store_requests = 0
        self._bind = (host, port)
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        if corpus is not None:
            self.load(corpus)

    # route table -------------------------------------------------------

    def add_route(self, host: str, path: str, route: Route) -> None:
        with self._lock:
            self.vhosts.add(host.lower())
            self.routes[(host.lower(), path)] = route

    def add_host(self, host: str) -> None:
        with self._lock:
            self.vhosts.add(host.lower())

    def set_policy_text(self, url: str, text: str) -> None:
        parts = urlsplit(url)
        self.add_route(parts.hostname or "", parts.path or "/", Route(200, policy_page(text)))

    def add_app(self, meta: GptMetadata) -> None:
        with self._lock:
            self.apps[str(meta.gizmo_id)] = meta
            self.panels[str(meta.gizmo_id)] = [
                {"domain": a.domain, "privacy_policy": a.privacy_policy} for a in meta.actions or ()
            ]

    def remove_app(self, gizmo_id: str) -> None:
        with self._lock:
            self.apps.pop(gizmo_id, None)
            self.panels.pop(gizmo_id, None)

    def add_policy(self, url: str, behavior: PolicyBehavior, hang_delay: float = DEFAULT_HANG_SECS, text: str | None = None) -> None:
        if behavior in (PolicyBehavior.PLACEHOLDER, PolicyBehavior.UNRESOLVABLE):
            return
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        path = parts.path or "/"
        home = Route(200, _html(f"Welcome to {host}", f"{host} builds tools for assistants. Sign up today."))
        self.add_route(host, "/", home)
        if behavior is PolicyBehavior.DEDICATED_POLICY:
            self.add_route(host, path, Route(200, policy_page(text or policy_text(host))))
        elif behavior is PolicyBehavior.HOMEPAGE_REDIRECT:
            self.add_route(host, path, Route(301, headers=(("Location", "/"),)))
        elif behavior is PolicyBehavior.NOT_FOUND:
            self.add_route(host, path, Route(404, b"not found", "text/plain"))
        elif behavior is PolicyBehavior.SERVER_ERROR:
            self.add_route(host, path, Route(500, b"internal error", "text/plain"))
        elif behavior is PolicyBehavior.HANG:
            self.add_route(host, path, Route(200, policy_page(policy_text(host)), delay=hang_delay))

    def load(self, corpus: Corpus) -> None:
        for meta in corpus.apps:
            self.add_app(meta)
        for url, behavior in corpus.behaviors.items():
            self.add_policy(url, behavior, corpus.hang_delay_secs, corpus.policy_texts.get(url))

    # lifecycle ---------------------------------------------------------

    @property
    def port(self) -> int:
        assert self._httpd is not None, "server not started"
        return self._httpd.server_address[1]

    @property
    def address(self) -> str:
        return f"127.0.0.1:{self.port}"

    @property
    def base_url(self) -> str:
        return f"http://{self.address}"

    def resolver(self) -> StaticResolver:
        with self._lock:
            return StaticResolver({h: self.address for h in self.vhosts})

    def start(self) -> "FixtureServer":
        try:
            httpd = ThreadingHTTPServer(self._bind, _make_handler(self))
        except OSError as exc:
            raise BindFailure(f"cannot bind {self._bind[0]}:{self._bind[1]}: {exc}") from exc
        httpd.daemon_threads = True
        httpd.block_on_close = False
        self._httpd = httpd
        self._stopping.clear()
        self._thread = threading.Thread(
            target=httpd.serve_forever, kwargs={"poll_interval": 0.05}, name="fixture-store", daemon=True
        )
        self._thread.start()
        log.info("fixture store listening on %s", self.base_url)
        return self

    def stop(self) -> None:
        self._stopping.set()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def __enter__(self) -> "FixtureServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    # request handling --------------------------------------------------

    def _store_response(self, path: str) -> Route | None:
        if path == "/_fixture/hosts":
            with self._lock:
                hosts = sorted(self.vhosts)
            return Route(200, json.dumps({"hosts": hosts}).encode(), "application/json")
        if path == "/_fixture/apps.jsonl":
            with self._lock:
                apps = list(self.apps.values())
            return Route(200, jsonl_bytes(a.to_dict() for a in apps), "application/x-ndjson")
        if not path.startswith("/g/g-"):
            return None
        rest = path[len("/g/g-") :]
        gizmo, _, tail = rest.partition("/")
        with self._lock:
            self.store_requests += 1
            over = self.store_request_limit is not None and self.store_requests > self.store_request_limit
            entries = self.panels.get(gizmo)
            meta = self.apps.get(gizmo)
        if over:
            raise ConnectionAbortedError("store request limit reached")
        if entries is None:
            return Route(404, b'{"error":"not found"}', "application/json")
        if tail == "privacy":
            body = json.dumps({"gizmo_id": gizmo, "entries": entries}).encode("utf-8")
            return Route(200, body, "application/json")
        if tail == "":
            assert meta is not None
            return Route(200, _html(meta.name, meta.description or meta.name))
        return Route(404, b"", "text/plain")

    def handle(self, host: str, path: str) -> Route | None:
        with self._lock:
            self.requests[(host, path)] += 1
            route = self.routes.get((host, path))
            known = host in self.vhosts
        if host in STORE_HOSTS and not known:
            return self._store_response(urlsplit(path).path)
        if route is None:
            return Route(404, b"no such page", "text/plain")
        return route

    def request_count(self, url: str) -> int:
        parts = urlsplit(url)
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        with self._lock:
            return self.requests[((parts.hostname or "").lower(), path)]


def _make_handler(server: FixtureServer) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        server_version = "fixture-store/1"

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug("%s " + fmt, self.address_string(), *args)

        def do_GET(self) -> None:
            host = (self.headers.get("Host") or "").rsplit(":", 1)[0].strip("[]").lower()
            try:
                route = server.handle(host, self.path)
            except ConnectionAbortedError:
                self.close_connection = True
                return
            assert route is not None
            if route.delay and server._stopping.wait(route.delay):
                return
            try:
                self.send_response(route.status)
                self.send_header("Content-Type", route.content_type)
                self.send_header("Content-Length", str(len(route.body)))
                for name, value in route.headers:
                    self.send_header(name, value)
                self.end_headers()
                self.wfile.write(route.body)
            except (BrokenPipeError, ConnectionResetError):
                pass

    return Handler


def serve(corpus: Corpus, port: int = 0) -> FixtureServer:
    return FixtureServer(corpus, port).start()
