"""GPT app metadata records, identifier rules and the three-way classifier."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Mapping

DEFAULT_BASE_URL = "https://chatgpt.com"
GIZMO_ID_LENGTH = 9

_ALNUM = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")

METADATA_FIELDS = (
    "gizmo_id",
    "name",
    "instructions",
    "description",
    "conversation",
    "knowledge",
    "capabilities",
    "actions",
)


class InvalidGizmoId(ValueError):
    pass


class InvalidLength(InvalidGizmoId):
    pass


class InvalidCharacter(InvalidGizmoId):
    pass


class MetadataError(ValueError):
    """A metadata record violates its invariants; ``field`` names the slot."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class GizmoId(str):
    """Store identifier: exactly nine ASCII alphanumerics."""

    __slots__ = ()

    def __new__(cls, raw: str) -> "GizmoId":
        if not isinstance(raw, str):
            raise InvalidGizmoId(f"gizmo id must be text, got {type(raw).__name__}")
        if len(raw) != GIZMO_ID_LENGTH:
            raise InvalidLength(f"gizmo id must be {GIZMO_ID_LENGTH} characters, got {len(raw)}")
        bad = [c for c in raw if c not in _ALNUM]
        if bad:
            raise InvalidCharacter(f"gizmo id contains non-alphanumeric {bad[0]!r}")
        return super().__new__(cls, raw)

    @property
    def value(self) -> str:
        return str(self)

    def __repr__(self) -> str:
        return f"GizmoId({str(self)!r})"


def validate_gizmo_id(raw: str) -> GizmoId:
    return GizmoId(raw)


def build_access_url(gizmo_id: GizmoId, base_url: str = DEFAULT_BASE_URL) -> str:
    """Interaction-page URL for an app, e.g. ``https://chatgpt.com/g/g-1abcD2EFG``."""
    return f"{base_url.rstrip('/')}/g/g-{gizmo_id}"


class GptClass(str, enum.Enum):
    PROMPT_BASED = "prompt_based"
    KNOWLEDGE_BASED = "knowledge_based"
    ACTION_BASED = "action_based"


@dataclass(frozen=True)
class KnowledgeFile:
    name: str
    bytes: int

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise MetadataError("knowledge", "file name must be non-empty text")
        if isinstance(self.bytes, bool) or not isinstance(self.bytes, int) or self.bytes < 0:
            raise MetadataError("knowledge", "file size must be an integer >= 0")


@dataclass(frozen=True)
class ActionSpec:
    domain: str
    privacy_policy: str

    def __post_init__(self) -> None:
        for attr in ("domain", "privacy_policy"):
            value = getattr(self, attr)
            if not isinstance(value, str) or not value.strip():
                raise MetadataError("actions", f"{attr} must be non-empty text")


@dataclass(frozen=True)
class GptMetadata:
    """One app's metadata slots. ``None`` means the slot was never supplied."""

    gizmo_id: GizmoId
    name: str
    instructions: str
    description: str | None = None
    conversation: tuple[str, ...] | None = None
    knowledge: tuple[KnowledgeFile, ...] | None = None
    capabilities: tuple[str, ...] | None = None
    actions: tuple[ActionSpec, ...] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.gizmo_id, GizmoId):
            raise MetadataError("gizmo_id", "must be a validated GizmoId")
        # empty-shell apps (name only) are excluded
        for slot in ("name", "instructions"):
            value = getattr(self, slot)
            if not isinstance(value, str) or not value.strip():
                raise MetadataError(slot, "mandatory field is missing or empty")
        if self.description is not None and not isinstance(self.description, str):
            raise MetadataError("description", "must be text")
        for slot in ("conversation", "capabilities"):
            value = getattr(self, slot)
            if value is not None and not all(isinstance(v, str) for v in value):
                raise MetadataError(slot, "must be a list of text")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "gizmo_id": str(self.gizmo_id),
            "name": self.name,
            "instructions": self.instructions,
        }
        if self.description is not None:
            out["description"] = self.description
        if self.conversation is not None:
            out["conversation"] = list(self.conversation)
        if self.knowledge is not None:
            out["knowledge"] = [{"name": k.name, "bytes": k.bytes} for k in self.knowledge]
        if self.capabilities is not None:
            out["capabilities"] = list(self.capabilities)
        if self.actions is not None:
            out["actions"] = [
                {"domain": a.domain, "privacy_policy": a.privacy_policy} for a in self.actions
            ]
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "GptMetadata":
        """Build from the JSON Lines ingestion shape, raising MetadataError on any violation."""
        if not isinstance(raw, Mapping):
            raise MetadataError("<record>", "expected a JSON object")
        unknown = sorted(set(raw) - set(METADATA_FIELDS))
        if unknown:
            raise MetadataError(unknown[0], "unknown field")
        for key, value in raw.items():
            if value is None:
                raise MetadataError(key, "null is not allowed; omit absent fields")
        if "gizmo_id" not in raw:
            raise MetadataError("gizmo_id", "mandatory field is missing")
        try:
            gizmo_id = GizmoId(raw["gizmo_id"])
        except InvalidGizmoId as exc:
            raise MetadataError("gizmo_id", str(exc)) from exc

        def str_list(key: str) -> tuple[str, ...] | None:
            if key not in raw:
                return None
            value = raw[key]
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise MetadataError(key, "must be a list of text")
            return tuple(value)

        def obj_list(key: str, build):
            if key not in raw:
                return None
            value = raw[key]
            if not isinstance(value, list):
                raise MetadataError(key, "must be a list")
            items = []
            for item in value:
                if not isinstance(item, Mapping):
                    raise MetadataError(key, "entries must be objects")
                items.append(build(item))
            return tuple(items)

        def knowledge(item: Mapping[str, Any]) -> KnowledgeFile:
            if set(item) != {"name", "bytes"}:
                raise MetadataError("knowledge", "entries need exactly name and bytes")
            return KnowledgeFile(item["name"], item["bytes"])

        def action(item: Mapping[str, Any]) -> ActionSpec:
            if set(item) != {"domain", "privacy_policy"}:
                raise MetadataError("actions", "entries need exactly domain and privacy_policy")
            return ActionSpec(item["domain"], item["privacy_policy"])

        return cls(
            gizmo_id=gizmo_id,
            name=raw.get("name"),  # type: ignore[arg-type]
            instructions=raw.get("instructions"),  # type: ignore[arg-type]
            description=raw.get("description"),
            conversation=str_list("conversation"),
            knowledge=obj_list("knowledge", knowledge),
            capabilities=str_list("capabilities"),
            actions=obj_list("actions", action),
        )


def classify(meta: GptMetadata) -> GptClass:
    """Actions decide alone; otherwise uploaded knowledge; otherwise prompt-only.

    Present-but-empty lists count as absent.
    """
    if meta.actions:
        return GptClass.ACTION_BASED
    if meta.knowledge:
        return GptClass.KNOWLEDGE_BASED
    return GptClass.PROMPT_BASED
