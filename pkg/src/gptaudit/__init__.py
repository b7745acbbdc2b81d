"""Metadata classification, privacy-panel collection and policy-link auditing for GPT store apps."""

from .analysis import audit_distribution, classification_distribution, domain_count_distribution, domain_frequency
from .audit import AuditOutcome, AuditPolicy, AuditRecord, Auditor, audit_corpus, audit_link, extract_text
from .driver import PrivacyEntry, PrivacyPanel, SimulatedDriver, fetch_privacy_panel, normalize_domain
from .fixture import REFERENCE_CORPUS, CorpusConfig, FixtureServer, generate_corpus, serve
from .model import GizmoId, GptClass, GptMetadata, build_access_url, classify, validate_gizmo_id
from .store import Snapshot, diff_snapshots, load_snapshot, write_snapshot

__version__ = "0.1.0"
