"""Declarative pipeline configuration.

Every tunable behavior of the engine lives here, loaded from one YAML
file. Unknown keys are a hard error: the whole premise of the framework
is declarative control, and a silently ignored typo defeats it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .embeddings import DEFAULT_FALLBACK_DIM, EmbeddingProviderDescriptor
from .errors import ConfigError
from .gateway import ModelDescriptor, validate_models

CONFIG_ENV_VAR = "STAGERAG_CONFIG"

DEFAULT_GENERATION_MODELS = [
    {"model_id": "small-1b", "scale_tag": "small", "endpoint": "mock"},
    {"model_id": "large-27b", "scale_tag": "large", "endpoint": "mock"},
]

DEFAULT_EMBEDDING_RANKING = [
    {
        "model_id": "hashing-fallback",
        "rank": 1,
        "endpoint": "builtin",
        "requires_accelerator": False,
    }
]

DEFAULT_TECHNICAL_KEYWORDS = [
    "fertilizer", "nitrogen", "soil", "irrigation", "pest", "seed",
    "yield", "crop", "pesticide", "harvest", "sowing", "dosage",
]

DEFAULT_POLICY_KEYWORDS = [
    "policy", "scheme", "subsidy", "regulation", "msp", "act",
    "reform", "export", "import", "loan", "insurance", "procurement",
]

DEFAULT_AUTHORITY_DOMAINS = {
    "gov": 1.0,
    "gov.in": 1.0,
    "nic.in": 1.0,
    "edu": 0.9,
    "ac.in": 0.9,
    "org": 0.7,
}

DEFAULT_AGRICULTURE_KEYWORDS = [
    "agriculture", "crop", "farmer", "soil", "irrigation", "fertilizer",
    "harvest", "seed", "pesticide", "yield", "farm", "horticulture",
    "livestock", "dairy", "paddy", "wheat", "rice", "kharif", "rabi",
    "msp",
]

DEFAULT_REGIONAL_KEYWORDS = [
    "india", "indian", "bharat", "icar", "panchayat", "rupee", "state",
    "district", "monsoon", "hindi",
]


@dataclass(frozen=True)
class PipelineConfig:
    # Stage temperatures
    refine_temperature: float = 0.1
    decompose_temperature: float = 0.5
    synth_temperature: float = 0.2

    # Retrieval
    db_top_k: int = 3
    web_top_n: int = 5
    subquery_min: int = 3
    subquery_max: int = 5
    search_domain_suffix: str = "agriculture site:.gov.in"

    # Citation
    citation_threshold: float = 0.75
    max_citations_per_sentence: int = 4
    min_citation_sentence_chars: int = 25
    citation_embedding_model: str | None = None  # defaults to retrieval provider

    # Scoring
    lambda_weight: float = 0.7

    # Synthesis
    answer_word_min: int = 800
    answer_word_max: int = 1200
    max_tokens: int = 2048

    # Providers
    embedding_model_ranking: list[dict] = field(
        default_factory=lambda: [dict(d) for d in DEFAULT_EMBEDDING_RANKING]
    )
    generation_models: list[dict] = field(
        default_factory=lambda: [dict(d) for d in DEFAULT_GENERATION_MODELS]
    )
    fallback_embedding_dim: int = DEFAULT_FALLBACK_DIM
    accelerator_available: bool | None = None  # None = auto-probe
    probe_timeout: float = 2.0
    request_timeout: float = 120.0
    max_retries: int = 2
    in_flight_cap: int = 4

    # Agents
    agent_catalogue_path: str = "agents.yaml"
    default_agent: str = "crop_specialist"
    max_expansion_terms: int = 5
    enhance_after_retrieval: bool = False  # fidelity flag; prose order default

    # Model routing registers
    technical_keywords: list[str] = field(
        default_factory=lambda: list(DEFAULT_TECHNICAL_KEYWORDS)
    )
    policy_keywords: list[str] = field(
        default_factory=lambda: list(DEFAULT_POLICY_KEYWORDS)
    )

    # Chunking
    chunk_size: int = 1500
    chunk_overlap: int = 200
    chunk_boundary_slack: int = 100

    # Web fetch
    fetch_timeout: float = 10.0
    user_agent: str = "stagerag/0.1 (+responsible-retrieval)"
    ocr_enabled: bool = False
    ocr_page_limit: int = 20
    search_endpoint: str = "mock"
    search_fixture_path: str | None = None
    fetch_fixture_path: str | None = None

    # Concurrency
    max_workers: int = 8

    # Corpus quality heuristics
    authority_domains: dict = field(
        default_factory=lambda: dict(DEFAULT_AUTHORITY_DOMAINS)
    )
    agriculture_keywords: list[str] = field(
        default_factory=lambda: list(DEFAULT_AGRICULTURE_KEYWORDS)
    )
    regional_keywords: list[str] = field(
        default_factory=lambda: list(DEFAULT_REGIONAL_KEYWORDS)
    )
    relevance_match_cap: int = 20
    regional_match_cap: int = 10
    richness_token_cap: int = 50
    length_norm_chars: int = 5000
    success_quality_cutoff: float = 0.5
    host_preference_cutoff: float = 0.7
    dedup_methods: list[str] = field(
        default_factory=lambda: ["url", "url_hash", "content_hash", "title"]
    )

    # Telemetry
    telemetry_path: str | None = None

    def validate(self) -> "PipelineConfig":
        def check(cond: bool, invariant: str):
            if not cond:
                raise ConfigError(f"config invariant violated: {invariant}")

        for name in ("refine_temperature", "decompose_temperature", "synth_temperature"):
            value = getattr(self, name)
            check(0.0 <= value <= 2.0, f"{name} in [0, 2] (got {value})")
        check(
            0.0 < self.citation_threshold < 1.0,
            f"citation_threshold in (0, 1) (got {self.citation_threshold})",
        )
        check(
            0.0 <= self.lambda_weight <= 1.0,
            f"lambda_weight in [0, 1] (got {self.lambda_weight})",
        )
        check(self.db_top_k >= 1, "db_top_k >= 1")
        check(self.web_top_n >= 1, "web_top_n >= 1")
        check(self.subquery_min >= 1, "subquery_min >= 1")
        check(
            self.subquery_min <= self.subquery_max,
            "subquery_min <= subquery_max",
        )
        check(
            self.answer_word_min >= 1 and self.answer_word_min <= self.answer_word_max,
            "answer_word_min <= answer_word_max, both positive",
        )
        check(bool(self.embedding_model_ranking), "embedding_model_ranking non-empty")
        check(self.chunk_overlap < self.chunk_size, "chunk_overlap < chunk_size")
        check(self.max_workers >= 1, "max_workers >= 1")
        ranks = [d.get("rank") for d in self.embedding_model_ranking]
        check(len(ranks) == len(set(ranks)), "embedding provider ranks unique")
        validate_models(self.model_descriptors())
        return self

    def model_descriptors(self) -> list[ModelDescriptor]:
        out = []
        for entry in self.generation_models:
            try:
                out.append(
                    ModelDescriptor(
                        model_id=entry["model_id"],
                        scale_tag=entry["scale_tag"],
                        endpoint=entry.get("endpoint", "mock"),
                        capabilities=frozenset(entry.get("capabilities", ())),
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"generation model entry missing {exc}") from exc
        return out

    def embedding_descriptors(self) -> list[EmbeddingProviderDescriptor]:
        out = []
        for entry in self.embedding_model_ranking:
            try:
                out.append(
                    EmbeddingProviderDescriptor(
                        model_id=entry["model_id"],
                        rank=int(entry["rank"]),
                        endpoint=entry.get("endpoint", "builtin"),
                        requires_accelerator=bool(
                            entry.get("requires_accelerator", False)
                        ),
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"embedding provider entry missing {exc}") from exc
        return out

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_NAMES = {f.name for f in fields(PipelineConfig)}


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load and validate configuration.

    Precedence: explicit path argument, then the STAGERAG_CONFIG
    environment variable, then built-in defaults. Pure in the file
    bytes: the same file always yields an identical PipelineConfig.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    overrides: dict = {}
    if path is not None:
        path = Path(path)
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            loaded = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must be a mapping at top level")
        unknown = sorted(set(loaded) - _FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        overrides = loaded
    return PipelineConfig(**overrides).validate()


def with_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    return replace(config, **overrides).validate()
