"""Engine assembly shared by the CLI and the HTTP service."""

from __future__ import annotations

from pathlib import Path

from . import embeddings as emb_mod
from .agents import load_registry
from .config import PipelineConfig
from .gateway import LlmGateway, MockGateway
from .pipeline import PipelineEngine
from .telemetry import TelemetryLog
from .vectorstore import VectorStore
from .webretrieval import (
    FixtureFetcher,
    FixtureSearchProvider,
    HttpFetcher,
    LiveSearchProvider,
)


def build_engine(
    config: PipelineConfig,
    store_path: str | Path | None = None,
    mock: bool = False,
    seed: int = 0,
) -> PipelineEngine:
    """Wire providers according to configuration.

    ``mock`` swaps every provider (generation, embedding, search, fetch)
    for its deterministic stand-in in one switch; fixtures come from the
    configured fixture paths when present.
    """
    telemetry = TelemetryLog(config.telemetry_path)

    if mock:
        gateway = MockGateway(
            seed=seed, subquery_count=config.subquery_min, telemetry=telemetry
        )
        encoder = emb_mod.HashingEncoder(dimension=config.fallback_embedding_dim)
        search_provider = FixtureSearchProvider(config.search_fixture_path)
        fetcher = FixtureFetcher(_load_fetch_fixtures(config.fetch_fixture_path))
    else:
        gateway = LlmGateway(
            telemetry=telemetry,
            timeout=config.request_timeout,
            max_retries=config.max_retries,
            in_flight_cap=config.in_flight_cap,
        )
        accelerator = (
            config.accelerator_available
            if config.accelerator_available is not None
            else _detect_accelerator()
        )
        descriptor = emb_mod.select_embedding_provider(
            config.embedding_descriptors(),
            accelerator_available=accelerator,
            probe_timeout=config.probe_timeout,
            fallback_dimension=config.fallback_embedding_dim,
        )
        encoder = emb_mod.build_encoder(
            descriptor, fallback_dimension=config.fallback_embedding_dim
        )
        if config.search_endpoint == "mock":
            search_provider = FixtureSearchProvider(config.search_fixture_path)
            fetcher = FixtureFetcher(_load_fetch_fixtures(config.fetch_fixture_path))
        else:
            search_provider = LiveSearchProvider(
                config.search_endpoint, timeout=config.fetch_timeout
            )
            fetcher = HttpFetcher(
                timeout=config.fetch_timeout, user_agent=config.user_agent
            )

    store = None
    if store_path is not None and Path(store_path).exists():
        store = VectorStore.load(store_path)

    citation_encoder = encoder
    if config.citation_embedding_model and not mock:
        for desc in config.embedding_descriptors():
            if desc.model_id == config.citation_embedding_model:
                citation_encoder = emb_mod.build_encoder(
                    desc, fallback_dimension=config.fallback_embedding_dim
                )
                break

    registry = load_registry(config.agent_catalogue_path, config.default_agent)
    return PipelineEngine(
        config=config,
        gateway=gateway,
        encoder=encoder,
        store=store,
        registry=registry,
        search_provider=search_provider,
        fetcher=fetcher,
        citation_encoder=citation_encoder,
        telemetry=telemetry,
    )


def _detect_accelerator() -> bool:
    # binary gate only; full device enumeration is out of scope
    return Path("/dev/nvidia0").exists() or Path("/dev/nvidiactl").exists()


def _load_fetch_fixtures(path: str | None) -> dict:
    if not path or not Path(path).exists():
        return {}
    import json

    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    # fixture file: {url: {"content_type": ..., "body": "...utf-8 text..."}}
    return {
        url: (spec.get("content_type", "text/html"), spec["body"].encode("utf-8"))
        for url, spec in raw.items()
    }
