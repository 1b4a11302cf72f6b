"""Six-stage query orchestration: refine, decompose, retrieve in
parallel, enhance with domain agents, synthesize, cite.

Graceful degradation contract: once any evidence source exists, only the
synthesis stage may abort a run. Individual sub-query or document
failures shrink the evidence set and are logged as degradation events.
"""

from __future__ import annotations

import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import agents as agents_mod
from . import citation as citation_mod
from . import webretrieval as web_mod
from .config import PipelineConfig
from .errors import NoEvidenceError, PipelineStageError
from .gateway import GenerationRequest, ModelDescriptor, first_small, select_model
from .telemetry import TelemetryLog
from .vectorstore import ORIGIN_WEB, CorpusChunk, RetrievedChunk, VectorStore
from .vectorstore import authority_score_for, chunk_spans

logger = logging.getLogger(__name__)

STAGES = ("refine", "decompose", "retrieve", "enhance", "synthesize", "cite")


@dataclass
class QueryEnvelope:
    raw: str
    refined: str = ""
    sub_queries: list[str] = field(default_factory=list)
    received_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(
            timespec="seconds"
        )
    )


@dataclass
class EvidenceBundle:
    db_chunks: list[RetrievedChunk] = field(default_factory=list)
    web_chunks: list[RetrievedChunk] = field(default_factory=list)

    def all_chunks(self) -> list[RetrievedChunk]:
        return list(self.db_chunks) + list(self.web_chunks)

    def __len__(self) -> int:
        return len(self.db_chunks) + len(self.web_chunks)


@dataclass
class StageRecord:
    stage: str
    index: int
    duration_ms: float
    temperature: float | None = None
    model_id: str | None = None
    counts: dict = field(default_factory=dict)
    degradations: list[str] = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "stage": self.stage,
            "index": self.index,
            "temperature": self.temperature,
            "model_id": self.model_id,
            "counts": self.counts,
            "degradations": self.degradations,
        }
        if include_timing:
            out["duration_ms"] = self.duration_ms
        return out


@dataclass
class RunTelemetry:
    stages: list[StageRecord] = field(default_factory=list)

    def to_dicts(self, include_timing: bool = True) -> list[dict]:
        return [s.to_dict(include_timing) for s in self.stages]


_NUMBERED = re.compile(r"^\s*(?:\d+[.)]\s*|[-*•]\s*)(.+?)\s*$")


def parse_subquery_lines(completion: str) -> list[str]:
    out = []
    for line in completion.splitlines():
        match = _NUMBERED.match(line)
        if match and match.group(1).strip():
            out.append(match.group(1).strip())
    return out


def refine_query(
    raw: str, gateway, small_model: ModelDescriptor, config: PipelineConfig,
    record: StageRecord | None = None,
) -> str:
    raw = raw.strip()
    if not raw:
        raise PipelineStageError("refine", "query is empty")
    try:
        completion = gateway.generate(
            GenerationRequest(
                prompt=f"Refine: {raw}",
                temperature=config.refine_temperature,
                max_tokens=config.max_tokens,
                model_id=small_model.model_id,
            ),
            small_model,
            stage="refine",
        )
    except Exception as exc:
        logger.warning("refinement failed (%s); using raw query", exc)
        if record is not None:
            record.degradations.append(f"refine-fallback: {exc}")
        return raw
    refined = completion.strip().splitlines()[0].strip() if completion.strip() else ""
    if not refined:
        if record is not None:
            record.degradations.append("refine-empty-completion")
        return raw
    return refined


def decompose_query(
    refined: str, gateway, small_model: ModelDescriptor, config: PipelineConfig,
    record: StageRecord | None = None,
) -> list[str]:
    if not refined.strip():
        raise PipelineStageError("decompose", "refined query is empty")
    prompt = f"Decompose into 3-5 perspectives: {refined}"
    sub_queries: list[str] = []
    for attempt in range(2):  # one corrective re-prompt, then fall back
        try:
            completion = gateway.generate(
                GenerationRequest(
                    prompt=prompt
                    if attempt == 0
                    else f"{prompt}\nAnswer strictly as a numbered list.",
                    temperature=config.decompose_temperature,
                    max_tokens=config.max_tokens,
                    model_id=small_model.model_id,
                ),
                small_model,
                stage="decompose",
            )
        except Exception as exc:
            if record is not None:
                record.degradations.append(f"decompose-error: {exc}")
            break
        sub_queries = parse_subquery_lines(completion)
        if sub_queries:
            break
    if not sub_queries:
        if record is not None:
            record.degradations.append("decompose-unparseable")
        sub_queries = [refined]
    if len(sub_queries) > config.subquery_max:
        sub_queries = sub_queries[: config.subquery_max]
    while len(sub_queries) < config.subquery_min:
        if record is not None:
            record.degradations.append("decompose-padded")
        sub_queries.append(refined)
    return sub_queries


def retrieve_parallel(
    sub_queries: list[str],
    db_arm,
    web_arm,
    registry: agents_mod.AgentRegistry | None,
    config: PipelineConfig,
    record: StageRecord | None = None,
) -> EvidenceBundle:
    """Run both retrieval arms for every sub-query concurrently.

    ``db_arm(enhanced_query, index)`` and ``web_arm(enhanced_query,
    index)`` each return a list of RetrievedChunk. Agent enhancement is
    applied before retrieval (config flag restores the literal
    enhance-after order for fidelity experiments). The resulting bundle
    is canonically ordered and deduplicated on (origin, doc, chunk),
    keeping the highest similarity, so parallel and sequential execution
    agree exactly.
    """
    if not sub_queries:
        raise PipelineStageError("retrieve", "no sub-queries")
    enhanced = list(sub_queries)
    if registry is not None and not config.enhance_after_retrieval:
        enhanced = [
            agents_mod.enhance_subquery(
                sq,
                agents_mod.select_agent(registry, sq),
                config.max_expansion_terms,
            )
            for sq in sub_queries
        ]

    tasks = []
    for i, sq in enumerate(enhanced):
        tasks.append(("db", i, sq, db_arm))
        tasks.append(("web", i, sq, web_arm))

    results: dict[tuple[str, int], list[RetrievedChunk]] = {}
    pool_size = min(max(1, 2 * len(sub_queries)), config.max_workers)
    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        futures = {
            pool.submit(arm, sq, i): (kind, i) for kind, i, sq, arm in tasks
        }
        for future, (kind, i) in futures.items():
            try:
                results[(kind, i)] = future.result()
            except Exception as exc:
                logger.warning("%s arm failed for sub-query %d: %s", kind, i, exc)
                if record is not None:
                    record.degradations.append(f"{kind}-arm-{i}: {exc}")
                results[(kind, i)] = []

    bundle = EvidenceBundle()
    for kind, chunks_attr in (("db", "db_chunks"), ("web", "web_chunks")):
        best: dict[tuple[str, int, int], RetrievedChunk] = {}
        for i in range(len(enhanced)):
            for rc in results.get((kind, i), []):
                key = (rc.origin, rc.chunk.doc_id, rc.chunk.chunk_id)
                kept = best.get(key)
                if kept is None or rc.similarity > kept.similarity:
                    best[key] = rc
        ordered = sorted(
            best.values(),
            key=lambda rc: (rc.chunk.doc_id, rc.chunk.chunk_id),
        )
        setattr(bundle, chunks_attr, ordered)

    if len(bundle) == 0:
        raise NoEvidenceError(
            "every sub-query yielded zero evidence from both arms"
        )
    return bundle


def build_synthesis_prompt(
    refined: str, bundle: EvidenceBundle, config: PipelineConfig
) -> str:
    lines = ["Synthesize from:"]
    for rc in bundle.all_chunks():
        flat = " ".join(rc.chunk.text.split())
        lines.append(f"{rc.label} {flat}")
    lines.append("")
    lines.append(f"Question: {refined}")
    lines.append(
        f"Write a well-structured answer of {config.answer_word_min}-"
        f"{config.answer_word_max} words integrating the evidence above."
    )
    return "\n".join(lines)


def synthesize(
    refined: str,
    bundle: EvidenceBundle,
    gateway,
    models: list[ModelDescriptor],
    config: PipelineConfig,
) -> tuple[str, ModelDescriptor]:
    if len(bundle) == 0:
        raise PipelineStageError("synthesize", "evidence bundle is empty")
    model = select_model(
        refined, models, config.policy_keywords, config.technical_keywords
    )
    answer = gateway.generate(
        GenerationRequest(
            prompt=build_synthesis_prompt(refined, bundle, config),
            temperature=config.synth_temperature,
            max_tokens=config.max_tokens,
            model_id=model.model_id,
        ),
        model,
        stage="synthesize",
    )
    return answer, model


class PipelineEngine:
    """Assembled handles for running queries end to end.

    Shared state (config, store, registry, encoders) is read-only during
    runs, so one engine can serve concurrent queries.
    """

    def __init__(
        self,
        config: PipelineConfig,
        gateway,
        encoder,
        store: VectorStore | None,
        registry: agents_mod.AgentRegistry | None,
        search_provider=None,
        fetcher=None,
        citation_encoder=None,
        telemetry: TelemetryLog | None = None,
    ):
        self.config = config
        self.gateway = gateway
        self.encoder = encoder
        self.store = store
        self.registry = registry
        self.search_provider = search_provider
        self.fetcher = fetcher
        self.citation_encoder = citation_encoder or encoder
        self.telemetry = telemetry or TelemetryLog()
        self.models = config.model_descriptors()

    # ── Retrieval arms ──────────────────────────────────────────────

    def _db_arm(self, sub_query: str, index: int) -> list[RetrievedChunk]:
        if self.store is None or len(self.store) == 0:
            return []
        vec = self.encoder.encode(sub_query)
        return self.store.search(vec, self.config.db_top_k, sub_query_index=index)

    def _web_arm(self, sub_query: str, index: int) -> list[RetrievedChunk]:
        if self.search_provider is None or self.fetcher is None:
            return []
        candidates = web_mod.web_search(
            sub_query, self.config.search_domain_suffix, self.search_provider
        )
        selected = web_mod.select_articles(
            candidates,
            sub_query,
            self.config.web_top_n,
            self.gateway,
            first_small(self.models),
        )
        query_vec = self.encoder.encode(sub_query)
        chunks: list[RetrievedChunk] = []
        for doc_pos, candidate in enumerate(selected):
            try:
                doc = web_mod.extract_content(
                    candidate,
                    self.fetcher,
                    ocr_enabled=self.config.ocr_enabled,
                    ocr_page_limit=self.config.ocr_page_limit,
                )
            except Exception as exc:
                logger.warning("dropping %s: %s", candidate.url, exc)
                continue
            doc_id = index * self.config.web_top_n + doc_pos + 1
            spans = chunk_spans(
                doc.body_text,
                self.config.chunk_size,
                self.config.chunk_overlap,
                self.config.chunk_boundary_slack,
            )
            texts = [doc.body_text[a:b] for a, b in spans]
            vectors = self.encoder.encode_batch(texts)
            for chunk_id, (text, vec) in enumerate(zip(texts, vectors), start=1):
                sim = float(vec.values @ query_vec.values)
                chunks.append(
                    RetrievedChunk(
                        chunk=CorpusChunk(
                            doc_id=doc_id,
                            chunk_id=chunk_id,
                            text=text,
                            vector=vec,
                            source_url=doc.url,
                            authority_score=authority_score_for(
                                doc.url, self.config.authority_domains
                            ),
                            title=doc.title,
                            published_date=doc.fetched_at,
                        ),
                        similarity=sim,
                        origin=ORIGIN_WEB,
                        sub_query_index=index,
                    )
                )
        return chunks

    # ── End-to-end run ──────────────────────────────────────────────

    def run(
        self, raw: str, use_db: bool = True, use_web: bool = True
    ) -> tuple[citation_mod.CitedAnswer, RunTelemetry]:
        run_tel = RunTelemetry()
        small = first_small(self.models)

        def timed(stage: str, index: int, temperature, fn):
            record = StageRecord(
                stage=stage, index=index, duration_ms=0.0, temperature=temperature
            )
            start = time.monotonic()
            try:
                result = fn(record)
            except NoEvidenceError:
                raise
            except PipelineStageError:
                raise
            except Exception as exc:
                raise PipelineStageError(stage, str(exc)) from exc
            finally:
                record.duration_ms = (time.monotonic() - start) * 1000.0
                run_tel.stages.append(record)
                self.telemetry.record("stage", **record.to_dict())
            return result, record

        envelope = QueryEnvelope(raw=raw)

        refined, rec = timed(
            "refine",
            1,
            self.config.refine_temperature,
            lambda r: refine_query(raw, self.gateway, small, self.config, r),
        )
        envelope.refined = refined
        rec.model_id = small.model_id

        sub_queries, rec = timed(
            "decompose",
            2,
            self.config.decompose_temperature,
            lambda r: decompose_query(refined, self.gateway, small, self.config, r),
        )
        envelope.sub_queries = sub_queries
        rec.model_id = small.model_id
        rec.counts["sub_queries"] = len(sub_queries)

        db_arm = self._db_arm if use_db else (lambda sq, i: [])
        web_arm = self._web_arm if use_web else (lambda sq, i: [])
        bundle, rec = timed(
            "retrieve",
            3,
            None,
            lambda r: retrieve_parallel(
                sub_queries, db_arm, web_arm, None, self.config, r
            )
            if self.config.enhance_after_retrieval or self.registry is None
            else retrieve_parallel(
                sub_queries, db_arm, web_arm, self.registry, self.config, r
            ),
        )
        rec.counts["db_chunks"] = len(bundle.db_chunks)
        rec.counts["web_chunks"] = len(bundle.web_chunks)

        # Stage 4 is a no-op pass when enhancement already ran before
        # retrieval; the record keeps the per-stage telemetry shape.
        def enhance_stage(record):
            if self.registry is None:
                return sub_queries
            chosen = [
                agents_mod.select_agent(self.registry, sq).name
                for sq in sub_queries
            ]
            record.counts["agents"] = chosen
            if self.config.enhance_after_retrieval:
                return [
                    agents_mod.enhance_subquery(
                        sq,
                        agents_mod.select_agent(self.registry, sq),
                        self.config.max_expansion_terms,
                    )
                    for sq in sub_queries
                ]
            return sub_queries

        _, rec = timed("enhance", 4, None, enhance_stage)

        (answer, model), rec = timed(
            "synthesize",
            5,
            self.config.synth_temperature,
            lambda r: synthesize(
                refined, bundle, self.gateway, self.models, self.config
            ),
        )
        rec.model_id = model.model_id
        rec.counts["answer_chars"] = len(answer)

        cited, rec = timed(
            "cite",
            6,
            None,
            lambda r: citation_mod.attribute(
                answer,
                bundle.all_chunks(),
                self.citation_encoder,
                self.config.citation_threshold,
                self.config.max_citations_per_sentence,
                self.config.min_citation_sentence_chars,
            ),
        )
        rec.counts["citations"] = len(cited.citations)
        rec.counts["uncited_sentences"] = cited.uncited_sentence_count

        return cited, run_tel
