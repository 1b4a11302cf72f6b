"""HTTP service wrapping the engine for long-running, multi-client use.

The store, configuration and providers are loaded once at startup and
shared read-only across requests; the CLI can proxy query-serving
commands to a running instance.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import citation as citation_mod
from .config import load_config
from .errors import (
    NoEvidenceError,
    StageRagError,
    TransportFamilyError,
    UserError,
)
from .runtime import build_engine
from .vectorstore import CorpusChunk, RetrievedChunk

SCHEMA_VERSION = 1


class CitationOut(BaseModel):
    label: str
    origin: str
    doc_id: int
    chunk_id: int
    url: str
    similarity: float
    title: str
    published_date: str | None = None


class AskRequest(BaseModel):
    query: str = Field(min_length=1)
    use_db: bool = True
    use_web: bool = True


class AskResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    answer: str
    citations: list[CitationOut]
    citation_index: str
    telemetry: list[dict]


class SearchRequest(BaseModel):
    query: str = Field(min_length=1)
    k: int = Field(default=3, ge=1)


class SearchHit(BaseModel):
    doc_id: int
    chunk_id: int
    similarity: float
    text: str
    url: str
    title: str


class SearchResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    hits: list[SearchHit]


class EvidenceChunkIn(BaseModel):
    doc_id: int
    chunk_id: int
    text: str = Field(min_length=1)
    origin: str = Field(default="DB", pattern="^(DB|WEB)$")
    url: str = ""
    title: str = ""


class CiteRequest(BaseModel):
    answer: str = Field(min_length=1)
    evidence: list[EvidenceChunkIn]
    threshold: float | None = Field(default=None, gt=0.0, lt=1.0)


class CiteResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    text: str
    citations: list[CitationOut]
    uncited_sentence_count: int


def _citations_out(cited: citation_mod.CitedAnswer) -> list[CitationOut]:
    return [
        CitationOut(
            label=c.label,
            origin=c.origin,
            doc_id=c.doc_id,
            chunk_id=c.chunk_id,
            url=c.source_url,
            similarity=c.similarity,
            title=c.title,
            published_date=c.published_date,
        )
        for c in cited.citations
    ]


def create_app(
    config_path: str | Path | None = None,
    store_path: str | Path | None = None,
    mock: bool = False,
    seed: int = 0,
) -> FastAPI:
    config = load_config(config_path)
    engine = build_engine(config, store_path=store_path, mock=mock, seed=seed)
    app = FastAPI(title="stagerag", version="0.1.0")
    app.state.engine = engine

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "store_chunks": len(engine.store) if engine.store else 0,
            "mock": mock,
        }

    @app.get("/config")
    def effective_config() -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": config.to_dict()}

    @app.post("/ask", response_model=AskResponse)
    def ask(req: AskRequest) -> AskResponse:
        try:
            cited, telemetry = engine.run(
                req.query, use_db=req.use_db, use_web=req.use_web
            )
        except NoEvidenceError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except TransportFamilyError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        except StageRagError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc
        return AskResponse(
            answer=cited.text,
            citations=_citations_out(cited),
            citation_index=citation_mod.render_citation_index(cited),
            telemetry=telemetry.to_dicts(include_timing=False),
        )

    @app.post("/search", response_model=SearchResponse)
    def search(req: SearchRequest) -> SearchResponse:
        if engine.store is None:
            raise HTTPException(status_code=409, detail="no store loaded")
        vec = engine.encoder.encode(req.query)
        hits = engine.store.search(vec, req.k)
        return SearchResponse(
            hits=[
                SearchHit(
                    doc_id=h.chunk.doc_id,
                    chunk_id=h.chunk.chunk_id,
                    similarity=h.similarity,
                    text=h.chunk.text,
                    url=h.chunk.source_url,
                    title=h.chunk.title,
                )
                for h in hits
            ]
        )

    @app.post("/cite", response_model=CiteResponse)
    def cite(req: CiteRequest) -> CiteResponse:
        encoder = engine.citation_encoder
        chunks = [
            RetrievedChunk(
                chunk=CorpusChunk(
                    doc_id=e.doc_id,
                    chunk_id=e.chunk_id,
                    text=e.text,
                    vector=encoder.encode(e.text),
                    source_url=e.url,
                    authority_score=0.5,
                    title=e.title,
                ),
                similarity=1.0,
                origin=e.origin,
                sub_query_index=0,
            )
            for e in req.evidence
        ]
        try:
            cited = citation_mod.attribute(
                req.answer,
                chunks,
                encoder,
                req.threshold
                if req.threshold is not None
                else engine.config.citation_threshold,
                engine.config.max_citations_per_sentence,
                engine.config.min_citation_sentence_chars,
            )
        except UserError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return CiteResponse(
            text=cited.text,
            citations=_citations_out(cited),
            uncited_sentence_count=cited.uncited_sentence_count,
        )

    return app
