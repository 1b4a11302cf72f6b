"""Command-line entry point.

Exit codes: 0 success, 1 user error, 2 provider/transport error,
3 internal error. ``--mock`` swaps every provider for its deterministic
stand-in; ``--seed`` makes mock runs byte-reproducible.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import citation as citation_mod
from . import corpus as corpus_mod
from . import evalstats
from .agents import load_registry
from .config import load_config
from .embeddings import HashingEncoder
from .errors import (
    NoEvidenceError,
    StageRagError,
    TransportFamilyError,
    UserError,
)
from .runtime import build_engine
from .telemetry import TelemetryLog
from .vectorstore import CorpusChunk, RetrievedChunk, VectorStore, ingest_corpus

SCHEMA_VERSION = 1


@click.group()
def cli():
    """Staged retrieval-augmented answering with deterministic citations."""


def _engine(config_path, store, mock, seed):
    config = load_config(config_path)
    return build_engine(config, store_path=store, mock=mock, seed=seed)


@cli.command()
@click.argument("query")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Config file (overrides STAGERAG_CONFIG).")
@click.option("--store", type=click.Path(), default=None, help="Vector store file.")
@click.option("--mock", is_flag=True, help="Use deterministic mock providers.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-db", is_flag=True, help="Disable database retrieval.")
@click.option("--no-web", is_flag=True, help="Disable web retrieval.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("--server", default=None, help="Proxy to a running service URL.")
def ask(query, config_path, store, mock, seed, no_db, no_web, as_json, server):
    """Answer QUERY through the full staged pipeline."""
    if server:
        import httpx

        resp = httpx.post(
            f"{server.rstrip('/')}/ask",
            json={"query": query, "use_db": not no_db, "use_web": not no_web},
            timeout=600.0,
        )
        resp.raise_for_status()
        payload = resp.json()
        if as_json:
            click.echo(json.dumps(payload, ensure_ascii=False, indent=2))
        else:
            click.echo(payload["answer"])
            click.echo()
            click.echo(payload["citation_index"])
        return
    engine = _engine(config_path, store, mock, seed)
    cited, telemetry = engine.run(query, use_db=not no_db, use_web=not no_web)
    if as_json:
        click.echo(
            json.dumps(
                {
                    "schema_version": SCHEMA_VERSION,
                    "answer": cited.text,
                    "citations": [
                        {
                            "label": c.label,
                            "url": c.source_url,
                            "similarity": c.similarity,
                            "title": c.title,
                            "origin": c.origin,
                        }
                        for c in cited.citations
                    ],
                    # per-stage timings live in the telemetry file; they
                    # are excluded here so output is run-reproducible
                    "telemetry": telemetry.to_dicts(include_timing=False),
                },
                ensure_ascii=False,
                indent=2,
            )
        )
    else:
        click.echo(cited.text)
        click.echo()
        click.echo(citation_mod.render_citation_index(cited))


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--mock", is_flag=True, help="Encode with the built-in fallback encoder.")
@click.option("--json", "as_json", is_flag=True)
def ingest(corpus_path, store_path, config_path, mock, as_json):
    """Chunk and index a corpus JSONL file into a vector store."""
    config = load_config(config_path)
    store_file = Path(store_path)
    store = VectorStore.load(store_file) if store_file.exists() else VectorStore()
    if mock:
        encoder = HashingEncoder(dimension=config.fallback_embedding_dim)
    else:
        engine = build_engine(config, mock=False)
        encoder = engine.encoder
    stats = ingest_corpus(
        corpus_path,
        store,
        encoder,
        authority_domains=config.authority_domains,
        chunk_size=config.chunk_size,
        chunk_overlap=config.chunk_overlap,
        chunk_slack=config.chunk_boundary_slack,
    )
    store.save(store_file)
    result = {
        "schema_version": SCHEMA_VERSION,
        "docs": stats.docs,
        "chunks": stats.chunks,
        "skipped": stats.skipped,
        "total_chunks": len(store),
    }
    if as_json:
        click.echo(json.dumps(result))
    else:
        click.echo(
            f"ingested {stats.docs} docs / {stats.chunks} chunks "
            f"({stats.skipped} skipped); store now holds {len(store)} chunks"
        )


@cli.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("-k", "top_k", type=int, default=3, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
def search(store_path, query, top_k, config_path):
    """Dense top-k search over a store; prints a JSON result list."""
    config = load_config(config_path)
    store = VectorStore.load(store_path)
    encoder = HashingEncoder(dimension=store.dimension or config.fallback_embedding_dim)
    hits = store.search(encoder.encode(query), top_k)
    click.echo(
        json.dumps(
            [
                {
                    "doc_id": h.chunk.doc_id,
                    "chunk_id": h.chunk.chunk_id,
                    "similarity": h.similarity,
                    "url": h.chunk.source_url,
                    "title": h.chunk.title,
                    "text": h.chunk.text,
                }
                for h in hits
            ],
            ensure_ascii=False,
            indent=2,
        )
    )


@cli.command()
@click.option("--answer", "answer_path", required=True, type=click.Path(exists=True),
              help="Text file with the answer to attribute.")
@click.option("--evidence", "evidence_path", required=True, type=click.Path(exists=True),
              help="JSON list of {doc_id, chunk_id, text, origin, url, title}.")
@click.option("--threshold", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--sweep", is_flag=True,
              help="Emit a citation-count vs threshold curve instead.")
def cite(answer_path, evidence_path, threshold, config_path, sweep):
    """Standalone deterministic citation attribution."""
    config = load_config(config_path)
    answer = Path(answer_path).read_text(encoding="utf-8")
    encoder = HashingEncoder(dimension=config.fallback_embedding_dim)
    try:
        evidence_raw = json.loads(Path(evidence_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"evidence file is not valid JSON: {exc}") from exc
    chunks = []
    for item in evidence_raw:
        chunks.append(
            RetrievedChunk(
                chunk=CorpusChunk(
                    doc_id=int(item["doc_id"]),
                    chunk_id=int(item["chunk_id"]),
                    text=item["text"],
                    vector=encoder.encode(item["text"]),
                    source_url=item.get("url", ""),
                    authority_score=0.5,
                    title=item.get("title", ""),
                ),
                similarity=1.0,
                origin=item.get("origin", "DB"),
                sub_query_index=0,
            )
        )
    if sweep:
        curve = []
        for i in range(5, 100, 5):
            t = i / 100.0
            cited = citation_mod.attribute(
                answer, chunks, encoder, t,
                config.max_citations_per_sentence,
                config.min_citation_sentence_chars,
            )
            total = citation_mod.MARKER_RE.findall(cited.text)
            curve.append({"threshold": t, "citation_count": len(total)})
        click.echo(json.dumps({"schema_version": SCHEMA_VERSION, "sweep": curve}))
        return
    cited = citation_mod.attribute(
        answer,
        chunks,
        encoder,
        threshold if threshold is not None else config.citation_threshold,
        config.max_citations_per_sentence,
        config.min_citation_sentence_chars,
    )
    click.echo(
        json.dumps(
            {"schema_version": SCHEMA_VERSION, **cited.to_dict()},
            ensure_ascii=False,
            indent=2,
        )
    )


@cli.command("eval")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--lambda", "lambda_weight", type=float, default=0.7, show_default=True)
@click.option("--compare", nargs=2, default=None,
              help="Two system names for pairwise statistics.")
@click.option("--json", "as_json", is_flag=True)
def eval_cmd(scores_path, lambda_weight, compare, as_json):
    """Summarize a score file; optionally compare two systems."""
    systems = evalstats.load_scores(scores_path)
    summaries = {
        name: evalstats.summarize_run(samples, lambda_weight, name=name)
        for name, samples in systems.items()
    }
    ranked = sorted(summaries.values(), key=lambda s: -s.composite_mean)
    output: dict = {
        "schema_version": SCHEMA_VERSION,
        "lambda": lambda_weight,
        "systems": [
            {
                "name": s.name,
                "n": s.n,
                "answer_mean": s.answer_mean,
                "answer_std": s.answer_std,
                "citation_mean": s.citation_mean,
                "citation_std": s.citation_std,
                "composite_mean": s.composite_mean,
                "composite_std": s.composite_std,
                "rank": i + 1,
            }
            for i, s in enumerate(ranked)
        ],
    }
    if compare:
        name_a, name_b = compare
        for name in (name_a, name_b):
            if name not in systems:
                raise UserError(f"unknown system {name!r} in score file")
        output["comparison"] = {
            "a": name_a,
            "b": name_b,
            **evalstats.compare_systems(
                systems[name_a], systems[name_b], lambda_weight
            ),
        }
    if as_json:
        click.echo(json.dumps(output, ensure_ascii=False, indent=2))
        return
    click.echo(f"lambda = {lambda_weight}")
    header = f"{'system':30} {'n':>4} {'answer':>13} {'citation':>13} {'composite':>13} rank"
    click.echo(header)
    for row in output["systems"]:
        cit = (
            f"{row['citation_mean']:.2f}±{row['citation_std']:.2f}"
            if row["citation_mean"] is not None
            else "---"
        )
        click.echo(
            f"{row['name']:30} {row['n']:>4} "
            f"{row['answer_mean']:.2f}±{row['answer_std']:.2f}".ljust(49)
            + f" {cit:>13} "
            f"{row['composite_mean']:.3f}±{row['composite_std']:.3f}".rjust(14)
            + f" {row['rank']:>4}"
        )
    if compare:
        comp = output["comparison"]
        click.echo()
        click.echo(f"{comp['a']} vs {comp['b']}")
        click.echo(f"  delta mean : {comp['delta_mean']:+.3f}")
        click.echo(f"  t-test     : t={comp['t']:+.3f}  p={comp['t_p']:.4g}")
        click.echo(f"  Welch      : t={comp['welch_t']:+.3f}  p={comp['welch_p']:.4g}")
        click.echo(f"  Mann-W     : U={comp['u']:.1f}  p={comp['u_p']:.4g}")
        if comp["cohens_d"] is not None:
            click.echo(
                f"  Cohen's d  : {comp['cohens_d']:+.3f} ({comp['effect_class']})"
            )


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--budget", required=True, type=int)
@click.option("--resume", is_flag=True, help="Continue into an existing corpus file.")
@click.option("--topic", "topics", multiple=True,
              help="Seed topic (repeatable); defaults to a built-in set.")
@click.option("--mock", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
def crawl(config_path, out_path, budget, resume, topics, mock, as_json):
    """Agentic corpus collection into an append-only JSONL file."""
    config = load_config(config_path)
    out_file = Path(out_path)
    if out_file.exists() and not resume:
        raise UserError(
            f"{out_file} already exists; pass --resume to continue into it"
        )
    if budget < 1:
        raise UserError("--budget must be >= 1")
    engine = build_engine(config, mock=mock)
    seed_topics = list(topics) or [
        "crop management practices",
        "soil nutrient policy",
        "irrigation scheme",
    ]
    ledger = corpus_mod.DedupLedger(path=str(out_file) + ".ledger.json")
    sink = corpus_mod.JsonlSink(out_file, ledger)

    from .webretrieval import SearchCandidate, extract_content

    def search_fn(query):
        return [
            (c.url, c.title)
            for c in engine.search_provider.search(query)
        ]

    def extract_fn(url):
        doc = extract_content(
            SearchCandidate(url=url, title="", snippet="", source_rank=0),
            engine.fetcher,
            ocr_enabled=config.ocr_enabled,
            ocr_page_limit=config.ocr_page_limit,
        )
        return doc.body_text, doc.content_kind

    def score_fn(content, content_kind):
        return corpus_mod.score_quality(
            content,
            content_kind,
            config.agriculture_keywords,
            config.regional_keywords,
            relevance_cap=config.relevance_match_cap,
            regional_cap=config.regional_match_cap,
            richness_cap=config.richness_token_cap,
            length_norm=config.length_norm_chars,
        )

    collectors = [
        corpus_mod.CollectorAgent(
            name="keyword_collector", topics=seed_topics, adaptive=False
        ),
        corpus_mod.CollectorAgent(
            name="autonomous_collector", topics=seed_topics, adaptive=True
        ),
    ]
    report = corpus_mod.run_collection(
        collectors,
        seed_topics,
        budget,
        sink,
        search_fn,
        extract_fn,
        score_fn,
        host_preference_cutoff=config.host_preference_cutoff,
        success_cutoff=config.success_quality_cutoff,
    )
    result = {
        "schema_version": SCHEMA_VERSION,
        "per_agent": report.per_agent,
        "totals": report.totals,
        "recovered_records": sink.recovered_records,
    }
    if as_json:
        click.echo(json.dumps(result))
    else:
        totals = report.totals
        click.echo(
            f"written {totals['written']}, skipped {totals['skipped']}, "
            f"failed {totals['failed']}"
        )


@cli.command("print-effective-config")
@click.option("--config", "config_path", type=click.Path(), default=None)
def print_effective_config(config_path):
    """Dump the merged configuration for audit."""
    config = load_config(config_path)
    click.echo(json.dumps(config.to_dict(), ensure_ascii=False, indent=2, default=str))


@cli.group()
def agents():
    """Agent catalogue utilities."""


@agents.command("lint")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--telemetry", "telemetry_path", type=click.Path(), default=None,
              help="Telemetry JSONL (defaults to the configured path).")
def agents_lint(config_path, telemetry_path):
    """Report agents that matched zero queries in the telemetry log."""
    config = load_config(config_path)
    registry = load_registry(config.agent_catalogue_path, config.default_agent)
    path = telemetry_path or config.telemetry_path
    used: set[str] = set()
    if path and Path(path).exists():
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            if record.get("event") == "stage" and record.get("stage") == "enhance":
                used.update(record.get("counts", {}).get("agents", []))
    unused = sorted(a.name for a in registry.agents if a.name not in used)
    if not path:
        click.echo("no telemetry log configured; nothing to lint against")
    if unused:
        click.echo("agents with zero matched queries:")
        for name in unused:
            click.echo(f"  {name}")
    else:
        click.echo("all agents matched at least one query")


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--store", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--mock", is_flag=True)
@click.option("--seed", type=int, default=0)
def serve(config_path, store, host, port, mock, seed):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app(config_path=config_path, store_path=store, mock=mock, seed=seed)
    uvicorn.run(app, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except UserError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except TransportFamilyError as exc:
        click.echo(f"provider error: {exc}", err=True)
        return 2
    except NoEvidenceError as exc:
        click.echo(f"no evidence: {exc}", err=True)
        return 2
    except StageRagError as exc:
        click.echo(f"internal error: {exc}", err=True)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
