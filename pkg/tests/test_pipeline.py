import pytest

from stagerag.agents import load_registry
from stagerag.citation import strip_markers
from stagerag.config import PipelineConfig
from stagerag.embeddings import HashingEncoder
from stagerag.errors import NoEvidenceError, PipelineStageError
from stagerag.gateway import MockGateway, ModelDescriptor
from stagerag.pipeline import (
    EvidenceBundle,
    PipelineEngine,
    decompose_query,
    parse_subquery_lines,
    refine_query,
    retrieve_parallel,
    synthesize,
)
from stagerag.vectorstore import ORIGIN_DB, CorpusChunk, RetrievedChunk, VectorStore
from stagerag.webretrieval import FixtureFetcher, SearchCandidate

SMALL = ModelDescriptor(model_id="small-1b", scale_tag="small", endpoint="mock")
CONFIG = PipelineConfig().validate()
ENCODER = HashingEncoder(64)


class FailingGateway:
    def generate(self, req, backend, stage=""):
        raise RuntimeError("backend down")


class EmptyGateway:
    def generate(self, req, backend, stage=""):
        return "   "


def db_doc(doc_id, text):
    return RetrievedChunk(
        chunk=CorpusChunk(
            doc_id=doc_id,
            chunk_id=1,
            text=text,
            vector=ENCODER.encode(text),
            source_url=f"https://agri.gov.in/{doc_id}",
            authority_score=1.0,
            title=f"Doc {doc_id}",
        ),
        similarity=0.9,
        origin=ORIGIN_DB,
        sub_query_index=0,
    )


class TestParseSubqueries:
    def test_numbered_forms(self):
        completion = "1. first item\n2) second item\n 3.  third item "
        assert parse_subquery_lines(completion) == [
            "first item", "second item", "third item",
        ]

    def test_bulleted_forms(self):
        assert parse_subquery_lines("- alpha\n* beta") == ["alpha", "beta"]

    def test_prose_yields_nothing(self):
        assert parse_subquery_lines("Here are some perspectives to consider.") == []


class TestRefine:
    def test_mock_strips_filler(self):
        refined = refine_query(
            "please tell me about wheat rust", MockGateway(), SMALL, CONFIG
        )
        assert refined == "about wheat rust"

    def test_gateway_failure_falls_back_to_raw(self):
        from stagerag.pipeline import StageRecord

        record = StageRecord(stage="refine", index=1, duration_ms=0.0)
        refined = refine_query("wheat rust", FailingGateway(), SMALL, CONFIG, record)
        assert refined == "wheat rust"
        assert any("refine-fallback" in d for d in record.degradations)

    def test_empty_completion_falls_back(self):
        assert refine_query("wheat rust", EmptyGateway(), SMALL, CONFIG) == "wheat rust"

    def test_empty_query_rejected(self):
        with pytest.raises(PipelineStageError):
            refine_query("   ", MockGateway(), SMALL, CONFIG)


class TestDecompose:
    def test_mock_produces_min_count(self):
        subs = decompose_query(
            "wheat rust", MockGateway(subquery_count=3), SMALL, CONFIG
        )
        assert subs == [
            "wheat rust perspective 1",
            "wheat rust perspective 2",
            "wheat rust perspective 3",
        ]

    def test_clamped_to_max(self):
        subs = decompose_query(
            "wheat rust", MockGateway(subquery_count=9), SMALL, CONFIG
        )
        assert len(subs) == CONFIG.subquery_max

    def test_padded_to_min_on_short_output(self):
        subs = decompose_query(
            "wheat rust", MockGateway(subquery_count=1), SMALL, CONFIG
        )
        assert len(subs) == CONFIG.subquery_min
        assert subs[1] == "wheat rust"

    def test_unparseable_falls_back_to_refined(self):
        class Prose:
            def generate(self, req, backend, stage=""):
                return "Consider several angles on this."

        subs = decompose_query("wheat rust", Prose(), SMALL, CONFIG)
        assert subs == ["wheat rust"] * CONFIG.subquery_min

    def test_gateway_failure_degrades_to_refined(self):
        subs = decompose_query("wheat rust", FailingGateway(), SMALL, CONFIG)
        assert subs == ["wheat rust"] * CONFIG.subquery_min


class TestRetrieveParallel:
    def test_parallel_equals_sequential(self):
        docs = {i: db_doc(i, f"evidence text number {i}") for i in range(1, 7)}

        def db_arm(sq, i):
            return [docs[2 * i + 1], docs[2 * i + 2]]

        def web_arm(sq, i):
            return []

        subs = ["a one", "b two", "c three"]
        parallel = retrieve_parallel(subs, db_arm, web_arm, None, CONFIG)
        sequential_ids = sorted(
            (docs[k].chunk.doc_id, docs[k].chunk.chunk_id) for k in docs
        )
        assert [
            (rc.chunk.doc_id, rc.chunk.chunk_id) for rc in parallel.db_chunks
        ] == sequential_ids

    def test_duplicates_keep_max_similarity(self):
        low = db_doc(1, "shared evidence")
        high = RetrievedChunk(
            chunk=low.chunk, similarity=0.95, origin=ORIGIN_DB, sub_query_index=1
        )

        def db_arm(sq, i):
            return [low] if i == 0 else [high]

        bundle = retrieve_parallel(
            ["x one", "y two"], db_arm, lambda sq, i: [], None, CONFIG
        )
        assert len(bundle.db_chunks) == 1
        assert bundle.db_chunks[0].similarity == 0.95

    def test_failed_arm_degrades_not_fatal(self):
        from stagerag.pipeline import StageRecord

        def db_arm(sq, i):
            if i == 1:
                raise RuntimeError("index corruption")
            return [db_doc(i + 1, f"doc {i}")]

        record = StageRecord(stage="retrieve", index=3, duration_ms=0.0)
        bundle = retrieve_parallel(
            ["a one", "b two"], db_arm, lambda sq, i: [], None, CONFIG, record
        )
        assert len(bundle.db_chunks) == 1
        assert any("db-arm-1" in d for d in record.degradations)

    def test_no_evidence_raises(self):
        with pytest.raises(NoEvidenceError):
            retrieve_parallel(
                ["a one"], lambda sq, i: [], lambda sq, i: [], None, CONFIG
            )

    def test_enhancement_applied_before_arms(self):
        seen = []
        registry = load_registry()

        def db_arm(sq, i):
            seen.append(sq)
            return [db_doc(i + 1, "whatever evidence")]

        retrieve_parallel(
            ["wheat sowing dates"], db_arm, lambda sq, i: [], registry, CONFIG
        )
        assert seen[0].startswith("wheat sowing dates ")
        assert len(seen[0]) > len("wheat sowing dates")


class TestSynthesize:
    def test_empty_bundle_rejected(self):
        with pytest.raises(PipelineStageError):
            synthesize(
                "q", EvidenceBundle(), MockGateway(), [SMALL], CONFIG
            )

    def test_mock_synthesis_uses_evidence(self):
        bundle = EvidenceBundle(
            db_chunks=[db_doc(1, "Wheat rust spreads fast. More detail follows.")]
        )
        answer, model = synthesize(
            "wheat rust", bundle, MockGateway(), CONFIG.model_descriptors(), CONFIG
        )
        assert answer == "Wheat rust spreads fast."
        assert model.scale_tag == "small"

    def test_policy_register_selects_large_model(self):
        bundle = EvidenceBundle(db_chunks=[db_doc(1, "Scheme details here.")])
        _, model = synthesize(
            "pm kisan subsidy scheme eligibility",
            bundle,
            MockGateway(),
            CONFIG.model_descriptors(),
            CONFIG,
        )
        assert model.scale_tag == "large"


def seeded_store(texts):
    store = VectorStore()
    for i, text in enumerate(texts, start=1):
        store.add_chunk(
            CorpusChunk(
                doc_id=i,
                chunk_id=1,
                text=text,
                vector=ENCODER.encode(text),
                source_url=f"https://agri.gov.in/{i}",
                authority_score=1.0,
                title=f"Doc {i}",
            )
        )
    return store


class AnyQuerySearch:
    """Returns the same candidate list for every query."""

    def __init__(self, items):
        self.items = items

    def search(self, query):
        return [
            SearchCandidate(url=url, title=title, snippet="", source_rank=i)
            for i, (url, title) in enumerate(self.items)
        ]


WEB_PAGE = (
    "<html><head><title>MSP Update</title></head><body>"
    "<p>The minimum support price for wheat was raised this season. "
    "Procurement centers open in April.</p></body></html>"
)


def make_engine(store=None, with_web=False, config=CONFIG, seed=0):
    search = None
    fetcher = None
    if with_web:
        search = AnyQuerySearch([("https://pib.gov.in/msp", "MSP Update")])
        fetcher = FixtureFetcher(
            {"https://pib.gov.in/msp": ("text/html", WEB_PAGE.encode())}
        )
    return PipelineEngine(
        config=config,
        gateway=MockGateway(seed=seed, subquery_count=config.subquery_min),
        encoder=ENCODER,
        store=store,
        registry=load_registry(),
        search_provider=search,
        fetcher=fetcher,
    )


DB_TEXTS = [
    "Wheat rust management requires resistant varieties and timely fungicide.",
    "Soil testing before sowing guides balanced fertilizer application rates.",
    "Drip irrigation scheduling conserves water during dry spells in summer.",
]


class TestEngineRun:
    def test_six_stages_in_order_with_temperatures(self):
        engine = make_engine(store=seeded_store(DB_TEXTS))
        cited, tel = engine.run("please tell me about wheat rust management")
        assert [s.stage for s in tel.stages] == [
            "refine", "decompose", "retrieve", "enhance", "synthesize", "cite",
        ]
        assert [s.temperature for s in tel.stages] == [0.1, 0.5, None, None, 0.2, None]
        assert [s.index for s in tel.stages] == [1, 2, 3, 4, 5, 6]

    def test_db_only_run_produces_cited_answer(self):
        engine = make_engine(store=seeded_store(DB_TEXTS))
        cited, tel = engine.run("please tell me about wheat rust management")
        assert "[DB_" in cited.text
        assert cited.citations
        assert strip_markers(cited.text) != cited.text

    def test_determinism_same_seed_same_bytes(self):
        a, _ = make_engine(store=seeded_store(DB_TEXTS), seed=5).run(
            "wheat rust in punjab"
        )
        b, _ = make_engine(store=seeded_store(DB_TEXTS), seed=5).run(
            "wheat rust in punjab"
        )
        assert a.text == b.text
        assert a.citations == b.citations

    def test_web_arm_contributes_web_chunks(self):
        engine = make_engine(store=seeded_store(DB_TEXTS), with_web=True)
        cited, tel = engine.run("wheat minimum support price msp")
        retrieve = tel.stages[2]
        assert retrieve.counts["web_chunks"] > 0
        assert retrieve.counts["db_chunks"] > 0

    def test_no_db_flag(self):
        engine = make_engine(store=seeded_store(DB_TEXTS), with_web=True)
        cited, tel = engine.run("wheat msp", use_db=False)
        assert tel.stages[2].counts["db_chunks"] == 0
        assert tel.stages[2].counts["web_chunks"] > 0

    def test_no_web_flag(self):
        engine = make_engine(store=seeded_store(DB_TEXTS), with_web=True)
        cited, tel = engine.run("wheat rust", use_web=False)
        assert tel.stages[2].counts["web_chunks"] == 0

    def test_no_sources_at_all_raises_no_evidence(self):
        engine = make_engine(store=None)
        with pytest.raises(NoEvidenceError):
            engine.run("wheat rust")

    def test_agents_recorded_in_enhance_stage(self):
        engine = make_engine(store=seeded_store(DB_TEXTS))
        _, tel = engine.run("soil nitrogen deficiency in paddy")
        enhance = tel.stages[3]
        agents = enhance.counts["agents"]
        assert len(agents) == CONFIG.subquery_min
        assert all(isinstance(name, str) for name in agents)

    def test_stage_events_reach_shared_telemetry(self):
        engine = make_engine(store=seeded_store(DB_TEXTS))
        engine.run("wheat rust")
        events = engine.telemetry.by_event("stage")
        assert [e["stage"] for e in events] == [
            "refine", "decompose", "retrieve", "enhance", "synthesize", "cite",
        ]

    def test_db_top_k_respected(self):
        config = PipelineConfig(db_top_k=1).validate()
        engine = make_engine(store=seeded_store(DB_TEXTS), config=config)
        _, tel = engine.run("wheat rust management fungicide")
        # 3 identical-template sub-queries retrieve the same best chunk
        assert tel.stages[2].counts["db_chunks"] == 1
