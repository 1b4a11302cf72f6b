import json

import pytest
from fastapi.testclient import TestClient

from stagerag.embeddings import HashingEncoder
from stagerag.service import create_app
from stagerag.vectorstore import CorpusChunk, VectorStore

DB_TEXTS = [
    "Wheat rust management requires resistant varieties and timely fungicide.",
    "Soil testing before sowing guides balanced fertilizer application rates.",
    "Drip irrigation scheduling conserves water during dry spells in summer.",
]


@pytest.fixture()
def store_path(tmp_path):
    encoder = HashingEncoder(256)
    store = VectorStore()
    for i, text in enumerate(DB_TEXTS, start=1):
        store.add_chunk(
            CorpusChunk(
                doc_id=i,
                chunk_id=1,
                text=text,
                vector=encoder.encode(text),
                source_url=f"https://agri.gov.in/{i}",
                authority_score=1.0,
                title=f"Doc {i}",
            )
        )
    path = tmp_path / "store.bin"
    store.save(path)
    return path


@pytest.fixture()
def client(store_path):
    app = create_app(store_path=store_path, mock=True, seed=3)
    return TestClient(app)


class TestHealthAndConfig:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["store_chunks"] == 3
        assert body["mock"] is True

    def test_config_dump(self, client):
        resp = client.get("/config")
        assert resp.status_code == 200
        config = resp.json()["config"]
        assert config["citation_threshold"] == 0.75
        assert config["db_top_k"] == 3


class TestAsk:
    def test_full_run(self, client):
        resp = client.post(
            "/ask",
            json={"query": "please tell me about wheat rust", "use_web": False},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["schema_version"] == 1
        assert body["answer"]
        assert "[DB_" in body["answer"]
        assert body["citations"]
        assert body["citation_index"].startswith("Sources:")
        stages = [t["stage"] for t in body["telemetry"]]
        assert stages == [
            "refine", "decompose", "retrieve", "enhance", "synthesize", "cite",
        ]
        assert all("duration_ms" not in t for t in body["telemetry"])

    def test_empty_query_rejected_by_validation(self, client):
        resp = client.post("/ask", json={"query": ""})
        assert resp.status_code == 422

    def test_no_evidence_maps_to_422(self, store_path):
        app = create_app(mock=True)  # no store, no web fixtures
        client = TestClient(app)
        resp = client.post("/ask", json={"query": "anything at all"})
        assert resp.status_code == 422

    def test_reproducible_across_identical_requests(self, client):
        payload = {"query": "wheat rust in punjab", "use_web": False}
        a = client.post("/ask", json=payload).json()
        b = client.post("/ask", json=payload).json()
        assert a == b


class TestSearch:
    def test_topk_hits(self, client):
        resp = client.post("/search", json={"query": DB_TEXTS[0], "k": 2})
        assert resp.status_code == 200
        hits = resp.json()["hits"]
        assert len(hits) == 2
        assert hits[0]["doc_id"] == 1
        assert hits[0]["similarity"] == pytest.approx(1.0, abs=1e-6)

    def test_missing_store_conflict(self):
        client = TestClient(create_app(mock=True))
        resp = client.post("/search", json={"query": "x", "k": 1})
        assert resp.status_code == 409

    def test_k_validation(self, client):
        resp = client.post("/search", json={"query": "x", "k": 0})
        assert resp.status_code == 422


class TestCite:
    def test_attribution_round_trip(self, client):
        answer = (
            "Wheat rust management requires resistant varieties and timely fungicide."
        )
        resp = client.post(
            "/cite",
            json={
                "answer": answer,
                "evidence": [
                    {
                        "doc_id": 1,
                        "chunk_id": 1,
                        "text": answer,
                        "origin": "DB",
                        "url": "https://agri.gov.in/1",
                        "title": "Doc 1",
                    }
                ],
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["text"] == answer + "[DB_1_1]"
        assert body["citations"][0]["label"] == "[DB_1_1]"

    def test_threshold_override(self, client):
        resp = client.post(
            "/cite",
            json={
                "answer": "An entirely unrelated sentence about galaxy rotation curves.",
                "evidence": [
                    {"doc_id": 1, "chunk_id": 1, "text": "soil compost advice note"}
                ],
                "threshold": 0.99,
            },
        )
        assert resp.status_code == 200
        assert resp.json()["citations"] == []

    def test_invalid_origin_rejected(self, client):
        resp = client.post(
            "/cite",
            json={
                "answer": "text",
                "evidence": [
                    {"doc_id": 1, "chunk_id": 1, "text": "x", "origin": "FTP"}
                ],
            },
        )
        assert resp.status_code == 422

    def test_out_of_range_threshold_rejected(self, client):
        resp = client.post(
            "/cite",
            json={"answer": "text", "evidence": [], "threshold": 1.5},
        )
        assert resp.status_code == 422
