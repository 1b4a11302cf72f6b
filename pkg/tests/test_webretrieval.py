import httpx
import pytest

from stagerag.errors import (
    ExtractionFailedError,
    FetchError,
    RateLimitError,
    TransportError,
)
from stagerag.gateway import MockGateway, ModelDescriptor
from stagerag.webretrieval import (
    FixtureFetcher,
    FixtureSearchProvider,
    HttpFetcher,
    LiveSearchProvider,
    SearchCandidate,
    compose_query,
    extract_content,
    extract_html_text,
    select_articles,
    web_search,
)

BACKEND = ModelDescriptor(model_id="m", scale_tag="small", endpoint="mock")


def candidate(url, rank=0, title="T", snippet="s"):
    return SearchCandidate(url=url, title=title, snippet=snippet, source_rank=rank)


class TestComposeQuery:
    def test_suffix_appended(self):
        assert (
            compose_query("wheat msp", "agriculture site:.gov.in")
            == "wheat msp agriculture site:.gov.in"
        )

    def test_empty_suffix(self):
        assert compose_query("wheat msp", "") == "wheat msp"


class TestWebSearch:
    def test_fixture_provider_lookup(self):
        provider = FixtureSearchProvider(
            {"q suffix": [{"url": "https://a.gov.in/1", "title": "A"}]}
        )
        out = web_search("q", "suffix", provider)
        assert [c.url for c in out] == ["https://a.gov.in/1"]
        assert out[0].source_rank == 0

    def test_unknown_query_returns_empty(self):
        assert web_search("q", "s", FixtureSearchProvider({})) == []

    def test_duplicates_collapse_on_normalized_url(self):
        provider = FixtureSearchProvider(
            {
                "q s": [
                    {"url": "https://a.gov.in/x", "title": "first"},
                    {"url": "https://A.GOV.IN/x/", "title": "same"},
                    {"url": "https://a.gov.in/y", "title": "other"},
                ]
            }
        )
        out = web_search("q", "s", provider)
        assert [c.title for c in out] == ["first", "other"]

    def test_invalid_urls_dropped(self):
        provider = FixtureSearchProvider(
            {"q s": [{"url": "not-a-url"}, {"url": "https://ok.gov.in/z"}]}
        )
        assert [c.url for c in web_search("q", "s", provider)] == [
            "https://ok.gov.in/z"
        ]

    def test_live_provider_contract(self):
        def handler(request):
            assert request.url.params["q"] == "wheat agriculture site:.gov.in"
            return httpx.Response(
                200, json=[{"url": "https://a.gov.in/1", "title": "A", "snippet": "s"}]
            )

        provider = LiveSearchProvider(
            "http://search.test/api", transport=httpx.MockTransport(handler)
        )
        out = web_search("wheat", "agriculture site:.gov.in", provider)
        assert len(out) == 1

    def test_live_provider_rate_limit(self):
        def handler(request):
            return httpx.Response(429, headers={"Retry-After": "7"})

        provider = LiveSearchProvider(
            "http://search.test/api", transport=httpx.MockTransport(handler)
        )
        with pytest.raises(RateLimitError) as excinfo:
            provider.search("q")
        assert excinfo.value.retry_after == 7.0

    def test_live_provider_server_error(self):
        provider = LiveSearchProvider(
            "http://search.test/api",
            transport=httpx.MockTransport(lambda r: httpx.Response(500)),
        )
        with pytest.raises(TransportError):
            provider.search("q")


class TestSelectArticles:
    def test_model_ranking_respected(self):
        class Scripted:
            def generate(self, req, backend, stage=""):
                return "3, 1"

        cands = [candidate(f"https://x.gov.in/{i}", rank=i) for i in range(4)]
        out = select_articles(cands, "q", 5, Scripted(), BACKEND)
        assert [c.source_rank for c in out] == [2, 0]

    def test_truncated_to_top_n(self):
        class Scripted:
            def generate(self, req, backend, stage=""):
                return "1,2,3,4"

        cands = [candidate(f"https://x.gov.in/{i}", rank=i) for i in range(4)]
        out = select_articles(cands, "q", 2, Scripted(), BACKEND)
        assert len(out) == 2

    def test_garbage_completion_falls_back_to_source_rank(self):
        class Scripted:
            def generate(self, req, backend, stage=""):
                return "the best articles are probably the first ones"

        cands = [candidate(f"https://x.gov.in/{i}", rank=i) for i in range(6)]
        out = select_articles(cands, "q", 3, Scripted(), BACKEND)
        assert [c.source_rank for c in out] == [0, 1, 2]

    def test_gateway_exception_falls_back(self):
        class Broken:
            def generate(self, req, backend, stage=""):
                raise RuntimeError("model down")

        cands = [candidate(f"https://x.gov.in/{i}", rank=i) for i in range(3)]
        out = select_articles(cands, "q", 2, Broken(), BACKEND)
        assert [c.source_rank for c in out] == [0, 1]

    def test_out_of_range_indices_ignored(self):
        class Scripted:
            def generate(self, req, backend, stage=""):
                return "9, 2, 2, 1"

        cands = [candidate(f"https://x.gov.in/{i}", rank=i) for i in range(3)]
        out = select_articles(cands, "q", 5, Scripted(), BACKEND)
        assert [c.source_rank for c in out] == [1, 0]

    def test_output_always_subset_of_input(self):
        cands = [candidate(f"https://x.gov.in/{i}", rank=i) for i in range(8)]
        out = select_articles(cands, "q", 5, MockGateway(), BACKEND)
        assert set(c.url for c in out) <= set(c.url for c in cands)
        assert len(out) == 5

    def test_empty_and_single_candidate(self):
        assert select_articles([], "q", 3, MockGateway(), BACKEND) == []
        only = [candidate("https://x.gov.in/0")]
        assert select_articles(only, "q", 3, MockGateway(), BACKEND) == only


HTML_PAGE = """
<html><head><title> Wheat Advisory </title>
<script>var tracking = 1;</script></head>
<body>
<nav><p>Home | About</p></nav>
<h1>Wheat rust management</h1>
<p>Spray propiconazole at first sign of yellow rust.</p>
<aside><p>Subscribe to our newsletter!</p></aside>
<ul><li>Monitor fields weekly.</li></ul>
<footer><p>Copyright 2026</p></footer>
</body></html>
"""


class TestHtmlExtraction:
    def test_main_content_kept_boilerplate_dropped(self):
        text, title = extract_html_text(HTML_PAGE)
        assert title == "Wheat Advisory"
        assert "Spray propiconazole" in text
        assert "Monitor fields weekly." in text
        assert "newsletter" not in text
        assert "Copyright" not in text
        assert "Home | About" not in text
        assert "tracking" not in text

    def test_empty_page(self):
        text, title = extract_html_text("<html><body></body></html>")
        assert text == ""


def make_pdf(lines):
    import io

    from reportlab.lib.pagesizes import A4
    from reportlab.pdfgen import canvas

    buf = io.BytesIO()
    c = canvas.Canvas(buf, pagesize=A4)
    y = 800
    for line in lines:
        c.drawString(72, y, line)
        y -= 20
    c.showPage()
    c.save()
    return buf.getvalue()


class TestExtractContent:
    def test_html_route(self):
        fetcher = FixtureFetcher(
            {"https://a.gov.in/x": ("text/html", HTML_PAGE.encode())}
        )
        doc = extract_content(candidate("https://a.gov.in/x"), fetcher)
        assert doc.content_kind == "html"
        assert "propiconazole" in doc.body_text
        assert doc.title == "Wheat Advisory"

    def test_pdf_text_route(self):
        pdf = make_pdf(["Soil testing guidelines", "Apply compost in October"])
        fetcher = FixtureFetcher({"https://a.gov.in/x.pdf": ("application/pdf", pdf)})
        doc = extract_content(candidate("https://a.gov.in/x.pdf"), fetcher)
        assert doc.content_kind == "pdf_text"
        assert "Soil testing guidelines" in doc.body_text
        assert "Apply compost in October" in doc.body_text

    def test_pdf_detected_by_magic_bytes(self):
        pdf = make_pdf(["Magic byte detection works"])
        fetcher = FixtureFetcher({"https://a.gov.in/x": ("text/plain", pdf)})
        doc = extract_content(candidate("https://a.gov.in/x"), fetcher)
        assert doc.content_kind == "pdf_text"

    def test_empty_html_raises(self):
        fetcher = FixtureFetcher(
            {"https://a.gov.in/x": ("text/html", b"<html><body></body></html>")}
        )
        with pytest.raises(ExtractionFailedError):
            extract_content(candidate("https://a.gov.in/x"), fetcher)

    def test_textless_pdf_without_ocr_raises(self):
        # a syntactically plausible PDF with no text operators
        body = b"%PDF-1.4\n1 0 obj\n<< /Type /Catalog >>\nendobj\n%%EOF"
        fetcher = FixtureFetcher({"https://a.gov.in/x.pdf": ("application/pdf", body)})
        with pytest.raises(ExtractionFailedError, match="ocr disabled"):
            extract_content(candidate("https://a.gov.in/x.pdf"), fetcher)

    def test_fetch_failure_propagates(self):
        with pytest.raises(FetchError):
            extract_content(candidate("https://gone.gov.in/x"), FixtureFetcher({}))


class TestHttpFetcher:
    def test_fetch_and_content_type(self):
        def handler(request):
            assert request.headers["user-agent"].startswith("stagerag/")
            return httpx.Response(
                200, content=b"payload", headers={"content-type": "text/html"}
            )

        fetcher = HttpFetcher(transport=httpx.MockTransport(handler))
        body, ctype = fetcher.fetch("https://a.gov.in/x")
        assert body == b"payload"
        assert ctype == "text/html"

    def test_http_error_wrapped(self):
        fetcher = HttpFetcher(
            transport=httpx.MockTransport(lambda r: httpx.Response(404))
        )
        with pytest.raises(FetchError):
            fetcher.fetch("https://a.gov.in/missing")
