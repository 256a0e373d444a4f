import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from ladderscore.backend import (
    BackendDescriptor,
    BackendKind,
    BackendProtocolError,
    CapabilityError,
    ContinuationScoreRequest,
    DegenerateOutputError,
    GenerationRequest,
    MockBackend,
    OpenAICompatibleBackend,
    RetriableTransportError,
    SamplingParams,
    derive_seed,
    render_continuation,
)


class TestRequestTypes:
    def test_max_new_tokens_positive(self):
        with pytest.raises(ValueError):
            GenerationRequest(prompt="p", max_new_tokens=0)

    def test_candidates_distinct(self):
        with pytest.raises(ValueError):
            ContinuationScoreRequest(prompt="p", candidates=("a", "a"))

    def test_descriptor_endpoint_iff_http(self):
        with pytest.raises(ValueError):
            BackendDescriptor(kind=BackendKind.OPENAI_COMPATIBLE_HTTP, model_name="m")
        with pytest.raises(ValueError):
            BackendDescriptor(
                kind=BackendKind.MOCK, model_name="m", endpoint="http://x"
            )

    def test_sampling_bounds(self):
        with pytest.raises(ValueError):
            SamplingParams(temperature=-1)
        with pytest.raises(ValueError):
            SamplingParams(top_p=0)


class TestMockBackend:
    def test_table_echo(self):
        mock = MockBackend(completions={"P": "S"})
        assert mock.generate(GenerationRequest(prompt="P")) == "S"

    def test_same_seed_same_output(self):
        a = MockBackend(seed=7)
        b = MockBackend(seed=7)
        req = GenerationRequest(prompt="anything")
        assert a.generate(req) == b.generate(req)

    def test_different_seed_different_output(self):
        req = GenerationRequest(prompt="anything")
        assert MockBackend(seed=1).generate(req) != MockBackend(seed=2).generate(req)

    def test_logprob_table(self):
        mock = MockBackend(
            logprobs={("P", "Worse"): -1.0, ("P", "Better"): -2.0, ("P", "Similar"): -3.0}
        )
        out = mock.score_continuations(
            ContinuationScoreRequest(prompt="P", candidates=("Worse", "Better", "Similar"))
        )
        assert out == [("Worse", -1.0), ("Better", -2.0), ("Similar", -3.0)]

    def test_single_candidate_shape(self):
        mock = MockBackend(seed=3)
        out = mock.score_continuations(
            ContinuationScoreRequest(prompt="P", candidates=("only",))
        )
        assert len(out) == 1 and out[0][0] == "only"

    def test_order_matches_request_order(self):
        mock = MockBackend(seed=5)
        cands = ("a", "b", "c", "d")
        fwd = mock.score_continuations(
            ContinuationScoreRequest(prompt="P", candidates=cands)
        )
        rev = mock.score_continuations(
            ContinuationScoreRequest(prompt="P", candidates=cands[::-1])
        )
        assert [c for c, _ in fwd] == list(cands)
        assert sorted(v for _, v in fwd) == sorted(v for _, v in rev)

    def test_repeated_calls_byte_identical(self):
        mock = MockBackend(seed=11)
        req = ContinuationScoreRequest(prompt="P", candidates=("x", "y"))
        assert mock.score_continuations(req) == mock.score_continuations(req)

    def test_table_file_round_trip(self, tmp_path):
        from ladderscore.backend import prompt_digest

        table = {
            "seed": 4,
            "completions": {prompt_digest("P"): "S"},
            "logprobs": {f"{prompt_digest('Q')}\tYes": -0.5},
        }
        path = tmp_path / "table.json"
        path.write_text(json.dumps(table))
        mock = MockBackend.from_table_file(path)
        assert mock.generate(GenerationRequest(prompt="P")) == "S"
        out = mock.score_continuations(
            ContinuationScoreRequest(prompt="Q", candidates=("Yes",))
        )
        assert out == [("Yes", -0.5)]


class TestSampleChoice:
    def test_degenerate_mock(self):
        mock = MockBackend(choice_probs={"Better": 1.0, "Worse": 0.0, "Similar": 0.0})
        hist = mock.sample_choice("P", ("Better", "Worse", "Similar"), 10, seed=0)
        assert hist == {"Better": 10, "Worse": 0, "Similar": 0}

    @pytest.mark.parametrize("n", [1, 7, 100])
    def test_counts_sum_to_n(self, n):
        mock = MockBackend(seed=1, choice_probs={"A": 0.5, "B": 0.5})
        hist = mock.sample_choice("P", ("A", "B"), n, seed=3)
        assert sum(hist.values()) == n

    def test_histogram_within_three_sigma(self):
        # binomial oracle: expectation n*p, sigma = sqrt(n p (1-p))
        probs = {"Better": 0.7, "Worse": 0.2, "Similar": 0.1}
        mock = MockBackend(seed=9, choice_probs=probs)
        n = 1000
        hist = mock.sample_choice("P", ("Better", "Worse", "Similar"), n, seed=5)
        for choice, p in probs.items():
            sigma = math.sqrt(n * p * (1 - p))
            assert abs(hist[choice] - n * p) <= 3 * sigma

    def test_pure_function_of_request_and_seed(self):
        mock = MockBackend(seed=2, choice_probs={"A": 0.5, "B": 0.5})
        h1 = mock.sample_choice("P", ("A", "B"), 50, seed=1)
        h2 = mock.sample_choice("P", ("A", "B"), 50, seed=1)
        assert h1 == h2

    def test_invalid_args(self):
        mock = MockBackend(seed=0)
        with pytest.raises(ValueError):
            mock.sample_choice("P", ("A", "A"), 5, seed=0)
        with pytest.raises(ValueError):
            mock.sample_choice("P", ("A", "B"), 0, seed=0)


class _StubHandler(BaseHTTPRequestHandler):
    """Replays canned responses; the test plants them on the server object."""

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        self.server.requests.append(body)
        status, payload = self.server.responses[
            min(len(self.server.requests) - 1, len(self.server.responses) - 1)
        ]
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    server.requests = []
    server.responses = [(200, {"choices": [{"text": " stub completion "}]})]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()


def _http_backend(server, **kwargs):
    descriptor = BackendDescriptor(
        kind=BackendKind.OPENAI_COMPATIBLE_HTTP,
        model_name="stub-model",
        endpoint=f"http://127.0.0.1:{server.server_address[1]}/v1/completions",
    )
    return OpenAICompatibleBackend(descriptor, backoff_base=0.0, **kwargs)


class TestHttpBackend:
    def test_generate_returns_stripped_body_text(self, stub_server):
        backend = _http_backend(stub_server)
        out = backend.generate(GenerationRequest(prompt="hello"))
        assert out == "stub completion"
        assert stub_server.requests[0]["prompt"] == "hello"

    def test_empty_completion_retried_then_error(self, stub_server):
        stub_server.responses = [(200, {"choices": [{"text": "   "}]})]
        backend = _http_backend(stub_server)
        with pytest.raises(DegenerateOutputError):
            backend.generate(
                GenerationRequest(prompt="p", sampling=SamplingParams(seed=1))
            )
        assert len(stub_server.requests) == 3
        # seed incremented per retry
        assert [r.get("seed") for r in stub_server.requests] == [1, 2, 3]

    def test_transport_error_after_retries(self, stub_server):
        stub_server.responses = [(503, {"error": "down"})]
        backend = _http_backend(stub_server)
        with pytest.raises(RetriableTransportError) as info:
            backend.generate(GenerationRequest(prompt="p"))
        assert len(info.value.attempts) == 3

    def test_recovers_after_transient_5xx(self, stub_server):
        stub_server.responses = [
            (500, {"error": "hiccup"}),
            (200, {"choices": [{"text": "ok"}]}),
        ]
        backend = _http_backend(stub_server)
        assert backend.generate(GenerationRequest(prompt="p")) == "ok"

    def test_logprob_sum_over_candidate_region(self, stub_server):
        prompt = "PRMPT"
        cand = "Yes"
        full = prompt + render_continuation(cand)
        stub_server.responses = [
            (
                200,
                {
                    "choices": [
                        {
                            "text": full,
                            "logprobs": {
                                "token_logprobs": [None, -0.1, -0.5, -0.25],
                                "text_offset": [0, 2, len(prompt), len(prompt) + 2],
                            },
                        }
                    ]
                },
            )
        ]
        backend = _http_backend(stub_server)
        out = backend.score_continuations(
            ContinuationScoreRequest(prompt=prompt, candidates=(cand,))
        )
        # only the two stubbed per-token values inside the candidate region
        assert out == [(cand, -0.75)]

    def test_missing_logprobs_is_capability_error(self, stub_server):
        stub_server.responses = [(200, {"choices": [{"text": "x"}]})]
        backend = _http_backend(stub_server)
        with pytest.raises(CapabilityError):
            backend.score_continuations(
                ContinuationScoreRequest(prompt="p", candidates=("Yes",))
            )

    def test_sample_choice_matches_choices(self, stub_server):
        stub_server.responses = [(200, {"choices": [{"text": "Better."}]})]
        backend = _http_backend(stub_server)
        hist = backend.sample_choice("p", ("Better", "Worse", "Similar"), 4, seed=0)
        assert hist == {"Better": 4, "Worse": 0, "Similar": 0}

    def test_sample_choice_rejects_stray_output(self, stub_server):
        stub_server.responses = [(200, {"choices": [{"text": "Banana"}]})]
        backend = _http_backend(stub_server)
        with pytest.raises(BackendProtocolError):
            backend.sample_choice("p", ("Better", "Worse"), 1, seed=0)


def test_derive_seed_stable_and_sensitive():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(2, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
