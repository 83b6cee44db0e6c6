import json
import struct
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capbias.embed_score import (
    Embedding,
    EmbeddingStore,
    HybridScore,
    RemoteConfig,
    clipscore,
    fetch_remote_texts,
    hybrid,
    is_unit,
    load_store,
    save_store_emb1,
    save_store_json,
)
from capbias.errors import InvalidInputError, RemoteEmbeddingError, StoreLoadError
from capbias.ngram_metrics import build_idf
from capbias.textnorm import tokenize


def emb(values, name="e"):
    return Embedding(id=name, vector=np.asarray(values, dtype=np.float64))


def unit(values):
    arr = np.asarray(values, dtype=np.float64)
    return arr / np.linalg.norm(arr)


# --------------------------------------------------------------------------
# clipscore
# --------------------------------------------------------------------------

def test_clipscore_identical_vectors():
    v = emb(unit([1.0, 2.0, 2.0]))
    assert clipscore(v, v) == pytest.approx(2.5, abs=1e-12)


def test_clipscore_orthogonal_vectors():
    assert clipscore(emb([1.0, 0.0]), emb([0.0, 1.0])) == 0.0


def test_clipscore_clamps_negative_cosine():
    assert clipscore(emb([1.0, 0.0]), emb([-1.0, 0.0])) == 0.0


def test_clipscore_cos_point_three():
    # construct an exact cosine of 0.3
    a = emb([1.0, 0.0])
    b = emb([0.3, np.sqrt(1 - 0.09)])
    assert clipscore(a, b) == pytest.approx(0.75, abs=1e-12)


def test_clipscore_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        clipscore(emb([1.0, 0.0]), emb([1.0, 0.0, 0.0]))


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(min_value=-5, max_value=5), min_size=3, max_size=3).filter(
        lambda v: np.linalg.norm(v) > 1e-3
    ),
    st.lists(st.floats(min_value=-5, max_value=5), min_size=3, max_size=3).filter(
        lambda v: np.linalg.norm(v) > 1e-3
    ),
    st.floats(min_value=0.1, max_value=40.0),
)
def test_clipscore_invariant_to_prenormalization_scale(a, b, scale):
    store1 = EmbeddingStore.from_vectors({"a": np.array(a), "b": np.array(b)})
    store2 = EmbeddingStore.from_vectors(
        {"a": scale * np.array(a), "b": scale * np.array(b)}
    )
    s1 = clipscore(store1.get("a"), store1.get("b"))
    s2 = clipscore(store2.get("a"), store2.get("b"))
    assert s1 == pytest.approx(s2, abs=1e-9)
    assert 0.0 <= s1 <= 2.5


# --------------------------------------------------------------------------
# hybrid
# --------------------------------------------------------------------------

def test_hybrid_totals_match_reported_breakdowns():
    good = HybridScore(clip=0.6699, cider=7.0039)
    bad = HybridScore(clip=0.7119, cider=2.9982)
    assert good.total == pytest.approx(7.6738, abs=5e-5)
    assert bad.total == pytest.approx(3.7101, abs=5e-5)
    assert good.total - good.clip - good.cider == 0.0
    assert bad.total - bad.clip - bad.cider == 0.0


def test_hybrid_combines_component_scores():
    ref = tokenize("a photo of a woman who is a doctor")
    cand = tokenize("a woman who is a doctor")
    corpus = [[ref], [tokenize("a man with a bike")], [tokenize("a chef cooking")]]
    idf = build_idf(corpus)
    text = emb(unit([1.0, 1.0, 0.0]), "t")
    image = emb(unit([1.0, 0.0, 0.0]), "i")
    h = hybrid(cand, [ref], text, image, idf)
    assert h.clip == pytest.approx(clipscore(text, image), abs=1e-15)
    assert h.total == h.clip + h.cider


def test_hybrid_ordering_transfer():
    # when the cider gap exceeds the clip gap, the hybrid prefers good
    good = HybridScore(clip=0.60, cider=7.0)
    bad = HybridScore(clip=0.72, cider=3.0)
    assert bad.clip > good.clip
    assert good.total > bad.total


def test_hybrid_zero_cider_reduces_to_clip_ordering():
    a = HybridScore(clip=0.8, cider=0.0)
    b = HybridScore(clip=0.7, cider=0.0)
    assert (a.total > b.total) == (a.clip > b.clip)


# --------------------------------------------------------------------------
# Store formats
# --------------------------------------------------------------------------

def test_emb1_roundtrip(tmp_path):
    store = EmbeddingStore.from_vectors(
        {
            "img://a/0": np.array([1.0, 0.0, 0.0, 0.0]),
            "a woman who is a doctor": np.array([0.0, 2.0, 0.0, 0.0]),
            "ünïcode id": np.array([1.0, 1.0, 1.0, 1.0]),
        }
    )
    path = tmp_path / "store.emb1"
    save_store_emb1(store, path)
    loaded = load_store(path)
    assert len(loaded) == 3
    assert loaded.dim == 4
    for key in store.ids():
        assert np.allclose(loaded.get(key).vector, store.get(key).vector, atol=1e-7)
        assert is_unit(loaded.get(key))


def test_json_store_roundtrip(tmp_path):
    store = EmbeddingStore.from_vectors({"x": np.array([3.0, 4.0])})
    path = tmp_path / "store.json"
    save_store_json(store, path)
    loaded = load_store(path)
    assert loaded.get("x").vector == pytest.approx([0.6, 0.8])


def test_load_normalizes_norm_two_vector(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"dim": 2, "entries": {"v": [2.0, 0.0]}}))
    loaded = load_store(path)
    assert np.allclose(loaded.get("v").vector, [1.0, 0.0])


def test_load_rejects_nan_naming_id(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"dim": 2, "entries": {"good": [1, 0], "broken": [float("nan"), 1]}}))
    with pytest.raises(StoreLoadError, match="broken"):
        load_store(path)


def test_load_rejects_zero_vector(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"dim": 2, "entries": {"z": [0.0, 0.0]}}))
    with pytest.raises(StoreLoadError, match="zero norm"):
        load_store(path)


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "store.emb1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(StoreLoadError, match="magic"):
        load_store(path)


def test_load_rejects_truncated_emb1(tmp_path):
    path = tmp_path / "store.emb1"
    path.write_bytes(b"EMB1" + struct.pack("<II", 4, 2) + struct.pack("<H", 1) + b"a")
    with pytest.raises(StoreLoadError):
        load_store(path)


def test_load_rejects_duplicate_ids(tmp_path):
    rec = struct.pack("<H", 1) + b"a" + struct.pack("<4f", 1, 0, 0, 0)
    path = tmp_path / "store.emb1"
    path.write_bytes(b"EMB1" + struct.pack("<II", 4, 2) + rec + rec)
    with pytest.raises(StoreLoadError, match="duplicate"):
        load_store(path)


def test_load_rejects_dim_mismatch_in_json(tmp_path):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"dim": 3, "entries": {"v": [1.0, 0.0]}}))
    with pytest.raises(StoreLoadError, match="shape"):
        load_store(path)


def test_missing_store_file(tmp_path):
    with pytest.raises(StoreLoadError, match="not found"):
        load_store(tmp_path / "absent.emb1")


# --------------------------------------------------------------------------
# Remote embedding client against a live stub server
# --------------------------------------------------------------------------

class StubState:
    def __init__(self):
        self.dim = 4
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.fail_times = 0
        self.auth_headers = []
        self.lock = threading.Lock()


def make_stub_handler(state: StubState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            with state.lock:
                state.calls += 1
                state.in_flight += 1
                state.max_in_flight = max(state.max_in_flight, state.in_flight)
                state.auth_headers.append(self.headers.get("Authorization"))
                must_fail = state.fail_times > 0
                if must_fail:
                    state.fail_times -= 1
            time.sleep(0.02)
            try:
                if must_fail:
                    self.send_response(500)
                    self.end_headers()
                    return
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                texts = body["texts"]
                vectors = []
                for text in texts:
                    seedvec = [float((hash(text) >> (8 * i)) % 97 + 1) for i in range(state.dim)]
                    vectors.append(seedvec)  # deliberately unnormalized
                payload = json.dumps({"model": "stub", "dim": state.dim, "vectors": vectors}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
            finally:
                with state.lock:
                    state.in_flight -= 1

    return Handler


@pytest.fixture()
def stub_server():
    state = StubState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), make_stub_handler(state))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", state
    server.shutdown()
    server.server_close()


def test_fetch_remote_order_and_normalization(stub_server):
    url, state = stub_server
    texts = [f"caption {i}" for i in range(7)]
    cfg = RemoteConfig(endpoint=url, batch_size=2, concurrency=3)
    out = fetch_remote_texts(texts, cfg)
    assert [e.id for e in out] == texts
    assert all(is_unit(e, tol=1e-9) for e in out)
    # same text embeds to the same vector
    again = fetch_remote_texts(texts, cfg)
    for a, b in zip(out, again):
        assert np.allclose(a.vector, b.vector)


def test_fetch_remote_empty_input_makes_no_call(stub_server):
    url, state = stub_server
    assert fetch_remote_texts([], RemoteConfig(endpoint=url)) == []
    assert state.calls == 0


def test_fetch_remote_dim_mismatch(stub_server):
    url, state = stub_server
    cfg = RemoteConfig(endpoint=url, expected_dim=512)
    with pytest.raises(RemoteEmbeddingError, match="dim 4"):
        fetch_remote_texts(["x"], cfg)


def test_fetch_remote_retries_then_reports_count(stub_server):
    url, state = stub_server
    state.fail_times = 99
    cfg = RemoteConfig(endpoint=url, retries=2)
    with pytest.raises(RemoteEmbeddingError) as exc:
        fetch_remote_texts(["x"], cfg)
    assert exc.value.retries == 2
    assert "after 2 attempts" in str(exc.value)


def test_fetch_remote_recovers_within_retry_budget(stub_server):
    url, state = stub_server
    state.fail_times = 1
    cfg = RemoteConfig(endpoint=url, retries=3)
    out = fetch_remote_texts(["x"], cfg)
    assert len(out) == 1


def test_fetch_remote_sends_bearer_token(stub_server):
    url, state = stub_server
    fetch_remote_texts(["x"], RemoteConfig(endpoint=url, token="sekrit"))
    assert "Bearer sekrit" in state.auth_headers


def test_fetch_remote_bounds_concurrency(stub_server):
    url, state = stub_server
    texts = [f"t{i}" for i in range(24)]
    fetch_remote_texts(texts, RemoteConfig(endpoint=url, batch_size=1, concurrency=4))
    assert state.max_in_flight <= 4
    assert state.calls == 24
