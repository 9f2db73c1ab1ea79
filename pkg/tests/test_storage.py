import io
import json

import numpy as np
import pytest

from hiersearch import (
    ImageRecord,
    Mapper,
    TrainConfig,
    build_index,
    compute_class_embeddings,
    embed_records,
    evaluate_retrieval,
    synthesize,
    train_mapper,
)
from hiersearch.errors import FormatError
from hiersearch.retrieval import Hit
from hiersearch.storage import (
    INDEX_FORMAT,
    RunManifest,
    load_embedding_csv,
    load_embedding_table,
    load_index,
    load_mapper,
    load_matrix,
    mapper_hash,
    read_records,
    save_embedding_csv,
    save_embedding_table,
    save_eval_report,
    save_index,
    save_mapper,
    write_hits_jsonl,
    write_loss_history,
    write_records,
)


class TestRunManifest:
    def test_digest_ignores_timestamp(self):
        a = RunManifest("embed", {"x": 1}, seed=0, timestamp="2020-01-01T00:00:00+00:00")
        b = RunManifest("embed", {"x": 1}, seed=0, timestamp="2030-01-01T00:00:00+00:00")
        assert a.digest() == b.digest()
        assert a.digest() != RunManifest("embed", {"x": 2}, seed=0).digest()
        assert a.as_block()["run_hash"] == a.digest()


class TestEmbeddingFiles:
    def test_round_trip(self, t0, tmp_path):
        table = compute_class_embeddings(t0.similarity_matrix(), t0.leaf_ids)
        path = save_embedding_table(table, tmp_path / "emb", RunManifest("embed"))
        back = load_embedding_table(path)
        assert back.class_ids == table.class_ids
        assert back.vectors.tobytes() == table.vectors.tobytes()
        assert "run_hash" in json.loads(path.read_text())

    def test_csv_round_trip(self, t0, tmp_path):
        table = compute_class_embeddings(t0.similarity_matrix(), t0.leaf_ids)
        save_embedding_csv(table, tmp_path / "emb.csv")
        np.testing.assert_array_equal(load_embedding_csv(tmp_path / "emb.csv").vectors, table.vectors)

    def test_wrong_format(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "something-else"}')
        with pytest.raises(FormatError):
            load_embedding_table(tmp_path / "x.json")

    def test_load_matrix(self, tmp_path):
        (tmp_path / "s.json").write_text("[[1, 0.5], [0.5, 1]]")
        (tmp_path / "s.csv").write_text("1,0.5\n0.5,1\n")
        np.testing.assert_array_equal(load_matrix(tmp_path / "s.json"), load_matrix(tmp_path / "s.csv"))


class TestMapperFiles:
    @pytest.mark.parametrize("hidden", [None, 3])
    def test_round_trip(self, tmp_path, hidden):
        m = Mapper.initialize(4, 5, 5, 0, hidden_dim=hidden, loss_mix=0.5)
        path = save_mapper(m, tmp_path / "m", TrainConfig())
        back, manifest = load_mapper(path)
        for k, v in m.params().items():
            assert back.params()[k].tobytes() == v.tobytes()
        assert back.loss_mix == 0.5 and manifest["seed"] == 0
        assert mapper_hash(path) == manifest["blob_sha256"]

    def test_truncated_blob(self, tmp_path):
        path = save_mapper(Mapper.initialize(4, 5, 5, 0), tmp_path / "m")
        blob = tmp_path / "m.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_mapper(path)

    def test_loss_history_csv(self, tmp_path):
        table = compute_class_embeddings(np.eye(2))
        _, hist = train_mapper([(table.vectors[0], 0), (table.vectors[1], 1)], table,
                               TrainConfig(epochs=3, restart_epochs=(3,)))
        write_loss_history(hist, tmp_path / "l.csv")
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "epoch,lr,correlation,cross_entropy,total"
        assert len(lines) == 1 + len(hist)


class TestRecords:
    def test_round_trip(self, tmp_path):
        recs = [
            ImageRecord("a", raw_features=np.array([0.1, 0.2]), label="x"),
            ImageRecord("b", raw_features=np.array([1 / 3, 2.0]), rerank_descriptor=np.array([1.0, 2.0, 3.0])),
        ]
        sidecar = write_records(recs, tmp_path / "d.jsonl")
        back = read_records(tmp_path / "d.jsonl")
        assert [r.image_id for r in back] == ["a", "b"]
        assert back[1].raw_features.tobytes() == recs[1].raw_features.tobytes()
        assert back[0].label == "x" and back[1].label is None
        assert back[0].rerank_descriptor is None
        assert json.loads(sidecar.read_text())["count"] == 2

    def test_bad_line(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"image_id": "a", "features": [1]}\nnot json\n')
        with pytest.raises(FormatError, match=":2:"):
            read_records(tmp_path / "d.jsonl")


class TestIndexFiles:
    @pytest.fixture(scope="class")
    @staticmethod
    def index():
        recs = [
            ImageRecord("b", embedding=np.array([0.6, 0.8]), label="x", rerank_descriptor=np.array([1.0, 0.0])),
            ImageRecord("a", embedding=np.array([1.0, 0.0]), label="y"),
        ]
        return build_index(recs, taxonomy_hash="t", mapper_hash="m")

    def test_round_trip(self, index, tmp_path):
        path = save_index(index, tmp_path / "idx", RunManifest("index"))
        manifest = json.loads(path.read_text())
        assert manifest["format"] == INDEX_FORMAT
        assert manifest["taxonomy_hash"] == "t" and manifest["mapper_hash"] == "m"
        back = load_index(tmp_path / "idx")
        assert back.image_ids == index.image_ids and back.labels == index.labels
        assert back.embeddings.tobytes() == index.embeddings.tobytes()
        np.testing.assert_array_equal(back.has_descriptor(), index.has_descriptor())

    def test_format_tag_checked(self, index, tmp_path):
        path = save_index(index, tmp_path / "idx")
        manifest = json.loads(path.read_text())
        manifest["format"] = "hiersearch-index/0"
        path.write_text(json.dumps(manifest))
        with pytest.raises(FormatError):
            load_index(tmp_path / "idx")


def test_hits_jsonl():
    fh = io.StringIO()
    write_hits_jsonl(fh, "q", [Hit("a", 0.9), Hit("b", 0.5, 0.7)])
    rows = [json.loads(line) for line in fh.getvalue().splitlines()]
    assert [r["rank"] for r in rows] == [1, 2]
    assert "rerank_score" not in rows[0] and rows[1]["rerank_score"] == 0.7


def test_eval_report_files(t0, tmp_path):
    ds = synthesize(t0, per_class=10, sigma=0.1)
    m, _ = train_mapper(ds.training_pairs(t0), ds.table, TrainConfig(epochs=3, restart_epochs=(3,)))
    idx = build_index(embed_records(m, ds.train))
    rep = evaluate_retrieval(idx, m, t0, ds.test, K=5)
    rpath, cpath = save_eval_report(rep, tmp_path / "ev")
    assert json.loads(rpath.read_text())["K"] == 5
    assert len(cpath.read_text().splitlines()) == 6
