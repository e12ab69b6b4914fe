import math

import numpy as np
import pytest

import proclip


@pytest.fixture(scope="module")
def corpus():
    spec = proclip.SynthSpec()
    spec.n_videos = 12
    spec.n_queries = 12
    spec.frames_min = 6
    spec.frames_max = 10
    spec.raw_dim = 16
    spec.dim = 16
    spec.seed = 3
    return proclip.synth_corpus(spec)


def test_corpus_round_trip(tmp_path, corpus):
    path = tmp_path / "c.pclp"
    proclip.write_corpus(corpus, path)
    assert proclip.read_corpus(path) == corpus
    assert proclip.validate_corpus(corpus) == []
    assert corpus.dims == (16, 16)
    assert corpus.ground_truth(13 % 12) == corpus.video_ids[1]


def test_bad_magic_raises(tmp_path):
    path = tmp_path / "junk.pclp"
    path.write_bytes(b"XXXXXXXXXXXX")
    with pytest.raises(proclip.FormatError, match="bad-magic"):
        proclip.read_corpus(path)


def test_loss_and_selection():
    assert proclip.contrastive_loss(np.full((4, 4), 0.3)) == pytest.approx(math.log(4), abs=1e-12)
    idx, alpha = proclip.topk_infer(np.array([0.1, 0.9, 0.5]), 2)
    assert idx == [1, 2]
    assert alpha[0] == pytest.approx(0.599, abs=1e-3)
    w = proclip.hard_topk_train(np.array([0.1, 0.9, 0.5]), 2, 1e-4)
    assert w.shape == (2, 3)
    assert w[0, 1] == pytest.approx(1.0, abs=1e-6) and w[1, 2] == pytest.approx(1.0, abs=1e-6)
    assert proclip.anneal_temperature(0) == 5.0
    assert proclip.retained_count(1000, 50) == 500
    assert proclip.cosine_similarity(np.array([1.0, 1.0]) / math.sqrt(2), np.array([1.0, 0.0])) == pytest.approx(
        math.sqrt(2) / 2
    )


def test_grad_check_blocks():
    for block in proclip.registered_blocks():
        assert proclip.grad_check(block) < 1e-4, block


def test_metrics_example():
    m = proclip.metrics_from_ranks([1, 3])
    assert (m["r1"], m["r5"], m["mean_rank"]) == (0.5, 1.0, 2.0)


def test_pipeline(tmp_path, corpus):
    model = proclip.Model.untrained(corpus, seed=2)
    index = proclip.index_corpus(corpus, model)
    assert index.size == 12
    assert np.allclose(np.linalg.norm(index.distilled, axis=1), 1.0, atol=1e-6)
    index.save(tmp_path / "i.pclx")
    assert proclip.read_index(tmp_path / "i.pclx", corpus, model) == index

    full = proclip.retrieve(corpus, 0, index, k_percent=100)
    assert full["stage2_count"] == 12
    half = proclip.retrieve(corpus, 0, index, k_percent=50)
    assert half["stage2_count"] == 6
    assert sorted(half["ids"]) == sorted(corpus.video_ids)

    report = proclip.evaluate(corpus, index, k_percent=100)
    assert 1.0 <= report["mean_rank"] <= 12.0
    assert report["r1"] <= report["r5"] <= report["r10"]

    lat = proclip.bench(corpus, model, [100, 50], rounds=2)
    assert [r["stage2_count"] for r in lat] == [12, 6]
    assert all(r["aq_s"] <= r["fq_s"] for r in lat)


def test_training_and_freeze(tmp_path, corpus):
    config = proclip.TrainConfig()
    config.epochs = 3
    config.batch_size = 4
    config.k_frames = 4
    config.distill_epochs = 3
    stage1, losses = proclip.train_retrieval_stage(corpus, config)
    assert len(losses) == 3 and losses[-1] < losses[0]
    stage2, mse = proclip.train_distill_stage(corpus, stage1, config)
    assert mse[-1] < mse[0]
    for group in ("encoder", "gate", "scorer", "aggregator"):
        assert stage1.group_equal(stage2, group)
    assert not stage1.group_equal(stage2, "distill")
    stage2.save(tmp_path / "m.pclw")
    assert proclip.Model.load(tmp_path / "m.pclw").hash == stage2.hash
