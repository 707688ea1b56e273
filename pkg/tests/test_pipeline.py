import csv
import json

import numpy as np
import pytest

from tqsel.pipeline import (
    DESK_PRESET, EarlyStopping, ExperimentConfig, evaluate, export_trajectory, load_config, load_corpus,
    load_examples, load_manifest, lr_at_epoch, make_toy_corpus, resimulate_targets, save_config,
    score_predictions, synthesize_dataset, train,
)
from tqsel.pipeline.train import frame_label_index, pool_to_labels, square_symmetry
from tqsel.signal import read_wav

FRAME_PARAMS = {"d_model": 16, "heads": 2, "n_enc": 1, "n_dec": 1, "d_ff": 32}
CLIP_PARAMS = {"blocks": [[4, 2], [8, 2]]}


def test_config_defaults_and_round_trip(tmp_path):
    cfg = ExperimentConfig()
    assert (cfg.n_fft, cfg.hop, cfg.num_lags, cfg.batch_size, cfg.sigma_sq) == (1024, 640, 96, 64, 5.0)
    assert cfg.lr == 5e-4
    save_config(cfg.with_updates(seed=3), tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg.with_updates(seed=3)
    assert back.config_hash() != cfg.config_hash()
    (tmp_path / "c.txt").write_text("preset = desk\nseed = 7\nmodel.classifier_hidden = 64\n", encoding="utf-8")
    kv = load_config(tmp_path / "c.txt")
    assert kv.seed == 7 and kv.batch_size == DESK_PRESET["batch_size"] and kv.lr == DESK_PRESET["lr"]
    assert kv.model_params == {**DESK_PRESET["model_params"], "classifier_hidden": 64}
    (tmp_path / "f.txt").write_text("preset = desk\nmodel = \"frame_cross_attn\"\n", encoding="utf-8")
    assert load_config(tmp_path / "f.txt").model_params == {}
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"nonsense": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(batch_size=0)


def test_lr_schedule():
    cfg = ExperimentConfig()
    assert lr_at_epoch(cfg, 1) == lr_at_epoch(cfg, 20) == 5e-4
    assert lr_at_epoch(cfg, 21) == pytest.approx(2.5e-4)


def test_patience_stops_at_epoch_twelve():
    stopper = EarlyStopping(10)
    maes = [50, 49] + [49] * 20
    stopped = None
    for epoch, mae in enumerate(maes, 1):
        stopper.update(epoch, mae)
        if stopper.should_stop:
            stopped = epoch
            break
    assert stopped == 12 and stopper.best_epoch == 2


def test_score_predictions():
    rng = np.random.default_rng(0)
    truth = rng.uniform(0, 360, 20000)
    recs = [{"target_deg": float(t)} for t in truth]
    assert np.all(np.array(score_predictions(recs, truth)) == 0.0)
    constant = np.mean(score_predictions(recs, np.zeros(truth.size)))
    assert abs(constant - 90.0) < 2.0
    moving = [{"target_series": [10.0, 350.0]}]
    assert score_predictions(moving, [[20.0, 0.0]]) == [10.0]


def test_label_pooling_conserves_frames():
    cfg = ExperimentConfig()
    n_frames = cfg.stft.n_frames(160000)
    idx = frame_label_index(n_frames, 100, cfg)
    counts = np.bincount(idx, minlength=100)
    assert counts.sum() == n_frames == 249
    logits = np.random.default_rng(1).standard_normal((n_frames, 360))
    pooled = pool_to_labels(logits, 100, cfg)
    assert pooled.shape == (100, 360)
    j = 37
    np.testing.assert_allclose(pooled[j], logits[idx == j].mean(axis=0))


def test_corpus_loading(tiny):
    entries = load_corpus(tiny["corpus"])
    assert len(entries) == 8 * 4
    assert {e.split for e in entries} == {"train", "eval", "test"}
    assert len({e.caption for e in entries}) == 8


def test_corpus_too_small(tmp_path):
    make_toy_corpus(tmp_path / "c", {"train": 0, "eval": 0, "test": 0}, duration=1.0)
    with pytest.raises(ValueError):
        synthesize_dataset(tmp_path / "c", "2dir", 1, "train", 0, tmp_path / "out", duration=1.0,
                           max_image_order=0)


def test_manifest_fields_and_splits(tiny):
    recs = load_manifest(tiny["easy_train"])
    corpus = {e.clip_id: e for e in load_corpus(tiny["corpus"])}
    assert len(recs) == 12
    for rec in recs:
        assert rec["split"] == "train"
        assert all(corpus[c].split == "train" for c in rec["clips"])
        assert rec["target_source"] == 0
        assert rec["query_text"] == corpus[rec["clips"][0]].caption
        assert 0.0 <= rec["target_deg"] < 360.0
        assert read_wav(rec["audio_path"]).samples.shape == (4, 32000)
    assert all(r["split"] == "eval" for r in load_manifest(tiny["easy_eval"]))


def test_manifest_is_deterministic(tiny, tmp_path):
    synthesize_dataset(tiny["corpus"], "1dir1add", 12, "train", 1, tmp_path / "again", duration=2.0,
                       max_image_order=2, threads=1)
    assert (tmp_path / "again" / "manifest.jsonl").read_bytes() == tiny["easy_train"].read_bytes()


def test_additive_source_equal_in_every_channel(tiny):
    from tqsel.room import render_scene_source, sample_scene
    from tqsel.signal import Waveform

    rec = load_manifest(tiny["easy_train"])[0]
    scene = sample_scene(rec["seed"], rec["protocol"], 2.0, 16000, 2)
    dry = Waveform(np.random.default_rng(0).standard_normal(32000), 16000)
    audio, labels = render_scene_source(scene, 1, dry)
    energy = np.sum(audio.samples ** 2, axis=1)
    assert labels is None
    assert np.all(energy == energy[0])
    assert scene.sources[1].trajectory is None


def test_resimulated_targets_match(tiny):
    for key in ("easy_train", "hard_eval", "moving_eval"):
        for rec in load_manifest(tiny[key]):
            again = resimulate_targets(rec)
            if "target_series" in rec:
                np.testing.assert_array_equal(again, rec["target_series"])
            else:
                assert np.all(again == rec["target_deg"])


def test_moving_series_length(tiny):
    for rec in load_manifest(tiny["moving_eval"]):
        assert len(rec["target_series"]) == 20


def _anechoic_gcc(azimuth):
    from tqsel.features import gcc_phat_stack
    from tqsel.room import ArrayGeometry, RoomSpec, SourceTrajectory, render_static_source, simulate_rir
    from tqsel.signal import Waveform

    room = RoomSpec((20.0, 20.0, 6.0), 0.5, max_image_order=0)
    array = ArrayGeometry.square((10.0, 10.0, 1.1), 0.12)
    pos = SourceTrajectory.static(azimuth, 2.0, 0.3).position(0.0, array)
    dry = Waveform(np.random.default_rng(0).standard_normal(8000), 16000)
    return gcc_phat_stack(render_static_source(dry, simulate_rir(room, pos, array))).values


def test_square_symmetry_matches_rotated_simulation():
    from tqsel.pipeline.train import Example

    az = 23.0
    ex = Example("x", "train", _anechoic_gcc(az), np.zeros(512), None, np.array([az]), True)
    for element in range(8):
        out = square_symmetry(ex, element)
        ref = _anechoic_gcc(float(out.labels[0]))
        np.testing.assert_array_equal(np.argmax(out.gcc, -1), np.argmax(ref, -1))
    assert square_symmetry(ex, 0) is ex
    # a half turn maps the azimuth to its antipode
    assert square_symmetry(ex, 4).labels[0] == pytest.approx((az - 180.0) % 360.0)


def _train(tiny, tmp_path, model, params, train_key, eval_key, epochs=2, **kw):
    cfg = ExperimentConfig(model=model, model_params=params, batch_size=4, max_epochs=epochs, **kw)
    return cfg, train(cfg, tiny[train_key], tiny[eval_key], tmp_path / "run")


def test_train_and_evaluate_clip_model(tiny, tmp_path):
    cfg, result = _train(tiny, tmp_path, "clip_concat", CLIP_PARAMS, "easy_train", "easy_eval")
    assert result.checkpoint.exists() and result.epochs_run == 2
    with open(tmp_path / "run" / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    report = evaluate(result.checkpoint, tiny["easy_eval"], tmp_path / "report.json")
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["mae"] == pytest.approx(np.mean([e["mae"] for e in saved["per_example"]]))
    assert report.config_hash == cfg.config_hash()
    assert set(report.per_split) == {"eval"}
    with pytest.raises(ValueError):
        evaluate(result.checkpoint, tiny["moving_eval"])


def test_training_is_deterministic(tiny, tmp_path):
    cfg = ExperimentConfig(model_params=CLIP_PARAMS, batch_size=4, augment="square_dihedral")
    a = train(cfg, tiny["easy_train"], tiny["easy_eval"], tmp_path / "a", max_epochs=1)
    b = train(cfg, tiny["easy_train"], tiny["easy_eval"], tmp_path / "b", max_epochs=1)
    assert abs(a.history[0]["loss"] - b.history[0]["loss"]) <= 1e-12


def test_frame_model_and_trajectory_export(tiny, tmp_path):
    _, result = _train(tiny, tmp_path, "frame_cross_attn", FRAME_PARAMS, "moving_train", "moving_eval", epochs=1)
    rec = load_manifest(tiny["moving_eval"])[0]
    out = tmp_path / "traj.csv"
    rows = export_trajectory(result.checkpoint, rec["id"], out=out)
    assert len(rows) == 20
    with open(out) as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["frame", "gt_deg", "pred_deg"]
    assert [float(r[1]) for r in table[1:]] == rec["target_series"]
    assert all(0 <= float(r[2]) < 360 for r in table[1:])

    static_id = load_manifest(tiny["easy_eval"])[0]["id"]
    with pytest.raises(ValueError, match="tqsel eval"):
        export_trajectory(result.checkpoint, static_id, manifest=tiny["easy_eval"])
    with pytest.raises(KeyError):
        export_trajectory(result.checkpoint, "no_such_id")


def test_frame_model_on_static_data(tiny, tmp_path):
    _, result = _train(tiny, tmp_path, "frame_cross_attn", FRAME_PARAMS, "easy_train", "hard_eval", epochs=1)
    assert evaluate(result.checkpoint, tiny["hard_eval"]).mae <= 180.0
