"""Evaluation frameworks: metrics, reports, and batching invariance."""

import json

import numpy as np
import pytest

from modrec import attacks, dataset, evaluation, models, training
from modrec.errors import ConfigError, ShapeError

SPEC = dataset.DatasetSpec(schemes=("bpsk", "qpsk"), signals_per_class=40,
                           samples_per_signal=64, snr_db=20.0, seed=5)


@pytest.fixture(scope="module")
def ds():
    return dataset.split(dataset.generate(SPEC), 0.7, 0.1, seed=0)


@pytest.fixture(scope="module")
def model(ds):
    m = models.build_vt_cnn(n_classes=2, input_len=64, width_scale=0.2,
                            seed=0, dropout_p=0.2)
    training.train_standard(m, ds, training.TrainConfig(
        epochs=12, batch_size=8, lr=3e-3, patience=12, seed=2))
    return m


@pytest.fixture(scope="module")
def test_set(ds):
    idx = ds.indices("test")
    return [ds.signals[k] for k in idx], ds.labels[idx]


class TestMetrics:
    def test_fooling_rate_counts_flips_of_correct(self):
        y = np.array([0, 1, 0, 1])
        clean = np.array([0, 1, 1, 1])   # three correct
        adv = np.array([1, 1, 0, 0])     # two of the correct ones flip
        assert evaluation.fooling_rate(clean, adv, y) == pytest.approx(2 / 3)

    def test_fooling_rate_no_correct_predictions(self):
        y = np.array([0, 0])
        clean = np.array([1, 1])
        adv = np.array([0, 0])
        assert evaluation.fooling_rate(clean, adv, y) == 0.0

    def test_confusion_counts(self):
        y = [0, 0, 1, 2]
        p = [0, 1, 1, 2]
        c = evaluation.confusion_matrix(y, p, 3)
        assert c.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]
        assert c.sum() == 4

    def test_confusion_snr_filter(self):
        y = [0, 0, 1]
        p = [0, 1, 1]
        tags = [10.0, 20.0, 20.0]
        c = evaluation.confusion_matrix(y, p, 2, snr_tags=tags,
                                        snr_filter=20.0)
        assert c.tolist() == [[0, 1], [0, 1]]
        with pytest.raises(ConfigError):
            evaluation.confusion_matrix(y, p, 2, snr_filter=20.0)

    def test_confusion_shape_mismatch(self):
        with pytest.raises(ShapeError):
            evaluation.confusion_matrix([0, 1], [0], 2)

    def test_normalize_marks_empty_rows(self):
        counts = np.array([[2, 2], [0, 0]])
        norm, empty = evaluation.normalize_confusion(counts)
        assert norm[0].tolist() == [0.5, 0.5]
        assert norm[1].tolist() == [0.0, 0.0]
        assert empty == [1]


class TestEvaluate:
    def test_report_fields(self, model, test_set, ds):
        sigs, y = test_set
        rep = evaluation.eval_robustness(model, sigs, y, 20.0, seed=3,
                                         class_names=ds.class_names)
        assert rep.framework == "robustness"
        assert rep.attack_kind == "pga"
        assert rep.n_signals == len(y)
        assert rep.channel_snr_db is None
        assert rep.confusion_clean.sum() == len(y)
        assert rep.confusion_adv.sum() == len(y)
        assert 0.0 <= rep.adv_accuracy <= rep.clean_accuracy <= 1.0
        assert rep.misclassification_rate == pytest.approx(
            1.0 - rep.adv_accuracy)

    def test_clean_accuracy_matches_direct(self, model, test_set):
        sigs, y = test_set
        rep = evaluation.eval_robustness(model, sigs, y, 25.0, seed=3)
        x = np.stack([s.to_array(np.float32) for s in sigs])
        assert rep.clean_accuracy == pytest.approx(
            float(np.mean(model.classify(x) == y)))

    def test_attack_lowers_accuracy(self, model, test_set):
        sigs, y = test_set
        rep = evaluation.eval_robustness(model, sigs, y, 15.0, seed=3)
        assert rep.adv_accuracy < rep.clean_accuracy

    def test_batch_size_invariance(self, model, test_set):
        sigs, y = test_set
        a = evaluation.eval_robustness(model, sigs, y, 20.0, batch_size=7)
        b = evaluation.eval_robustness(model, sigs, y, 20.0, batch_size=256)
        assert a.adv_accuracy == b.adv_accuracy
        assert np.array_equal(a.confusion_adv, b.confusion_adv)

    def test_thread_count_invariance(self, model, test_set):
        sigs, y = test_set
        a = evaluation.eval_robustness(model, sigs, y, 20.0, batch_size=8,
                                       threads=1)
        b = evaluation.eval_robustness(model, sigs, y, 20.0, batch_size=8,
                                       threads=4)
        assert a.adv_accuracy == b.adv_accuracy
        assert np.array_equal(a.confusion_adv, b.confusion_adv)

    def test_validation_errors(self, model, test_set):
        sigs, y = test_set
        with pytest.raises(ConfigError):
            evaluation.evaluate(model, sigs, y, 20.0, framework="other")
        with pytest.raises(ConfigError):
            evaluation.evaluate(model, sigs, y, 20.0, framework="security")
        with pytest.raises(ShapeError):
            evaluation.evaluate(model, sigs, y[:-1], 20.0)

    def test_default_class_names(self, model, test_set):
        sigs, y = test_set
        rep = evaluation.eval_robustness(model, sigs, y, 20.0)
        assert rep.class_names == ("class0", "class1")

    def test_empty_class_reported(self, ds, test_set):
        # a 3-class model scored on 2-class data leaves one row hollow
        sigs, y = test_set
        wide = models.build_vt_cnn(n_classes=3, input_len=64, width_scale=0.2,
                                   seed=0)
        rep = evaluation.eval_robustness(wide, sigs, y, 20.0,
                                         class_names=("a", "b", "c"))
        assert rep.empty_classes == ["c"]


class TestSecurity:
    def test_channel_noise_changes_predictions(self, model, test_set):
        # with a 0 dB channel the classifier sees mostly noise
        sigs, y = test_set
        rob = evaluation.eval_robustness(model, sigs, y, 40.0, seed=3)
        sec = evaluation.eval_security(model, sigs, y, 40.0,
                                       channel_snr_db=0.0, seed=3)
        assert sec.channel_snr_db == 0.0
        assert sec.adv_accuracy < rob.adv_accuracy

    def test_report_deterministic_in_seed(self, model, test_set):
        sigs, y = test_set
        a = evaluation.eval_security(model, sigs, y, 20.0,
                                     channel_snr_db=10.0, seed=3)
        b = evaluation.eval_security(model, sigs, y, 20.0,
                                     channel_snr_db=10.0, seed=3)
        assert np.array_equal(a.confusion_adv, b.confusion_adv)
        assert a.adv_accuracy == b.adv_accuracy

    def test_noise_keyed_by_seed_and_index(self):
        x = np.zeros((2, 2, 16), dtype=np.float32)
        power = np.array([1.0, 1.0])
        idx = np.array([0, 1])
        a = evaluation._security_noise(x, power, 10.0, seed=3, global_idx=idx)
        b = evaluation._security_noise(x, power, 10.0, seed=3, global_idx=idx)
        c = evaluation._security_noise(x, power, 10.0, seed=4, global_idx=idx)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a[0], a[1])

    def test_noise_power_tracks_clean_power(self):
        from modrec import dsp
        x = np.zeros((1, 2, 4096), dtype=np.float64)
        out = evaluation._security_noise(x, np.array([2.0]), 10.0, seed=0,
                                         global_idx=np.array([0]))
        assert out.std() == pytest.approx(dsp.noise_sigma(2.0, 10.0),
                                          rel=0.05)

    def test_noise_stream_is_per_signal(self, model, test_set):
        # same signal index must get the same noise draw at any batch size
        sigs, y = test_set
        a = evaluation.eval_security(model, sigs, y, 20.0,
                                     channel_snr_db=10.0, seed=3,
                                     batch_size=5)
        b = evaluation.eval_security(model, sigs, y, 20.0,
                                     channel_snr_db=10.0, seed=3,
                                     batch_size=64)
        assert np.array_equal(a.confusion_adv, b.confusion_adv)


class TestReportSerialization:
    def test_json_round_trip(self, model, test_set, ds, tmp_path):
        sigs, y = test_set
        rep = evaluation.eval_robustness(model, sigs, y, 20.0,
                                         class_names=ds.class_names)
        path = tmp_path / "report.json"
        rep.to_json(path)
        loaded = json.loads(path.read_text())
        assert loaded["adv_accuracy"] == rep.adv_accuracy
        assert loaded["class_names"] == list(ds.class_names)
        assert np.array(loaded["confusion_adv"]).sum() == len(y)
        for row, total in zip(loaded["confusion_clean_normalized"],
                              np.array(loaded["confusion_clean"]).sum(1)):
            if total:
                assert sum(row) == pytest.approx(1.0)

    def test_confusion_csv(self, model, test_set, ds, tmp_path):
        sigs, y = test_set
        rep = evaluation.eval_robustness(model, sigs, y, 20.0,
                                         class_names=ds.class_names)
        path = tmp_path / "confusion.csv"
        rep.write_confusion_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "true/pred," + ",".join(ds.class_names)
        assert len(lines) == 1 + len(ds.class_names)


class TestSprGrid:
    def test_structure_and_consistency(self, model, test_set):
        sigs, y = test_set
        grid = evaluation.spr_grid(model, sigs, y, (25.0, 15.0),
                                   attack_kinds=("fgsm",), seed=3)
        assert set(grid["grid"]) == {"fgsm"}
        assert set(grid["grid"]["fgsm"]) == {"25", "15"}
        single = evaluation.eval_robustness(model, sigs, y, 15.0,
                                            attack_kind="fgsm", seed=3)
        cell = grid["grid"]["fgsm"]["15"]
        assert cell["adv_accuracy"] == single.adv_accuracy
        assert grid["clean_accuracy"] == single.clean_accuracy
