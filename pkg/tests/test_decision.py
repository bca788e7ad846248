import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from sklearn.svm import SVC

from conftest import replicate
from vauth.decision import (CENTER, FV_LEN, MAGIC, ClassifierModel, FeatureVector, LabeledExample,
                            build_feature_vector, build_training_set, classify, hoeffding_bound,
                            load_model, model_from_bytes, model_to_bytes, read_training_csv,
                            save_model, segment_bound, threshold_rule, train_classifier,
                            training_accuracy, write_training_csv)
from vauth.errors import DegenerateTrainingSet, ModelFormatError
from vauth.signal_core import CrossCorrelation, SampledSignal, xcorr_normalized
from vauth.smo import platt_calibration, smo_dual
from vauth.synth import synth_phoneme_bank


def dual_objective(alpha, y, K):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def unit(k):
    v = np.zeros(FV_LEN)
    v[k] = 1.0
    return FeatureVector(v)


class TestFeatureVector:
    def test_impulse(self):
        # 4001 lags: the grid steps 4 lags at a time and never lands beside the peak
        h = np.zeros(4001)
        h[2000] = 1.0
        fv = build_feature_vector(CrossCorrelation(h, 2000))
        assert fv.values[CENTER] == 1.0
        assert np.count_nonzero(fv.values) == 1

    def test_impulse_short_h_is_upsampled(self):
        # fewer lags than vector slots: linear interpolation spreads the
        # impulse onto fractional neighbours, all strictly below the peak
        h = np.zeros(301)
        h[150] = 1.0
        fv = build_feature_vector(CrossCorrelation(h, 150))
        assert fv.values[CENTER] == 1.0
        others = np.delete(fv.values, CENTER)
        assert np.all(others < 1.0) and np.all(others >= 0.0)
        assert int(np.argmax(fv.values)) == CENTER

    def test_self_correlation(self):
        x = SampledSignal(np.random.default_rng(0).standard_normal(400), 8000.0)
        fv = build_feature_vector(xcorr_normalized(x, x))
        assert fv.center_value == pytest.approx(1.0)
        assert int(np.argmax(np.abs(fv.values))) == CENTER

    def test_length_one(self):
        fv = build_feature_vector(CrossCorrelation([0.7], 0))
        assert fv.values.shape == (FV_LEN,)
        assert fv.center_value == 0.7 and np.count_nonzero(fv.values) == 1

    def test_polarity_flip(self):
        h = np.array([0.1, -0.9, 0.2])
        fv = build_feature_vector(CrossCorrelation(h, 1))
        assert fv.center_value == pytest.approx(0.9)
        assert fv.values[0] == pytest.approx(-0.1)

    def test_interpolation_grid(self):
        # peak at lag index 100 of 201: left half samples n * 100 / 500
        h = np.linspace(0, 1, 101)
        h = np.concatenate([h, h[-2::-1]])
        fv = build_feature_vector(CrossCorrelation(h, 100))
        np.testing.assert_allclose(fv.values[:CENTER], np.arange(500) / 500, atol=1e-12)
        np.testing.assert_allclose(fv.values[CENTER + 1:], 1 - np.arange(1, 501) / 500, atol=1e-12)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            FeatureVector(np.zeros(1000))

    @given(st.integers(1, 3000), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_contract(self, n, seed):
        h = np.random.default_rng(seed).uniform(-1, 1, n)
        fv = build_feature_vector(CrossCorrelation(h, n // 2))
        assert fv.values.shape == (FV_LEN,)
        assert int(np.argmax(np.abs(fv.values))) == CENTER
        assert fv.center_value == pytest.approx(np.abs(h).max())


class TestSmo:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_libsvm(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 120, 6
        X = np.vstack([rng.normal(0.8, 1.0, (n // 2, d)), rng.normal(-0.8, 1.0, (n // 2, d))])
        y = np.r_[np.ones(n // 2), -np.ones(n // 2)]
        K = X @ X.T
        alpha, b = smo_dual(K, y, C=1.0, tol=1e-4, max_passes=20)
        ref = SVC(kernel="linear", C=1.0, tol=1e-6).fit(X, y)
        ref_alpha = np.zeros(n)
        ref_alpha[ref.support_] = np.abs(ref.dual_coef_[0])
        assert dual_objective(alpha, y, K) == pytest.approx(dual_objective(ref_alpha, y, K), rel=1e-3)
        # box and equality constraints
        assert np.all(alpha >= -1e-12) and np.all(alpha <= 1.0 + 1e-12)
        assert abs(np.dot(alpha, y)) < 1e-8
        w = (alpha * y) @ X
        cos = np.dot(w, ref.coef_[0]) / np.linalg.norm(w) / np.linalg.norm(ref.coef_[0])
        assert cos > 0.999
        Xt = rng.normal(0, 1.5, (500, d))
        agree = np.mean(np.sign(Xt @ w + b) == ref.predict(Xt))
        assert agree >= 0.99

    def test_separable_two_points(self):
        ex = [LabeledExample(unit(CENTER), 1, (0, 0)),
              LabeledExample(FeatureVector(-unit(CENTER).values), 0, (0, 1))]
        model = train_classifier(ex)
        assert training_accuracy(model, ex) == 1.0
        assert model.meta["n_positive"] == 1 and model.meta["n_negative"] == 1

    def test_single_class(self):
        with pytest.raises(DegenerateTrainingSet):
            train_classifier([LabeledExample(unit(0), 1, (0, 0))])
        with pytest.raises(DegenerateTrainingSet):
            train_classifier([])

    def test_platt_fit(self):
        rng = np.random.default_rng(4)
        scores = np.r_[rng.normal(1, 1, 200), rng.normal(-1, 1, 200)]
        labels = np.r_[np.ones(200), np.zeros(200)]
        slope, intercept = platt_calibration(scores, labels)
        assert slope > 0
        # oracle: generic minimizer on the same smoothed-target cross entropy
        t = np.where(labels > 0, 201 / 202, 1 / 202)

        def nll(p):
            z = p[0] * scores + p[1]
            return np.sum(np.logaddexp(0, -z) * t + np.logaddexp(0, z) * (1 - t))

        ref = optimize.minimize(nll, [0.0, 0.0], method="BFGS", options={"gtol": 1e-8}).x
        np.testing.assert_allclose([slope, intercept], ref, atol=1e-4)


class TestTrainingSet:
    def test_counts(self, bank0_examples):
        assert len(bank0_examples) == 1936
        assert sum(e.label for e in bank0_examples) == 44
        assert sum(1 - e.label for e in bank0_examples) == 1892
        five = replicate(bank0_examples, 5)
        assert sum(e.label for e in five) == 220 and len(five) == 220 + 1892

    def test_replication_matches_builder(self):
        bank = synth_phoneme_bank(0)[:3]
        a = build_training_set([p.acc for p in bank], [p.mic for p in bank], 1, bank_size=None)
        b = build_training_set([p.acc for p in bank], [p.mic for p in bank], 5, bank_size=None)
        r = replicate(a, 5)
        assert [e.source for e in b] == [e.source for e in r]
        assert all(np.array_equal(x.fv.values, y.fv.values) for x, y in zip(b, r))

    def test_wrong_bank_size(self):
        bank = synth_phoneme_bank(0)[:2]
        with pytest.raises(ValueError):
            build_training_set([p.acc for p in bank], [p.mic for p in bank], 1)

    def test_bank_model(self, model, bank0_examples):
        assert model.meta["n_positive"] == 220 and model.meta["n_negative"] == 1892
        assert training_accuracy(model, replicate(bank0_examples, 5)) >= 0.95

    @pytest.mark.slow
    def test_bank_model_matches_libsvm(self, model, bank0_examples):
        ex = replicate(bank0_examples, 5)
        X = np.stack([e.fv.values for e in ex])
        y = np.array([1.0 if e.label else -1.0 for e in ex])
        ref = SVC(kernel="linear", C=1.0).fit(X, y)
        ours = X @ model.weights + model.bias > 0
        assert np.mean(ours == (ref.predict(X) > 0)) >= 0.995

    def test_recall_grows_with_replication(self, bank0_examples):
        def recall(k):
            m = train_classifier(replicate(bank0_examples, k))
            pos = [e for e in bank0_examples if e.label]
            return np.mean([classify(m, e.fv).is_match for e in pos])

        assert recall(5) >= recall(1)

    def test_csv_round_trip(self, tmp_path, bank0_examples):
        path = tmp_path / "train.csv"
        write_training_csv(bank0_examples[:50], path)
        back = read_training_csv(path)
        assert [e.source for e in back] == [e.source for e in bank0_examples[:50]]
        assert all(np.array_equal(a.fv.values, b.fv.values) for a, b in zip(back, bank0_examples))


class TestClassify:
    def test_large_margin(self, model):
        fv = FeatureVector(np.sign(model.weights) + 0.0)
        d = classify(model, fv)
        assert d.is_match and d.probability > 0.5

    def test_zero_vector(self, model):
        d = classify(model, FeatureVector.zeros())
        assert d.score == model.bias
        assert d == classify(model, FeatureVector.zeros())

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_probability_range(self, seed, scale):
        w = np.random.default_rng(seed).standard_normal(FV_LEN)
        m = ClassifierModel(w, 0.3, scale, -1.0)
        fv = FeatureVector(np.random.default_rng(seed + 1).uniform(-1, 1, FV_LEN))
        d = classify(m, fv)
        assert np.isfinite(d.score) and 0.0 <= d.probability <= 1.0
        assert d.is_match == (d.score > 0)


class TestThreshold:
    def test_examples(self):
        assert threshold_rule(0.52, 0.4)
        assert not threshold_rule(0.4, 0.4)
        assert not threshold_rule(0.0, 0.4)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            threshold_rule(1.5, 0.4)


class TestModelFile:
    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "m.vamd"
        save_model(model, path)
        assert load_model(path).same_as(model)

    def test_truncated(self, model):
        data = model_to_bytes(model)
        for cut in (3, 20, len(data) // 2, len(data) - 1):
            with pytest.raises(ModelFormatError):
                model_from_bytes(data[:cut])

    def test_bad_magic(self, model):
        with pytest.raises(ModelFormatError, match="magic"):
            model_from_bytes(b"XXXX" + model_to_bytes(model)[4:])

    def test_version_mismatch(self, model):
        data = bytearray(model_to_bytes(model))
        struct.pack_into("<I", data, 4, 2)
        body = bytes(data[:-4])
        data[-4:] = struct.pack("<I", zlib.crc32(body))
        with pytest.raises(ModelFormatError, match="version 2"):
            model_from_bytes(bytes(data))

    def test_checksum(self, model):
        data = bytearray(model_to_bytes(model))
        data[100] ^= 0xFF
        with pytest.raises(ModelFormatError, match="checksum"):
            model_from_bytes(bytes(data))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "nope.vamd")

    def test_magic_constant(self, model):
        assert model_to_bytes(model)[:4] == MAGIC


class TestBounds:
    def test_hoeffding(self):
        assert hoeffding_bound(1, 0.4, 0.25) == pytest.approx(np.exp(-2 * 0.15**2))
        assert hoeffding_bound(16, 0.4, 0.25) < hoeffding_bound(1, 0.4, 0.25)

    def test_segment_bound_dominates(self):
        rng = np.random.default_rng(5)
        segs_f = [rng.standard_normal(50) for _ in range(3)]
        segs_g = [rng.standard_normal(50) for _ in range(3)]
        # lay segments out in slots twice their length
        f = np.concatenate([np.r_[s, np.zeros(50)] for s in segs_f])
        g = np.concatenate([np.r_[s, np.zeros(50)] for s in segs_g])
        peak = np.max(np.abs(xcorr_normalized(SampledSignal(f, 1.0), SampledSignal(g, 1.0)).values))
        res = segment_bound(segs_f, segs_g)
        assert peak <= res["bound"] + 1e-12
        assert set(res["terms"]) == set(range(-2, 3))

    def test_segment_bound_identity(self):
        segs = [np.random.default_rng(6).standard_normal(40) for _ in range(2)]
        assert segment_bound(segs, segs)["terms"][0] == pytest.approx(1.0)
