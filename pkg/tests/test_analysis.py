"""ML baseline and perturbation geometry.

The likelihood classifier is checked against a brute-force oracle that
enumerates every possible transmitted symbol sequence and integrates the
Gaussian likelihood over the full sample stream, with no sufficient-statistic
shortcut. Log-likelihood differences between candidates must agree exactly
(up to float tolerance) and decisions must match.
"""

import itertools

import numpy as np
import pytest

from modrec import analysis, dsp
from modrec.errors import ConfigError, ShapeError, ZeroPerturbation


def brute_force_logl(x: np.ndarray, constel: dsp.Constellation,
                     sps: int, noise_var: float) -> float:
    """Marginal log-likelihood by summing over all symbol sequences."""
    n_sym = x.size // sps
    logps = []
    for seq in itertools.product(range(len(constel)), repeat=n_sym):
        tx = np.repeat(constel.states[list(seq)], sps)
        logps.append(-float(np.abs(x - tx).__pow__(2).sum())
                     / (2.0 * noise_var))
    logps = np.array(logps)
    m = logps.max()
    lse = m + np.log(np.exp(logps - m).sum())
    return lse - n_sym * np.log(len(constel))


class TestPrior:
    def test_for_schemes(self):
        prior = analysis.MlModelPrior.for_schemes(("bpsk", "qpsk"), 20.0)
        sigma = dsp.noise_sigma(1.0, 20.0)
        assert prior.noise_var == pytest.approx(sigma * sigma)
        assert tuple(c.scheme_name for c in prior.constellations) == \
            ("bpsk", "qpsk")
        assert prior.samples_per_symbol == 8

    def test_validation(self):
        c = (dsp.constellation("bpsk"),)
        with pytest.raises(ConfigError):
            analysis.MlModelPrior(c, noise_var=0.0)
        with pytest.raises(ConfigError):
            analysis.MlModelPrior((), noise_var=0.1)


class TestSymbolMeans:
    def test_noise_free_means_recover_states(self):
        constel = dsp.constellation("qpsk")
        sig = dsp.modulate(constel, [0, 3, 1], samples_per_symbol=4)
        est = analysis.symbol_means(sig)
        assert np.allclose(est, constel.states[[0, 3, 1]], atol=1e-12)

    def test_raw_array_needs_sps(self):
        arr = np.zeros((2, 16))
        with pytest.raises(ShapeError):
            analysis.symbol_means(arr)
        assert analysis.symbol_means(arr, samples_per_symbol=4).shape == (4,)

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            analysis.symbol_means(np.zeros((2, 10)), samples_per_symbol=4)


class TestMlClassify:
    def test_matches_brute_force(self):
        # 2 candidates, 2 symbols, short streams: decisions and likelihood
        # gaps must agree with full-sequence enumeration
        sps = 4
        prior = analysis.MlModelPrior.for_schemes(
            ("bpsk", "qpsk"), 10.0, samples_per_symbol=sps)
        rng = np.random.default_rng(7)
        sigma = np.sqrt(prior.noise_var)
        mismatches = 0
        for trial in range(300):
            constel = prior.constellations[trial % 2]
            sym = rng.integers(0, len(constel), size=2)
            clean = np.repeat(constel.states[sym], sps)
            x = clean + rng.normal(0, sigma, clean.size) \
                + 1j * rng.normal(0, sigma, clean.size)
            sig = dsp.IqSignal(x.real, x.imag, samples_per_symbol=sps)
            pred, logl = analysis.ml_classify(sig, prior)
            brute = np.array([brute_force_logl(x, c, sps, prior.noise_var)
                              for c in prior.constellations])
            assert int(np.argmax(brute)) == pred
            gap_fast = logl[1] - logl[0]
            gap_brute = brute[1] - brute[0]
            assert gap_fast == pytest.approx(gap_brute, abs=1e-9)
            mismatches += int(pred != trial % 2)
        assert mismatches <= 30  # 10 dB with 2 symbols is not error-free

    def test_high_snr_near_perfect(self):
        # well separated constellations at 20 dB: the oracle barely errs
        schemes = ("bpsk", "qpsk", "4ask", "ook")
        prior = analysis.MlModelPrior.for_schemes(schemes, 20.0)
        rng = np.random.default_rng(3)
        sigma = np.sqrt(prior.noise_var)
        hits = 0
        n_each = 50
        for label, scheme in enumerate(schemes):
            constel = dsp.constellation(scheme)
            for k in range(n_each):
                sym = rng.integers(0, len(constel), size=8)
                clean = np.repeat(constel.states[sym], 8)
                x = clean + rng.normal(0, sigma, clean.size) \
                    + 1j * rng.normal(0, sigma, clean.size)
                sig = dsp.IqSignal(x.real, x.imag)
                hits += int(analysis.ml_classify(sig, prior)[0] == label)
        assert hits / (len(schemes) * n_each) >= 0.99

    def test_batch_wrapper(self):
        prior = analysis.MlModelPrior.for_schemes(("bpsk", "qpsk"), 20.0)
        sigs = [dsp.modulate(dsp.constellation("qpsk"), [0, 1]),
                dsp.modulate(dsp.constellation("bpsk"), [1, 1])]
        preds = analysis.ml_classify_batch(sigs, prior)
        assert preds.tolist() == [1, 0]


class TestOraclePerturbation:
    def test_unconstrained_shift_lands_on_target(self):
        # big budget: every perturbed symbol mean sits exactly on the
        # nearest target state
        target = dsp.constellation("qpsk")
        sig = dsp.modulate(dsp.constellation("bpsk"), [0, 1, 0])
        pert = analysis.oracle_targeted_perturbation(sig, target, 10.0)
        moved = analysis.symbol_means(
            sig.to_array(np.float64) + pert.delta, sig.samples_per_symbol)
        d = np.abs(moved[:, None] - target.states[None, :]).min(axis=1)
        assert np.all(d < 1e-12)
        assert np.isnan(pert.achieved_loss)

    def test_budget_scaling_preserves_direction(self):
        target = dsp.constellation("qpsk")
        sig = dsp.modulate(dsp.constellation("bpsk"), [0, 1])
        free = analysis.oracle_targeted_perturbation(sig, target, 10.0)
        tight = analysis.oracle_targeted_perturbation(sig, target, 0.1)
        assert np.max(np.abs(tight.delta)) == pytest.approx(0.1, abs=1e-12)
        scale = np.max(np.abs(free.delta)) / 0.1
        assert np.allclose(tight.delta * scale, free.delta, atol=1e-12)

    def test_per_symbol_scaling_clamps_independently(self):
        # 4ask toward bpsk: inner symbols need a longer shift than outer
        # ones, so the per-symbol mode leaves the short shifts untouched
        target = dsp.constellation("bpsk")
        source = dsp.constellation("4ask")
        sig = dsp.modulate(source, [0, 1])  # one outer, one inner state
        eps = 0.4
        glob = analysis.oracle_targeted_perturbation(sig, target, eps)
        per = analysis.oracle_targeted_perturbation(sig, target, eps,
                                                    per_symbol_scale=True)
        sps = sig.samples_per_symbol
        outer_shift = np.abs(target.states - source.states[0]).min()
        assert outer_shift < eps
        per_outer = analysis.symbol_means(per.delta, sps)[0]
        assert np.abs(per_outer) == pytest.approx(outer_shift, abs=1e-12)
        glob_outer = analysis.symbol_means(glob.delta, sps)[0]
        assert np.abs(glob_outer) < outer_shift
        per_inner = analysis.symbol_means(per.delta, sps)[1]
        assert np.max(np.abs([per_inner.real, per_inner.imag])) == \
            pytest.approx(eps, abs=1e-12)

    def test_delta_constant_within_symbols(self):
        target = dsp.constellation("8psk")
        sig = dsp.modulate(dsp.constellation("qpsk"), [2, 0])
        pert = analysis.oracle_targeted_perturbation(sig, target, 1.0)
        sps = sig.samples_per_symbol
        for row in pert.delta:
            blocks = row.reshape(-1, sps)
            assert np.all(blocks == blocks[:, :1])

    def test_epsilon_validation(self):
        sig = dsp.modulate(dsp.constellation("bpsk"), [0])
        with pytest.raises(ConfigError):
            analysis.oracle_targeted_perturbation(
                sig, dsp.constellation("qpsk"), 0.0)


class TestAlignment:
    def test_cosine_values(self):
        a = np.array([1.0, 0.0, 2.0])
        assert analysis.alignment(a, a) == pytest.approx(1.0)
        assert analysis.alignment(a, -a) == pytest.approx(-1.0)
        assert analysis.alignment(np.array([1.0, 0.0]),
                                  np.array([0.0, 3.0])) == pytest.approx(0.0)

    def test_shape_and_zero_errors(self):
        with pytest.raises(ShapeError):
            analysis.alignment(np.ones(3), np.ones(4))
        with pytest.raises(ZeroPerturbation):
            analysis.alignment(np.zeros(3), np.ones(3))


class TestConstellationExport:
    def test_csv_and_svg(self, tmp_path):
        constel = dsp.constellation("qpsk")
        sig = dsp.modulate(constel, [0, 1, 2, 3])
        pert = analysis.oracle_targeted_perturbation(
            sig, dsp.constellation("bpsk"), 0.3)
        csv = tmp_path / "clouds.csv"
        svg = tmp_path / "clouds.svg"
        plot = analysis.constellation_export(
            sig, sig.to_array(np.float64) + pert.delta,
            dsp.constellation("bpsk"), csv_path=csv, svg_path=svg)
        assert plot.original.shape == (4,)
        lines = csv.read_text().strip().split("\n")
        assert lines[0] == "symbol_idx,orig_i,orig_q,pert_i,pert_q"
        assert len(lines) == 5
        body = svg.read_text()
        assert body.startswith("<svg")
        assert body.count("<circle") >= 10

    def test_mismatched_clouds_rejected(self):
        with pytest.raises(ShapeError):
            analysis.ConstellationPlot(np.zeros(3, complex),
                                       np.zeros(4, complex),
                                       np.zeros(2, complex))


@pytest.fixture(scope="module")
def study_inputs():
    from modrec import dataset
    spec = dataset.DatasetSpec(schemes=("bpsk", "qpsk"),
                               signals_per_class=10,
                               samples_per_signal=64, snr_db=20.0, seed=9)
    return dataset.generate(spec)


class TestAlignmentStudy:
    def test_structure(self, study_inputs):
        from modrec import models
        ds = study_inputs
        a = models.build_vt_cnn(2, 64, width_scale=0.1, seed=0)
        b = models.build_vt_cnn(2, 64, width_scale=0.1, seed=1)
        out = analysis.alignment_study(a, b, ds.signals, ds.labels,
                                       ds.class_names, target_class=1,
                                       spr_db=20.0)
        assert out["target_class"] == "qpsk"
        assert out["n_signals"] == 10
        for name in ("standard", "robust"):
            info = out["models"][name]
            assert -1.0 <= info["mean_alignment"] <= 1.0
            assert "bpsk" in info["per_class_alignment"]
            assert info["mean_shift_toward_target"] == pytest.approx(
                info["mean_distance_original"]
                - info["mean_distance_perturbed"])

    def test_all_signals_in_target_class_rejected(self, study_inputs):
        from modrec import models
        ds = study_inputs
        m = models.build_vt_cnn(2, 64, width_scale=0.1, seed=0)
        only_q = [s for s, y in zip(ds.signals, ds.labels) if y == 1]
        with pytest.raises(ConfigError):
            analysis.alignment_study(m, m, only_q, np.ones(len(only_q),
                                                           dtype=np.int64),
                                     ds.class_names, target_class=1)
