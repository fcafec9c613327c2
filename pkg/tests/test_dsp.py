import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from neurocam import dsp
from neurocam.dsp import EpochSet
from neurocam.edf import Recording, Trial

FS = 160.0
SPEC = dsp.design_bandpass(8, 30, FS, 4)


def _sine(f, seconds=10.0, fs=FS, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return np.sin(2 * np.pi * f * t + phase)


def _central_amp(y, fs=FS, keep=8.0):
    pad = int((len(y) / fs - keep) / 2 * fs)
    return np.max(np.abs(y[pad : len(y) - pad]))


def test_design_is_stable_and_passes_centre():
    assert np.all(np.abs(np.roots(SPEC.a)) < 1)
    assert abs(20 * np.log10(abs(SPEC.response(np.sqrt(8 * 30))))) < 1.0
    # independent evaluation of the same transfer function
    _, h = signal.freqz(SPEC.b, SPEC.a, worN=[15.5], fs=FS)
    assert abs(20 * np.log10(abs(h[0]))) < 1.0


@pytest.mark.parametrize("bad", [(30, 8, 160, 4), (0, 30, 160, 4), (8, 80, 160, 4), (8, 30, 160, 0)])
def test_design_rejects_bad_edges(bad):
    with pytest.raises(ValueError):
        dsp.design_bandpass(*bad)


def test_dc_is_blocked():
    y = signal.sosfilt(SPEC.sos, np.ones(int(10 * FS)))
    assert np.max(np.abs(y[-int(FS):])) < 1e-3


def test_passband_and_stopband():
    assert 0.89 <= _central_amp(dsp.filter_zero_phase(SPEC, _sine(15))) <= 1.0 + 1e-6
    assert _central_amp(dsp.filter_zero_phase(SPEC, _sine(50))) <= 0.1
    assert _central_amp(dsp.filter_zero_phase(SPEC, _sine(2))) <= 0.1
    np.testing.assert_array_equal(dsp.filter_zero_phase(SPEC, np.zeros(200)), np.zeros(200))


def test_short_signal_rejected():
    with pytest.raises(ValueError):
        dsp.filter_zero_phase(SPEC, np.ones(12))


def test_filter_rows_independently(rng):
    x = rng.standard_normal((3, 400))
    y = dsp.filter_zero_phase(SPEC, x)
    np.testing.assert_allclose(y[1], dsp.filter_zero_phase(SPEC, x[1]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
def test_filter_linearity(a, b, seed):
    g = np.random.default_rng(seed)
    x, y = g.standard_normal(480), g.standard_normal(480)
    lhs = dsp.filter_zero_phase(SPEC, a * x + b * y)
    rhs = a * dsp.filter_zero_phase(SPEC, x) + b * dsp.filter_zero_phase(SPEC, y)
    scale = max(1.0, np.max(np.abs(rhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_zero_phase_lag(seed):
    g = np.random.default_rng(seed)
    x = dsp.filter_zero_phase(SPEC, g.standard_normal(1600))  # band-limited input
    y = dsp.filter_zero_phase(SPEC, x)
    xc = signal.correlate(y, x, mode="full")
    assert np.argmax(xc) - (len(x) - 1) == 0


def _recording(n_seconds, n_ch=2):
    return Recording(1, 3, FS, [f"c{i}" for i in range(n_ch)], np.arange(n_ch * int(n_seconds * FS), dtype=float).reshape(n_ch, -1))


def test_epoch_windows_counts():
    rec = _recording(10)
    wins = dsp.epoch_windows(Trial(rec, 160, 640, "Left"), rec, 1.0)
    assert len(wins) == 4 and all(w.shape == (2, 160) for w in wins)
    np.testing.assert_array_equal(wins[1][0], np.arange(320, 480))
    assert dsp.epoch_windows(Trial(rec, 0, 80, "Left"), rec, 1.0) == []
    with pytest.raises(ValueError):
        dsp.epoch_windows(Trial(rec, 1500, 200, "Left"), rec, 1.0)


def test_ninety_three_trials_give_372_epochs():
    rec = _recording(93 * 4 + 1, n_ch=1)
    trials = [Trial(rec, int(i * 4 * FS), int(4 * FS), ("Left", "Right")[i % 2], i) for i in range(93)]
    ep = dsp.epochs_from_recording(rec, trials, 1.0)
    assert len(ep) == 372
    assert ep.provenance[5].tolist() == [1, 3, 1, 1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 4.5), min_size=1, max_size=8), st.sampled_from([0.5, 1.0, 1.5]))
def test_epoch_count_identity(durations, window):
    rec = _recording(sum(durations) + 1, n_ch=1)
    trials, onset = [], 0
    for i, d in enumerate(durations):
        n = int(round(d * FS))
        trials.append(Trial(rec, onset, n, "Right", i))
        onset += n
    ep = dsp.epochs_from_recording(rec, trials, window)
    assert len(ep) == sum(int(np.floor(t.length_samples / FS / window + 1e-9)) for t in trials)
    assert ep.n_times == int(round(window * FS))


def _epochs(data, labels=None):
    n = len(data)
    labels = [0] * n if labels is None else labels
    return EpochSet(data, labels, [f"c{i}" for i in range(data.shape[1])], FS, [(1, 1, i, 0) for i in range(n)])


def test_zscore_self_normalized(rng):
    ep = _epochs(rng.normal(3, 5, size=(10, 4, 50)))
    out, stats = dsp.zscore_normalize(ep)
    assert np.all(np.abs(out.data.mean(axis=(0, 2))) < 1e-6)
    assert np.all(np.abs(out.data.std(axis=(0, 2)) - 1) < 1e-6)
    assert not stats.flat.any()


def test_zscore_flat_channel():
    data = np.ones((3, 2, 10))
    data[:, 1] = np.arange(10)
    out, stats = dsp.zscore_normalize(_epochs(data))
    assert stats.flat.tolist() == [True, False]
    np.testing.assert_array_equal(out.data[:, 0], 0)


def test_zscore_with_train_stats(rng):
    train = _epochs(rng.normal(0, 1, size=(20, 3, 40)))
    test = _epochs(rng.normal(2, 3, size=(20, 3, 40)))
    _, stats = dsp.zscore_normalize(train)
    out, same = dsp.zscore_normalize(test, stats)
    assert same is stats
    assert np.all(np.abs(out.data.mean(axis=(0, 2))) > 0.5)
    with pytest.raises(ValueError):
        dsp.zscore_normalize(_epochs(np.zeros((2, 5, 10))), stats)


def test_epochset_validation_and_io(tmp_path, rng):
    ep = _epochs(rng.standard_normal((4, 2, 8)), [0, 1, 1, 0])
    ep.save(tmp_path / "e")
    back = EpochSet.load(tmp_path / "e")
    np.testing.assert_array_equal(back.data, ep.data)
    assert back.label_names == ["Left", "Right", "Right", "Left"]
    assert back.provenance.tolist() == ep.provenance.tolist()
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:8] == b"NCARR1\x00\x00"
    assert np.frombuffer(raw[12 + 24 :], "<f8").tolist() == ep.data.ravel().tolist()
    bad = rng.standard_normal((2, 2, 8))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        _epochs(bad)
    with pytest.raises(ValueError):
        EpochSet(np.zeros((2, 2, 8)), [0], ["a", "b"], FS, [(0, 0, 0, 0)] * 2)


def _ridge(tfr):
    return tfr.freqs[np.argmax(tfr.power.mean(axis=1))]


@pytest.mark.parametrize("f", [10, 12, 20, 28])
def test_morlet_pure_tone_argmax(f):
    assert abs(_ridge(dsp.morlet_tfr(_sine(f, 2.0), FS)) - f) <= 1.0


def test_morlet_argmax_exact_for_12hz():
    tfr = dsp.morlet_tfr(_sine(12, 2.0), FS)
    # brute-force oracle: correlate the sine with each wavelet directly
    power = []
    for fr in tfr.freqs:
        w = dsp.morlet_wavelet(fr, FS, fr / 2)
        power.append(np.mean(np.abs(np.convolve(_sine(12, 2.0), w, mode="same")) ** 2))
    assert tfr.freqs[int(np.argmax(power))] == 12 == _ridge(tfr)


def test_morlet_zero_and_two_tones():
    z = dsp.morlet_tfr(np.zeros(320), FS)
    assert np.all(z.power == 0)
    tfr = dsp.morlet_tfr(_sine(10, 2.0) + _sine(25, 2.0), FS)
    p = tfr.power[:, 80:-80].mean(axis=1)
    peaks = set(tfr.freqs[signal.argrelmax(p)[0]].tolist())
    assert {10.0, 25.0} <= peaks


def test_morlet_constant_power_and_skip(caplog):
    tfr = dsp.morlet_tfr(_sine(20, 2.0), FS, freqs=[20.0])
    central = tfr.power[0, 60:-60]
    assert central.std() / central.mean() < 0.01
    short = dsp.morlet_tfr(np.ones(40), FS, freqs=[8.0, 30.0], n_cycles=4.0)
    assert short.freqs.tolist() == [30.0] and "skipping" in caplog.text
    with pytest.raises(ValueError):
        dsp.morlet_tfr(np.ones(100), FS, freqs=[90.0])
    with pytest.raises(ValueError):
        dsp.morlet_tfr(np.ones(100), FS, freqs=[10.0], n_cycles=[0.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_tfr_nonnegative_and_shift_covariant(seed, shift):
    g = np.random.default_rng(seed)
    x = np.zeros(400)
    x[100:300] = g.standard_normal(200)
    a = dsp.morlet_tfr(x, FS)
    b = dsp.morlet_tfr(np.roll(x, shift), FS)
    assert np.all(a.power >= 0) and a.power.shape == (len(a.freqs), len(a.times))
    lo, hi = 60, 400 - 60 - shift
    np.testing.assert_allclose(b.power[:, lo + shift : hi + shift], a.power[:, lo:hi], atol=1e-9)
