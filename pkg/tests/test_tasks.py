import numpy as np
import pytest

from esn_feedback import readout, tasks
from esn_feedback.errors import DataError, UsageError
from esn_feedback.feedback import GdConfig
from esn_feedback.reservoir import Windows, run
from esn_feedback.sampler import SamplerSpec, sample_esn
from conftest import write_synthetic_ced


def test_constant_history_first_euler_step_is_fixed_point():
    # 0.2 * 1 / (1 + 1) - 0.1 * 1 = 0
    y = tasks.mackey_glass_series(5, history=1.0, y0=1.0)
    assert y[1] == 1.0 and np.all(y == 1.0)


def test_mackey_glass_bounded_and_chaotic():
    y = tasks.mackey_glass_series(10_000)
    assert np.all((y > 0) & (y < 2))
    assert np.std(y[1000:]) > 0.1


def test_mackey_glass_alignment_and_prefix_stability():
    short = tasks.mackey_glass(Windows(10, 50, 10))
    long = tasks.mackey_glass(Windows(100, 500, 100))
    np.testing.assert_array_equal(short.targets, long.targets[:70])
    series = tasks.mackey_glass_series(1100)
    np.testing.assert_array_equal(short.targets, series[1000:1070])
    np.testing.assert_array_equal(short.inputs, series[990:1060])
    with pytest.raises(UsageError):
        tasks.mackey_glass(Windows(1, 2), horizon=10, burn_in=5)


def test_channel_zero_symbols_zero_signal():
    w = Windows(0, 20)
    ds = tasks.channel_equalization(w, 0, noise=False, symbols=np.zeros(29))
    assert np.all(ds.inputs == 0)


def test_channel_impulse_reads_taps():
    w = Windows(0, 30)
    d = np.zeros(39)
    d[7 + 10] = 1.0  # d_10 = 1
    ds = tasks.channel_equalization(w, 0, noise=False, nonlinear=False, symbols=d)
    q = ds.aux["q"]
    # q_k = 0.08 d_{k+2} - 0.12 d_{k+1} + d_k + 0.18 d_{k-1} ... + 0.01 d_{k-7}
    assert q[8] == pytest.approx(0.08) and q[9] == pytest.approx(-0.12)
    assert q[10] == pytest.approx(1.0) and q[17] == pytest.approx(0.01)
    np.testing.assert_allclose(q[8:18], tasks.CHANNEL_TAPS)
    assert np.count_nonzero(q) == 10


def test_channel_symbols_and_snr():
    ds = tasks.channel_equalization(Windows(0, 100_000), np.random.default_rng(3))
    assert set(np.unique(ds.targets)) <= {-3.0, -1.0, 1.0, 3.0}
    noise = ds.inputs - ds.aux["clean"]
    snr = 10 * np.log10(np.mean(ds.inputs ** 2) / np.mean(noise ** 2))
    assert snr == pytest.approx(32.0, abs=0.5)


def test_channel_alignment_canary():
    ds = tasks.channel_equalization(Windows(0, 5000), 1, noise=False, nonlinear=False)
    coef, *_ = np.linalg.lstsq(np.column_stack([ds.targets, np.ones(5000)]), ds.inputs, rcond=None)
    assert coef[0] == pytest.approx(1.0, abs=0.02)


def test_channel_seeded_determinism():
    w = Windows(5, 50, 5)
    a = tasks.channel_equalization(w, 9)
    b = tasks.channel_equalization(w, 9)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)


def test_symbol_rounding_and_errors():
    d = np.array([-3.0, -1.0, 1.0, 3.0])
    assert tasks.symbol_errors(d, d) == 0
    assert tasks.symbol_errors([-1.0], [-3.0]) == 1
    assert tasks.symbol_errors([-1.0], [3.0]) == 2
    np.testing.assert_array_equal(tasks.round_symbols([1.99, 2.01, 2.0, -2.0, 0.0, -0.01]), [1, 3, 1, -1, 1, -1])
    with pytest.raises(UsageError):
        tasks.symbol_errors([1.0], [1.0, 2.0])


def test_load_ced_windows_and_trailing_row(ced_file):
    ds = tasks.load_ced(ced_file)
    assert ds.windows == Windows(19, 280, 200)
    assert ds.inputs.size == 500 and ds.window_tags()[-1] == "unused"
    assert set(np.abs(ds.inputs)) == {1.5}


def test_load_ced_headerless_and_whitespace(tmp_path):
    data = write_synthetic_ced(tmp_path / "a.csv", header=False)
    (tmp_path / "b.txt").write_text("\n".join(" ".join(repr(float(x)) for x in r) for r in data))
    a, b = tasks.load_ced(tmp_path / "a.csv"), tasks.load_ced(tmp_path / "b.txt")
    np.testing.assert_array_equal(a.targets, data[:, 4])
    np.testing.assert_array_equal(a.targets, b.targets)
    np.testing.assert_array_equal(tasks.load_ced(tmp_path / "a.csv", 1, 4).inputs, a.inputs)


def test_load_ced_errors(tmp_path, ced_file):
    with pytest.raises(DataError, match="z9"):
        tasks.load_ced(ced_file, output_column="z9")
    with pytest.raises(DataError):
        tasks.load_ced(tmp_path / "missing.csv")
    short = tmp_path / "short.csv"
    write_synthetic_ced(short, rows=300)
    with pytest.raises(DataError, match="500"):
        tasks.load_ced(short)
    with pytest.warns(UserWarning):
        ds = tasks.load_ced(short, allow_resize=True)
    assert ds.windows.total <= 300
    bad = tmp_path / "bad.csv"
    bad.write_text("u1,u2,u3,z1,z2,z3\n1,2,3,4,5,6\n1,2,x,4,5,6\n")
    with pytest.raises(DataError, match="3"):
        tasks.load_ced(bad)


def test_export_roundtrip_bit_exact(tmp_path, ced_file):
    ds = tasks.load_ced(ced_file)
    out = tmp_path / "ds.csv"
    tasks.export_csv(ds, out)
    back = tasks.read_task_csv(out)
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.targets, ds.targets)
    assert back.windows == ds.windows
    ce = tasks.channel_equalization(Windows(3, 10, 4), 0)
    assert tasks.export_csv(ce) == tasks.export_csv(tasks.channel_equalization(Windows(3, 10, 4), 0))


def test_task_aliases():
    assert tasks.task_kind("mg") == "mackey_glass" and tasks.task_kind("ce") == "channel_eq"
    with pytest.raises(UsageError):
        tasks.task_kind("lorenz")


def _toy_ced(y_equals_u=False):
    rng = np.random.default_rng(0)
    u = np.repeat(rng.choice([-1.5, 1.5], 50), 10)
    y = u.copy() if y_equals_u else np.convolve(u, [0.0, 0.5, 0.3, 0.1])[:500]
    return tasks.TaskDataset(u, y, tasks.CED_WINDOWS, "ced")


def test_ced_input_limits():
    ds = tasks.TaskDataset([1.5, 0.0], [0.5, 0.0], Windows(0, 2), "ced")
    assert tasks.ced_input(ds, 0.5, None, None, 0) == pytest.approx(1.0)
    assert tasks.ced_input(ds, 1.0, None, None, 0) == 1.5
    assert tasks.ced_input(ds, 0.0, None, None, 0) == 0.5
    assert tasks.ced_input(ds, 0.0, [1.0, 2.0], np.array([0.1, 0.1]), 0) == pytest.approx(0.8)


def test_mixing_gradient_zero_when_output_equals_input():
    ds = _toy_ced(y_equals_u=True)
    p = sample_esn(SamplerSpec(n=2), 0)
    assert tasks.mixing_gradient(p, ds, 0.3) == 0.0


def test_mixing_gradient_matches_finite_difference():
    ds = _toy_ced()
    p = sample_esn(SamplerSpec(n=2), 1)
    w = ds.windows

    def cost(s, sol):
        x = run(p, None, tasks.ced_drive(ds, s), w).train_states
        return 0.5 * np.mean((x @ sol.W + sol.C - ds.train_targets) ** 2)

    s = 0.1
    sol = readout.fit(run(p, None, tasks.ced_drive(ds, s), w).train_states, ds.train_targets)
    h = 1e-6
    fd = (cost(s + h, sol) - cost(s - h, sol)) / (2 * h)
    assert tasks.mixing_gradient(p, ds, s) == pytest.approx(fd, rel=1e-3)


def test_teacher_forcing_has_no_leakage():
    ds = _toy_ced()
    p = sample_esn(SamplerSpec(n=2), 2)
    fit = tasks.optimize_ced(p, ds, GdConfig(eta=27.0, steps=3))
    base = tasks.ced_predictions(p, ds, fit)
    k = 300
    bumped = tasks.TaskDataset(ds.inputs, ds.targets.copy(), ds.windows, "ced")
    bumped.targets[k] += 5.0
    pred = tasks.ced_predictions(p, bumped, fit)
    np.testing.assert_array_equal(pred[: k + 1], base[: k + 1])
    assert pred[k + 1] != base[k + 1]


def test_mixing_descent_starts_at_zero_and_improves(ced_file):
    ds = tasks.load_ced(ced_file)
    p = sample_esn(SamplerSpec(n=2), 3)
    mix = tasks.optimize_mixing(p, ds, lr=0.0012, steps=30)
    assert mix.history[0][0] == 0.0
    assert min(c for _, c in mix.history) <= mix.history[0][1]
    assert abs(mix.s) < 0.5


def test_ced_feedback_fit_not_worse_than_start(ced_file):
    ds = tasks.load_ced(ced_file)
    p = sample_esn(SamplerSpec(n=2), 4)
    off = tasks.optimize_ced(p, ds, GdConfig(eta=27.0, steps=20), feedback=False)
    on = tasks.optimize_ced(p, ds, GdConfig(eta=27.0, steps=20), feedback=True)
    assert on.solution.s_min <= on.history.records[0].s_min
    assert np.all(on.history.sigma_max < 4)
    assert off.v.tolist() == [0.0, 0.0]
