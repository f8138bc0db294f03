import numpy as np
import pytest

from gradcheck import check_all
from posenas import data_model as dm
from posenas import lifter
from posenas.errors import TestLeakError
from posenas.optim import OptimizerState, adam_step, lr_schedule

SELU_A, SELU_L = 1.6732632423543772, 1.0507009873554805


def tiny_params(seed=0, width=8, blocks=2, dropout=0.25, din=6, dout=9):
    return lifter.init_lifter(lifter.LifterArchitecture(din, dout, width, blocks, dropout), seed)


def oracle_stream(params, stream, x):
    """Hand-rolled matrix arithmetic: batch-stat BN, no dropout."""
    w = params.weights

    def bn(h, pre):
        mu, var = h.mean(0), h.var(0)
        return (h - mu) / np.sqrt(var + 1e-5) * w[pre + ".gamma"] + w[pre + ".beta"]

    def selu(h):
        return SELU_L * np.where(h > 0, h, SELU_A * (np.exp(h) - 1))

    h = x @ w[f"{stream}.in.W"] + w[f"{stream}.in.b"]
    for b in range(params.arch.num_blocks):
        skip = h
        for i in (1, 2):
            h = h @ w[f"{stream}.b{b}.l{i}.W"] + w[f"{stream}.b{b}.l{i}.b"]
            h = selu(bn(h, f"{stream}.b{b}.bn{i}"))
        h = h + skip
    return h @ w[f"{stream}.out.W"] + w[f"{stream}.out.b"]


def test_init_is_seeded_he_normal():
    a = lifter.init_lifter(lifter.LifterArchitecture(34, 51, 1024, 2), 3)
    b = lifter.init_lifter(lifter.LifterArchitecture(34, 51, 1024, 2), 3)
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])
    w = a.weights["gt.b0.l1.W"]
    assert w.size >= 10**5
    assert abs(w.std() / np.sqrt(2 / 1024) - 1) < 0.1
    assert all(np.all(v == 0) for k, v in a.weights.items() if k.endswith(".b"))


def test_train_mode_matches_oracle(rng):
    p = tiny_params(dropout=0.0)
    for k in p.weights:
        if k.endswith((".b", ".gamma", ".beta")):
            p.weights[k] = rng.normal(size=p.weights[k].shape)
    x = rng.normal(size=(7, 6))
    for stream in lifter.STREAMS:
        np.testing.assert_allclose(lifter.stream_forward(p, stream, x, "train"), oracle_stream(p, stream, x),
                                   atol=1e-10)


def test_eval_determinism_and_zero_output_layer(rng):
    p = tiny_params()
    x = rng.normal(size=(5, 6))
    np.testing.assert_array_equal(lifter.stream_forward(p, "gt", x), lifter.stream_forward(p, "gt", x))
    p.weights["gt.out.W"][:] = 0
    assert np.all(lifter.stream_forward(p, "gt", x) == 0)


def test_two_stream_average(rng):
    p = tiny_params(seed=1)
    xa, xb = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    a = lifter.stream_forward(p, "gt", xa)
    b = lifter.stream_forward(p, "det", xb)
    np.testing.assert_allclose(lifter.two_stream_forward(p, xa, xb), (a + b) / 2, atol=1e-12)
    for k in list(p.weights):
        if k.startswith("det."):
            p.weights[k] = p.weights["gt." + k[4:]].copy()
    np.testing.assert_allclose(lifter.two_stream_forward(p, xa, xa), lifter.stream_forward(p, "gt", xa),
                               atol=1e-12)


def test_huber_closed_form():
    assert lifter.huber_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert lifter.huber_loss([0.5], [0.0], 1.0) == pytest.approx(0.125, abs=1e-12)
    assert lifter.huber_loss([2.0], [0.0], 1.0) == pytest.approx(1.5, abs=1e-12)


def test_huber_is_c1_at_delta():
    d, h = 1.0, 1e-7
    below = lifter.huber_loss([d - h], [0.0], d)
    above = lifter.huber_loss([d + h], [0.0], d)
    assert abs(above - below) < 1e-6
    slope_below = (lifter.huber_loss([d], [0.0], d) - below) / h
    slope_above = (above - lifter.huber_loss([d], [0.0], d)) / h
    assert slope_below == pytest.approx(slope_above, abs=1e-6)


@pytest.mark.parametrize("objective", ["joint", "separate"])
def test_gradients_match_finite_differences(objective, rng):
    p = tiny_params(seed=2)
    xg, xd, y = rng.normal(size=(4, 6)), rng.normal(size=(4, 6)), rng.normal(size=(4, 9))
    _, grads = lifter.lifter_gradients(p, xg, xd, y, 1.0, 5, "train", objective)
    worst = check_all(p.weights, grads, lambda: lifter.lifter_loss(p, xg, xd, y, 1.0, 5, "train", objective))
    assert max(worst.values()) <= 1e-5, worst


def test_gradient_minimum_and_linearity(rng):
    p = tiny_params(seed=2, dropout=0.0)
    xg, xd = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    target = lifter.two_stream_forward(p, xg, xd, "train")
    _, g = lifter.lifter_gradients(p, xg, xd, target, 1.0, 0, "train")
    assert np.abs(g["gt.out.b"]).max() < 1e-12
    # identical streams on identical inputs: the separate objective is twice the
    # joint one, so every gradient doubles
    for k in list(p.weights):
        if k.startswith("det."):
            p.weights[k] = p.weights["gt." + k[4:]].copy()
    y = rng.normal(size=(4, 9))
    lj, gj = lifter.lifter_gradients(p, xg, xg, y, 1.0, 0, "train", "joint")
    ls, gs = lifter.lifter_gradients(p, xg, xg, y, 1.0, 0, "train", "separate")
    assert ls == pytest.approx(2 * lj, rel=1e-12)
    for k in gj:
        np.testing.assert_allclose(gs[k], 2 * gj[k], rtol=1e-9, atol=1e-14)


def test_adam_first_step_is_sign_step():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -5.0, 2e-3])}
    new, opt = adam_step(params, grads, OptimizerState(), 0.01)
    np.testing.assert_allclose(params["w"] - new["w"], 0.01 * np.sign(grads["w"]), rtol=1e-4)
    same, _ = adam_step(params, {"w": np.zeros(3)}, OptimizerState(), 0.01)
    np.testing.assert_array_equal(same["w"], params["w"])
    again, _ = adam_step(params, grads, OptimizerState(), 0.01)
    np.testing.assert_array_equal(again["w"], new["w"])


def test_lr_schedule_steps():
    assert lr_schedule(0) == 0.001
    assert lr_schedule(49) == 0.001
    assert lr_schedule(50) == 0.0005
    assert lr_schedule(100) == 0.00025
    vals = [lr_schedule(e) for e in range(300)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_mpjpe_cases():
    gt = np.zeros((2, 17, 3))
    assert lifter.mpjpe(gt, gt) == 0.0
    assert lifter.mpjpe(gt + (3.0, 4.0, 0.0), gt) == pytest.approx(5.0, abs=1e-12)
    one = gt.copy()
    one[:, 4] = (3.0, 4.0, 0.0)
    assert lifter.mpjpe(one, gt) == pytest.approx(5 / 17, abs=1e-12)
    poses = [dm.Pose3D(f) for f in one]
    assert lifter.mpjpe(poses, [dm.Pose3D(f) for f in gt]) == pytest.approx(5 / 17)
    with pytest.raises(ValueError):
        lifter.mpjpe(gt[:1], gt)


def test_mpjpe_translation_invariance_after_centering(rng):
    a, b = rng.normal(size=(3, 17, 3)), rng.normal(size=(3, 17, 3))
    shift = np.array([100.0, -5.0, 7.0])
    base = lifter.mpjpe(dm.root_center_array(a), dm.root_center_array(b))
    moved = lifter.mpjpe(dm.root_center_array(a + shift), dm.root_center_array(b + shift))
    assert moved == pytest.approx(base, rel=1e-12)


def _lifting_data(n_per_class=2):
    cfg = dm.SynthConfig(num_classes=2, samples_per_class=n_per_class, frames=10)
    return dm.make_lifting_set(dm.generate_synthetic_actions(cfg, 0), dm.CameraModel())


def test_training_is_deterministic_and_moves_params():
    data = _lifting_data()
    cfg = lifter.LifterConfig(hidden_width=16, epochs=1, batch_size=64, seed=4)
    a, hist = lifter.train_lifter(data, cfg)
    b, _ = lifter.train_lifter(data, cfg)
    init = lifter.init_lifter(a.arch, 4)
    assert sum(np.linalg.norm(a.weights[k] - init.weights[k]) for k in a.weights) > 0
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])
    assert len(hist) == 1 and np.isfinite(hist[0])


def test_training_rejects_test_split():
    data = _lifting_data()
    with pytest.raises(TestLeakError):
        lifter.train_lifter(data, lifter.LifterConfig(epochs=1), split_tags=["train", "test"])


def test_predict_composition_and_equivariance(rng):
    data = _lifting_data()
    params, _ = lifter.train_lifter(data, lifter.LifterConfig(hidden_width=16, epochs=2, batch_size=32))
    x = data.x_gt[:12]
    pred = lifter.predict_array(params, x)
    z = lifter.two_stream_forward(params, dm.standardize(x, params.stats["in_gt"]),
                                  dm.standardize(x, params.stats["in_det"]))
    np.testing.assert_allclose(pred.reshape(12, -1), dm.destandardize(z, params.stats["out"]), atol=1e-9)
    perm = rng.permutation(12)
    np.testing.assert_allclose(lifter.predict_array(params, x[perm]), pred[perm], atol=1e-12)
    seq = dm.PoseSequence(x.reshape(12, 17, 2))
    out = lifter.predict_3d(params, seq)
    assert out.is_3d and np.all(out.data[:, 0] == 0)


def test_checkpoint_round_trip(tmp_path):
    data = _lifting_data()
    cfg = lifter.LifterConfig(hidden_width=16, epochs=1, batch_size=64)
    params, _ = lifter.train_lifter(data, cfg)
    path = tmp_path / "l.npz"
    lifter.save_checkpoint(path, params, cfg)
    loaded, meta = lifter.load_checkpoint(path)
    assert meta["hidden_width"] == 16
    np.testing.assert_array_equal(lifter.predict_array(loaded, data.x_det[:5]),
                                  lifter.predict_array(params, data.x_det[:5]))
