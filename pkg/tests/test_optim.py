import io

import numpy as np
import pytest

from leanresnet.data import LabeledImages, synthetic_quadrants
from leanresnet.network import NetworkConfig, build_network
from leanresnet.optim import METRIC_FIELDS, AdamState, TrainPlan, adam_step, evaluate, fit, lr_at_epoch

TINY = NetworkConfig((4, 8), (1, 1))


def test_schedule_values():
    plan = TrainPlan()
    assert [lr_at_epoch(plan, e) for e in (0, 74, 75, 150, 299)] == [0.1, 0.1, 0.05, 0.025, 0.0125]


def test_schedule_drops_only_on_boundaries():
    plan = TrainPlan(epochs=300)
    lrs = [lr_at_epoch(plan, e) for e in range(300)]
    drops = [e for e in range(1, 300) if lrs[e] != lrs[e - 1]]
    assert drops == [75, 150, 225]


def test_schedule_range():
    with pytest.raises(ValueError):
        lr_at_epoch(TrainPlan(epochs=5), 5)
    with pytest.raises(ValueError):
        TrainPlan(epochs=0)


def test_adam_quadratic_converges():
    target = np.array([1.0, -2.0, 3.0])
    x = np.zeros(3)
    state = AdamState()
    for _ in range(500):
        adam_step([("x", x)], {"x": 2 * (x - target)}, state, 0.05)
    assert np.abs(x - target).max() <= 1e-3


def test_adam_first_step_magnitude():
    x = np.array([0.0, 0.0])
    adam_step([("x", x)], {"x": np.array([3.0, -0.2])}, AdamState(), 0.01)
    assert np.allclose(x, [-0.01, 0.01], rtol=1e-5)


def test_adam_zero_gradient_keeps_params():
    x = np.array([1.0, 2.0])
    adam_step([("x", x)], {"x": np.zeros(2)}, AdamState(), 0.1)
    assert x.tolist() == [1.0, 2.0]


def test_adam_nonfinite_gradient():
    x = np.ones(2)
    state = AdamState()
    with pytest.raises(FloatingPointError, match="w"):
        adam_step([("w", x)], {"w": np.array([1.0, np.nan])}, state, 0.1)
    assert x.tolist() == [1.0, 1.0] and state.step_count == 0


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([("w", np.ones(2))], {"w": np.ones(3)}, AdamState(), 0.1)


def test_zero_lr_leaves_weights(tmp_path):
    train = synthetic_quadrants(40, 8, seed=0)
    net = build_network(TINY, seed=0)
    before = {k: v.copy() for k, v in net.named_parameters()}
    fit(net, train, None, TrainPlan(epochs=2, batch_size=20, lr0=0.0, augment=False))
    for k, v in net.named_parameters():
        assert np.array_equal(v, before[k]), k


def test_evaluate_chance_on_constant_logits():
    data = synthetic_quadrants(100, 8, seed=1)
    net = build_network(TINY, seed=0)
    net.classifier.weight[...] = 0
    loss, acc = evaluate(net, data)
    assert loss == pytest.approx(np.log(10), rel=1e-6)
    # argmax of all-equal logits is class 0, which holds a tenth of the balanced labels
    assert acc == pytest.approx(0.1)


def test_evaluate_deterministic():
    data = synthetic_quadrants(50, 8, seed=2)
    net = build_network(TINY, seed=0)
    assert evaluate(net, data, 7) == evaluate(net, data, 7)


def test_fit_metrics_csv_deterministic(tmp_path):
    def run():
        train = synthetic_quadrants(60, 8, seed=0)
        val = synthetic_quadrants(30, 8, seed=1)
        buf = io.StringIO()
        fit(build_network(TINY, seed=0), train, val, TrainPlan(epochs=2, batch_size=20, lr0=0.01), buf,
            checkpoint_dir=tmp_path, checkpoint_every=1)
        return buf.getvalue()

    a, b = run(), run()
    assert a == b
    lines = a.splitlines()
    assert lines[0] == ",".join(METRIC_FIELDS) and len(lines) == 3
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0001.lrn", "epoch_0002.lrn"]


def test_fit_learns_synthetic():
    train = synthetic_quadrants(400, 8, seed=0)
    val = synthetic_quadrants(200, 8, seed=1)
    net = build_network(NetworkConfig((8, 16), (1, 1)), seed=0)
    rows = fit(net, train, val, TrainPlan(epochs=8, batch_size=50, lr0=0.01, augment=False))
    assert rows[-1]["train_loss"] < rows[0]["train_loss"]
    assert rows[-1]["val_acc"] >= 0.8


def test_empty_dataset():
    empty = LabeledImages(np.zeros((0, 3, 8, 8), np.float32), np.zeros(0, np.int64), 10)
    with pytest.raises(ValueError):
        fit(build_network(TINY), empty, None, TrainPlan(epochs=1))
