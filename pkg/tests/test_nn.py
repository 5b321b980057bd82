import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import finite_difference_grads
from ratein import nn
from ratein.data import regression_splits


def random_small_net(seed: int, out_dim: int = 1):
    rng = np.random.default_rng(seed)
    in_dim = int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=int(rng.integers(1, 3))))
    net = nn.init_network(nn.regression_arch(in_dim, hidden, out_dim), seed)
    x = rng.standard_normal((7, in_dim))
    return net, x, rng


def max_grad_rel_error(seed: int, loss: str) -> float:
    out_dim = 3 if loss == "xent" else 1
    net, x, rng = random_small_net(seed, out_dim)
    y = rng.integers(0, 3, size=7) if loss == "xent" else rng.standard_normal(7)
    _, grads = nn.loss_and_grads(net, x, y, loss)
    params = [np.array(a) for pair in net.weights for a in pair]

    def loss_fn():
        return nn.loss_and_grads(net.with_weights(zip(params[0::2], params[1::2])), x, y, loss)[0]

    fd = finite_difference_grads(loss_fn, params)
    analytic = [g for pair in grads for g in pair]
    worst = 0.0
    for g, f in zip(analytic, fd):
        scale = max(np.linalg.norm(g), np.linalg.norm(f), 1e-8)
        worst = max(worst, float(np.linalg.norm(g - f) / scale))
    return worst


def test_regression_arch_layout():
    arch = nn.regression_arch()
    assert [l.kind for l in arch] == ["dense", "relu", "dropout", "dense", "relu", "dropout", "dense"]
    assert [l.site_id for l in arch if l.kind == "dropout"] == ["h1", "h2"]


def test_validate_arch_rejects_mismatched_dims():
    arch = nn.regression_arch()
    bad = list(arch)
    bad[3] = nn.LayerSpec("dense", 7, 50)
    with pytest.raises(ValueError):
        nn.validate_arch(bad)


def test_forward_is_deterministic_for_fixed_seed():
    net = nn.init_network(nn.regression_arch(), 3)
    x = np.linspace(-3, 3, 20)
    a, _ = nn.forward(net, x, {"h1": 0.3, "h2": 0.2}, mask_seed=5)
    b, _ = nn.forward(net, x, {"h1": 0.3, "h2": 0.2}, mask_seed=5)
    c, _ = nn.forward(net, x, {"h1": 0.3, "h2": 0.2}, mask_seed=6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_zero_rate_is_identity():
    net = nn.init_network(nn.regression_arch(), 3)
    x = np.linspace(-3, 3, 20)
    out, traces = nn.forward(net, x, {"h1": 0.0, "h2": 0.0}, mask_seed=99)
    assert np.array_equal(out, nn.predict(net, x))
    for tr in traces:
        assert np.array_equal(tr.pre, tr.post)


def test_rate_one_and_unknown_sites_rejected():
    net = nn.init_network(nn.regression_arch(), 3)
    with pytest.raises(ValueError):
        nn.forward(net, [0.0], {"h1": 1.0, "h2": 0.0})
    with pytest.raises(ValueError):
        nn.forward(net, [0.0], {"h1": 0.1, "h2": 0.1, "h9": 0.1})
    with pytest.raises(ValueError):
        nn.forward(net, [0.0], {"h1": 0.1})


def test_inverted_dropout_preserves_mean():
    pre = np.ones(100_000)
    post, mask = nn.apply_dropout(pre, 0.2, mask_seed=1, site_index=0)
    assert abs(post.mean() - 1.0) < 0.02
    assert abs(1 - mask.mean() - 0.2) < 0.01


@given(st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.integers(0, 1000))
def test_dropped_set_grows_with_rate(p, q, seed):
    lo, hi = sorted((p, q))
    pre = np.ones(64)
    _, m_lo = nn.apply_dropout(pre, lo, seed, 0)
    _, m_hi = nn.apply_dropout(pre, hi, seed, 0)
    assert np.all(~m_hi[~m_lo])


def test_single_instance_gives_1d_traces():
    net = nn.init_network(nn.regression_arch(), 0)
    out, traces = nn.forward(net, 0.5, {"h1": 0.1, "h2": 0.1}, 1)
    assert out.shape == (1,)
    assert traces[0].pre.shape == (50,)


def test_stop_at_returns_partial_traces():
    net = nn.init_network(nn.regression_arch(), 0)
    out, traces = nn.forward(net, np.zeros(4), stop_at="h1")
    assert out is None
    assert [t.site_id for t in traces] == ["h1"]


def test_shape_error():
    net = nn.init_network(nn.regression_arch(2, (4,), 1), 0)
    with pytest.raises(nn.ShapeError):
        nn.forward(net, np.zeros((3, 5)))


@pytest.mark.parametrize("loss", ["mse", "xent"])
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed, loss):
    assert max_grad_rel_error(seed, loss) < 1e-4


def test_reference_recipe_reaches_low_training_loss():
    train, _ = regression_splits(100, 100, 0.1, 123)
    _, history = nn.fit(train.x[:, None], train.y, nn.regression_arch(), epochs=1000, lr=0.01, seed=123)
    assert history[-1] < 0.05
    assert history[-1] < history[0]


def test_training_is_deterministic():
    train, _ = regression_splits(50, 10, 0.1, 1)
    a = nn.train_regression(train.x[:, None], train.y, nn.regression_arch(), epochs=50)
    b = nn.train_regression(train.x[:, None], train.y, nn.regression_arch(), epochs=50)
    for (wa, ba), (wb, bb) in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb) and np.array_equal(ba, bb)


def test_zero_epochs_returns_initialisation():
    arch = nn.regression_arch()
    net, history = nn.fit(np.zeros((4, 1)), np.zeros(4), arch, epochs=0, seed=9)
    init = nn.init_network(arch, 9)
    assert history.size == 0
    assert all(np.array_equal(w, v) for (w, _), (v, _) in zip(net.weights, init.weights))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    x = np.linspace(-1, 1, 10)[:, None]
    with pytest.raises(nn.TrainingDivergenceError):
        nn.fit(x, np.full(10, 1e200), nn.regression_arch(1, (4,), 1), epochs=5)


def test_classifier_rejects_bad_labels():
    arch = nn.regression_arch(2, (4,), 2)
    with pytest.raises(ValueError):
        nn.train_classifier(np.zeros((3, 2)), [0, 1, 2], arch, epochs=1)


def test_classifier_learns_separable_blobs():
    from ratein.data import gen_blobs

    ds = gen_blobs(200, 2, 6.0, seed=4)
    net = nn.train_classifier(ds.x, ds.labels, nn.regression_arch(2, (16,), 2), epochs=200)
    pred = nn.predict(net, ds.x).argmax(axis=1)
    assert np.mean(pred == ds.labels) > 0.95


def test_save_load_round_trip_is_bit_exact(tmp_path):
    net = nn.init_network(nn.regression_arch(), 11)
    path = tmp_path / "m.json"
    nn.save_network(net, path, {"seed": 11})
    back = nn.load_network(path)
    assert back.layers == net.layers
    for (wa, ba), (wb, bb) in zip(net.weights, back.weights):
        assert wa.tobytes() == wb.tobytes() and ba.tobytes() == bb.tobytes()
    assert json.loads(path.read_text())["provenance"] == {"seed": 11}


def test_load_rejects_foreign_format(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        nn.load_network(path)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_weights_are_read_only(seed):
    net = nn.init_network(nn.regression_arch(1, (3,), 1), seed)
    with pytest.raises(ValueError):
        net.weights[0][0][0, 0] = 1.0
