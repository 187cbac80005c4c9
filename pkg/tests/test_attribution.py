import numpy as np
import pytest
from sklearn.linear_model import Ridge

from lungxai.attribution import (GradCAM, Heatmap, LimeExplainer, cam_from_activations, grad_cam, grad_cam_batch,
                                 grid_segments, integrated_gradients, lime_explain, read_heatmap,
                                 upsample_nearest, write_heatmap)
from lungxai.classification import build_cnn
from lungxai.nn import Dense, Flatten, Network


def test_cam_identity_case():
    A = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert np.array_equal(cam_from_activations(A, np.ones_like(A)), A[0])
    assert np.array_equal(cam_from_activations(A, -np.ones_like(A)), np.zeros((2, 2)))
    up = upsample_nearest(A[0], 4)
    assert np.array_equal(up, np.kron(A[0], np.ones((2, 2))))


def test_upsample_nearest_uneven():
    m = np.arange(9.0).reshape(3, 3)
    up = upsample_nearest(m, 6)
    assert up.shape == (6, 6) and np.array_equal(up[::2, ::2], m)


@pytest.fixture(scope="module")
def cnn():
    net = build_cnn(32, filters=4, hidden_units=8, seed=2, dtype=np.float64)
    # nonzero biases break positive homogeneity, otherwise IG would be exact at any step count
    rng = np.random.default_rng(5)
    for layer in net.layers:
        if "b" in layer.params:
            layer.params["b"][:] = rng.normal(0, 0.1, layer.params["b"].shape)
    return net


def _images(n=3, side=32, seed=0):
    return np.random.default_rng(seed).random((n, 1, side, side))


def test_grad_cam_matches_manual_computation(cnn):
    X = _images()
    maps = grad_cam_batch(cnn, X)
    assert maps.shape == (3, 32, 32) and (maps >= 0).all()
    trace = cnn.forward(X, stop=len(cnn.layers) - 2)
    seed = np.zeros_like(trace.output)
    seed[:, 1] = 1
    grads = cnn.backward(trace, seed, param_grads=False)
    relu = max(i for i, layer in enumerate(cnn.layers) if layer.kind == "conv") + 1
    A, dA = trace.activations[relu + 1], grads.activations[relu + 1]
    manual = np.maximum(np.einsum("nk,nkhw->nhw", dA.mean(axis=(2, 3)), A), 0)
    assert np.allclose(maps, upsample_nearest(manual, 32))


def test_grad_cam_invariant_to_logit_shift(cnn):
    X = _images(2)
    before = grad_cam_batch(cnn, X)
    shifted = cnn.astype(np.float64)
    last_dense = max(i for i, layer in enumerate(shifted.layers) if layer.kind == "dense")
    shifted.layers[last_dense].params["b"] += 5.0
    assert np.allclose(grad_cam_batch(shifted, X), before)


def test_grad_cam_rejects_network_without_conv():
    net = Network([Flatten(), Dense(16, 2)], (1, 4, 4))
    with pytest.raises(ValueError, match="convolution"):
        grad_cam(net, np.zeros((1, 4, 4)))


def test_grad_cam_transformer(cnn):
    X = _images(2)
    assert np.array_equal(GradCAM(cnn).fit().transform(X), grad_cam_batch(cnn, X))
    assert GradCAM(cnn).explain(X[0]).method == "gradcam"


def _linear_net():
    net = Network([Dense(2, 1)], (2,), dtype=np.float64)
    net.layers[0].params["W"][:] = [[2.0], [3.0]]
    net.layers[0].params["b"][:] = 0.0
    return net


def test_ig_exact_on_linear_model():
    res = integrated_gradients(_linear_net(), np.array([1.0, 1.0]), target_class=0, steps=8)
    assert np.allclose(res.attributions, [2.0, 3.0])
    assert res.delta == pytest.approx(5.0)
    assert res.residual < 1e-12
    assert res.heatmap is None


def test_ig_zero_when_input_equals_baseline(cnn):
    x = _images(1)[0]
    res = integrated_gradients(cnn, x, steps=16, baseline=x)
    assert np.all(res.attributions == 0) and res.delta == 0


def test_ig_rejects_too_few_steps(cnn):
    with pytest.raises(ValueError):
        integrated_gradients(cnn, _images(1)[0], steps=4)


def test_ig_residual_shrinks_with_steps(cnn):
    for x in _images(4, seed=9):
        coarse = integrated_gradients(cnn, x, steps=16).residual
        fine = integrated_gradients(cnn, x, steps=256).residual
        assert fine <= coarse


def test_ig_heatmap_is_abs_attribution(cnn):
    res = integrated_gradients(cnn, _images(1)[0], steps=16)
    assert np.allclose(res.heatmap.values, np.abs(res.attributions).sum(axis=0))


def test_grid_segments():
    seg = grid_segments(16, 4)
    assert seg.shape == (16, 16) and seg[0, 0] == 0 and seg[15, 15] == 15 and seg[0, 4] == 1
    assert np.bincount(seg.ravel()).tolist() == [16] * 16
    with pytest.raises(ValueError):
        grid_segments(15, 4)


def _superpixel3_model(grid=4, side=16):
    seg = grid_segments(side, grid)

    def score(X):
        on = X[:, 0][:, seg == 3].mean(axis=1) > 0
        return np.stack([1.0 - on, on.astype(float)], axis=1)

    return score


def test_lime_oracle_matches_direct_weighted_least_squares():
    grid, n, sigma, lam = 4, 400, 0.25, 1e-3
    image = np.ones((1, 16, 16))
    expl = lime_explain(_superpixel3_model(), image, 1, grid=grid, n_perturbations=n, top_k=1,
                        kernel_width=sigma, ridge=lam, seed=11)
    assert expl.selected == [3]
    assert np.array_equal(expl.mask, (grid_segments(16, grid) == 3).astype(np.uint8))
    assert np.argmax(expl.weights) == 3

    # rebuild the same perturbations and solve the augmented normal equations directly
    Z = (np.random.default_rng(11).random((n, grid * grid)) < 0.5).astype(float)
    y = Z[:, 3]
    w = np.exp(-(((grid * grid - Z.sum(1)) / (grid * grid)) ** 2) / sigma**2)
    A = np.hstack([np.ones((n, 1)), Z])
    penalty = lam * np.diag([0.0] + [1.0] * grid * grid)
    coef = np.linalg.solve(A.T @ (w[:, None] * A) + penalty, A.T @ (w * y))
    assert np.allclose(expl.weights, coef[1:], atol=1e-10)
    assert expl.intercept == pytest.approx(coef[0], abs=1e-10)

    ref = Ridge(alpha=lam).fit(Z, y, sample_weight=w)
    assert np.allclose(expl.weights, ref.coef_, atol=1e-8)


def test_lime_constant_model_gives_empty_mask():
    def const(X):
        return np.tile([0.3, 0.7], (len(X), 1))

    expl = lime_explain(const, np.ones((1, 16, 16)), grid=4, n_perturbations=200)
    assert np.abs(expl.weights).max() < 1e-6
    assert expl.mask.sum() == 0 and expl.selected == []


def test_lime_deterministic_and_whole_superpixels(cnn):
    x = _images(1)[0]
    a = lime_explain(cnn, x, grid=8, n_perturbations=640, seed=4)
    b = lime_explain(cnn, x, grid=8, n_perturbations=640, seed=4)
    assert np.array_equal(a.mask, b.mask) and np.array_equal(a.weights, b.weights)
    seg = grid_segments(32, 8)
    for s in range(64):
        assert len(np.unique(a.mask[seg == s])) == 1


def test_lime_validation():
    model = _superpixel3_model()
    with pytest.raises(ValueError):
        lime_explain(model, np.ones((1, 16, 16)), grid=4, n_perturbations=100)
    with pytest.raises(ValueError):
        lime_explain(model, np.ones((1, 16, 16)), grid=4, n_perturbations=200, top_k=0)
    with pytest.raises(ValueError):
        lime_explain(model, np.ones((1, 18, 18)), grid=4, n_perturbations=200)


def test_lime_transformer_shapes(cnn):
    masks = LimeExplainer(cnn, n_perturbations=640).fit().transform(_images(2))
    assert masks.shape == (2, 32, 32) and masks.dtype == np.uint8


def test_heatmap_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        Heatmap(-np.ones((2, 2)), "x")
    with pytest.raises(ValueError):
        Heatmap(2 * np.ones((2, 2)), "x", calibrated=True)
    hm = Heatmap(np.arange(16.0).reshape(4, 4) / 16, "gradcam", calibrated=True)
    write_heatmap(tmp_path / "h.lxhm", hm)
    back = read_heatmap(tmp_path / "h.lxhm")
    assert back.method == "gradcam" and back.calibrated and np.array_equal(back.values, hm.values)
    (tmp_path / "bad").write_bytes(b"nope" + bytes(20))
    with pytest.raises(ValueError):
        read_heatmap(tmp_path / "bad")
