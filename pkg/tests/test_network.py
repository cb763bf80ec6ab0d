import numpy as np
import pytest

from skidometry.network import (
    N_ONLINE_PARAMS,
    ONLINE_LAYER_BOUNDS,
    ONLINE_LAYER_SIZES,
    NetworkModel,
    SensorFrame,
    build_input_window,
    default_model,
    forward,
    jacobian_wrt_params,
    load_model,
    pack_params,
    random_params,
    save_model,
    unpack_params,
)


def naive_forward(model, P, window):
    """Independent layer-by-layer oracle with explicit loops."""

    def dense(W, b, x):
        out = np.zeros(W.shape[0])
        for i in range(W.shape[0]):
            s = b[i]
            for j in range(W.shape[1]):
                s += W[i, j] * x[j]
            out[i] = s
        return out

    f1 = np.maximum(dense(model.off1_W, model.off1_b, window), 0.0)
    a = f1
    for W, b in unpack_params(P):
        a = np.tanh(dense(W, b, a))
    merged = np.concatenate([f1, a])
    h = np.maximum(dense(model.off2_W, model.off2_b, merged), 0.0)
    return dense(model.off3_W, model.off3_b, h)


def make_frames(rng, n, t0=0.0, dt=0.1):
    frames = []
    for k in range(n):
        vals = rng.normal(size=7)
        frames.append(SensorFrame(t0 + k * dt, *vals))
    return frames


class TestInputWindow:
    def test_frames_at_mean_give_zero_vector(self):
        model = default_model(n_w=3, seed=1)
        model.input_mean = np.arange(7.0)
        model.input_std = np.full(7, 2.0)
        frames = [SensorFrame(0.1 * k, *np.arange(7.0)) for k in range(3)]
        np.testing.assert_allclose(build_input_window(frames, model), np.zeros(21))

    def test_window_length_is_7_nw(self):
        model = default_model(n_w=3, seed=2)
        rng = np.random.default_rng(0)
        assert build_input_window(make_frames(rng, 3), model).shape == (21,)

    def test_hand_computed_standardization_newest_first(self):
        model = default_model(n_w=2, seed=3)
        model.input_mean = np.full(7, 1.0)
        model.input_std = np.full(7, 0.5)
        older = SensorFrame(0.0, *np.full(7, 2.0))
        newer = SensorFrame(0.1, *np.full(7, 3.0))
        win = build_input_window([older, newer], model)
        expect = np.concatenate([np.full(7, (3.0 - 1.0) / 0.5),
                                 np.full(7, (2.0 - 1.0) / 0.5)])
        np.testing.assert_allclose(win, expect)

    def test_wrong_frame_count_raises(self):
        model = default_model(n_w=3, seed=4)
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            build_input_window(make_frames(rng, 2), model)

    def test_degenerate_std_raises(self):
        model = default_model(n_w=3, seed=5)
        model.input_std = np.zeros(7)
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            build_input_window(make_frames(rng, 3), model)


class TestForward:
    def test_zero_params_equal_zeroed_online_slot(self):
        model = default_model(seed=6)
        rng = np.random.default_rng(3)
        window = rng.normal(size=21)
        out = forward(model, np.zeros(N_ONLINE_PARAMS), window)
        # reference: run the offline path with the online feature slot zeroed
        f1 = np.maximum(model.off1_W @ window + model.off1_b, 0.0)
        merged = np.concatenate([f1, np.zeros(5)])
        h = np.maximum(model.off2_W @ merged + model.off2_b, 0.0)
        np.testing.assert_allclose(out, model.off3_W @ h + model.off3_b, atol=1e-15)

    def test_matches_naive_oracle(self):
        model = default_model(seed=7)
        rng = np.random.default_rng(4)
        P = random_params(seed=8)
        window = rng.normal(size=21)
        np.testing.assert_allclose(forward(model, P, window),
                                   naive_forward(model, P, window), atol=1e-12)

    def test_deterministic(self):
        model = default_model(seed=9)
        rng = np.random.default_rng(5)
        P = random_params(seed=10)
        window = rng.normal(size=21)
        a = forward(model, P, window)
        b = forward(model, P, window)
        assert np.array_equal(a, b)

    def test_lipschitz_on_bounded_inputs(self):
        model = default_model(seed=11)
        P = random_params(seed=12)
        rng = np.random.default_rng(6)
        window = rng.normal(size=21)
        base = forward(model, P, window)
        ratios = []
        for _ in range(200):
            delta = rng.normal(size=21) * 1e-3
            out = forward(model, P, window + delta)
            ratios.append(np.linalg.norm(out - base) / np.linalg.norm(delta))
        assert np.isfinite(max(ratios))
        assert max(ratios) < 1e3


class TestJacobian:
    def test_shape(self):
        model = default_model(seed=13)
        rng = np.random.default_rng(7)
        J = jacobian_wrt_params(model, random_params(seed=14), rng.normal(size=21))
        assert J.shape == (3, 100)

    def test_finite_difference(self):
        model = default_model(seed=15)
        rng = np.random.default_rng(8)
        P = random_params(seed=16)
        window = rng.normal(size=21)
        J = jacobian_wrt_params(model, P, window)
        h = 1e-5
        for k in range(N_ONLINE_PARAMS):
            e = np.zeros(N_ONLINE_PARAMS)
            e[k] = h
            fd = (forward(model, P + e, window) - forward(model, P - e, window)) / (2 * h)
            denom = max(np.max(np.abs(fd)), 1e-6)
            assert np.max(np.abs(J[:, k] - fd)) / denom < 1e-5

    def test_zero_downstream_weights_zero_columns(self):
        model = default_model(seed=17)
        rng = np.random.default_rng(9)
        P = random_params(seed=18)
        layers = unpack_params(P.copy())
        # zero the last online layer's weights: earlier layers have no path out
        W2, b2 = layers[2]
        layers = [layers[0], layers[1], (np.zeros_like(W2), b2)]
        P_cut = pack_params(layers)
        J = jacobian_wrt_params(model, P_cut, rng.normal(size=21))
        # columns of layers 0 and 1 (indices < 70) must vanish
        np.testing.assert_allclose(J[:, :70], 0.0, atol=1e-15)


class TestPacking:
    def test_zero_vector_gives_zero_layers(self):
        for W, b in unpack_params(np.zeros(100)):
            assert not W.any() and not b.any()

    def test_round_trip_bitwise(self):
        P = random_params(seed=19)
        assert np.array_equal(pack_params(unpack_params(P)), P)

    def test_layer_boundaries(self):
        sizes = [(o * i + o) for o, i in ONLINE_LAYER_SIZES]
        assert tuple(np.cumsum(sizes)) == ONLINE_LAYER_BOUNDS == (40, 70, 100)

    def test_bad_length_raises(self):
        with pytest.raises(ValueError):
            unpack_params(np.zeros(99))


class TestModelIO:
    def test_save_load_round_trip(self, tmp_path):
        model = default_model(seed=20)
        model.input_mean = np.random.default_rng(10).normal(size=7)
        model.input_std = np.abs(np.random.default_rng(11).normal(size=7)) + 0.5
        model.p_init = {"flat_hard": random_params(seed=21)}
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        rng = np.random.default_rng(12)
        window = rng.normal(size=21)
        P = model.p_init["flat_hard"]
        np.testing.assert_allclose(forward(loaded, P, window),
                                   forward(model, P, window), atol=1e-15)
        np.testing.assert_allclose(loaded.p_init["flat_hard"], P)

    def test_validate_rejects_bad_wiring(self):
        model = default_model(seed=22)
        model.off2_W = model.off2_W[:, :-1]
        with pytest.raises(ValueError):
            model.validate()
