import numpy as np
import pytest

from graspfield.approx import (
    Adam, MlpSpec, SetEncoderSpec, accumulate, load_params, mlp_backward,
    mlp_forward, mlp_init, save_params, set_encode, set_encode_backward,
    set_encoder_init,
)


def finite_diff(fn, params, keys=None, h=1e-6):
    """Central-difference gradients of a scalar fn(params) wrt each entry."""
    grads = {}
    for name in (keys or params):
        p = params[name]
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            hi = fn()
            p[idx] = old - h
            lo = fn()
            p[idx] = old
            g[idx] = (hi - lo) / (2 * h)
        grads[name] = g
    return grads


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


class TestMlpForward:
    def test_identity_layer(self):
        spec = MlpSpec((3, 3))
        params = {"W0": np.eye(3), "b0": np.zeros(3)}
        x = np.array([0.3, -1.2, 2.0])
        y, _ = mlp_forward(spec, params, x)
        assert np.array_equal(y, x)

    def test_zero_params_zero_output(self):
        spec = MlpSpec((4, 8, 2))
        params = {k: np.zeros_like(v) for k, v in
                  mlp_init(spec, np.random.default_rng(0)).items()}
        y, _ = mlp_forward(spec, params, np.ones(4))
        assert np.array_equal(y, np.zeros(2))

    def test_hand_computed_two_by_two(self):
        # single hidden unit path: y = W1 * silu(W0 x + b0) + b1
        spec = MlpSpec((2, 2, 1))
        params = {"W0": np.array([[1.0, 0.0], [0.0, 2.0]]), "b0": np.array([0.5, -0.5]),
                  "W1": np.array([[1.0], [-1.0]]), "b1": np.array([0.25])}
        x = np.array([1.0, 1.0])
        z = np.array([1.5, 1.5])
        s = z / (1 + np.exp(-z))
        expect = s[0] - s[1] + 0.25
        y, _ = mlp_forward(spec, params, x)
        assert y[0] == pytest.approx(expect, rel=1e-12)

    def test_shape_mismatch(self):
        spec = MlpSpec((3, 2))
        params = mlp_init(spec, np.random.default_rng(0))
        with pytest.raises(ValueError, match="width"):
            mlp_forward(spec, params, np.zeros(4))


class TestMlpBackward:
    def test_zero_upstream(self):
        spec = MlpSpec((3, 5, 2))
        params = mlp_init(spec, np.random.default_rng(1))
        _, cache = mlp_forward(spec, params, np.ones(3))
        grads, gx = mlp_backward(spec, params, cache, np.zeros(2))
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(gx == 0)

    def test_linear_net_input_gradient(self):
        spec = MlpSpec((3, 2))
        params = mlp_init(spec, np.random.default_rng(2))
        _, cache = mlp_forward(spec, params, np.ones(3))
        gy = np.array([1.0, -2.0])
        _, gx = mlp_backward(spec, params, cache, gy)
        assert np.allclose(gx, params["W0"] @ gy)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradcheck_random_nets(self, seed):
        rng = np.random.default_rng(seed)
        widths = tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(2, 5)))
        spec = MlpSpec(widths)
        params = mlp_init(spec, rng)
        x = rng.normal(size=(3, widths[0]))
        w = rng.normal(size=(3, widths[-1]))  # random linear readout

        def loss():
            y, _ = mlp_forward(spec, params, x)
            return float(np.sum(w * y))

        y, cache = mlp_forward(spec, params, x)
        grads, gx = mlp_backward(spec, params, cache, w)
        num = finite_diff(loss, params)
        for name in params:
            mask = np.abs(num[name]) + np.abs(grads[name]) > 1e-7
            assert np.all(rel_err(grads[name], num[name])[mask] < 1e-4), name

    def test_gradcheck_input(self):
        rng = np.random.default_rng(42)
        spec = MlpSpec((4, 6, 3))
        params = mlp_init(spec, rng)
        x = rng.normal(size=4)
        w = rng.normal(size=3)
        _, cache = mlp_forward(spec, params, x)
        _, gx = mlp_backward(spec, params, cache, w)
        num = np.zeros(4)
        h = 1e-6
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            num[i] = (np.dot(w, mlp_forward(spec, params, xp)[0])
                      - np.dot(w, mlp_forward(spec, params, xm)[0])) / (2 * h)
        assert np.all(rel_err(gx, num) < 1e-4)


class TestSetEncoder:
    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(3)
        spec = SetEncoderSpec((2, 16, 8))
        params = set_encoder_init(spec, rng)
        pts = rng.normal(size=(20, 2))
        f1, _ = set_encode(spec, params, pts)
        f2, _ = set_encode(spec, params, pts[rng.permutation(20)])
        assert np.array_equal(f1, f2)

    def test_duplicated_point(self):
        rng = np.random.default_rng(4)
        spec = SetEncoderSpec((2, 16, 8))
        params = set_encoder_init(spec, rng)
        p = rng.normal(size=(1, 2))
        f1, _ = set_encode(spec, params, p)
        fn, _ = set_encode(spec, params, np.repeat(p, 7, axis=0))
        # matmul rounding differs with batch shape, so exact equality is
        # only up to machine precision here
        assert np.allclose(f1, fn, rtol=0, atol=1e-12)

    def test_empty_set_rejected(self):
        spec = SetEncoderSpec((2, 8))
        params = set_encoder_init(spec, np.random.default_rng(0))
        with pytest.raises(ValueError, match="nonempty"):
            set_encode(spec, params, np.zeros((0, 2)))

    def test_gradcheck_five_points(self):
        rng = np.random.default_rng(5)
        spec = SetEncoderSpec((2, 8, 6))
        params = set_encoder_init(spec, rng)
        pts = rng.normal(size=(5, 2))
        w = rng.normal(size=6)

        def loss():
            f, _ = set_encode(spec, params, pts)
            return float(np.dot(w, f))

        f, cache = set_encode(spec, params, pts)
        grads, gpts = set_encode_backward(spec, params, cache, w)
        num = finite_diff(loss, params)
        for name in params:
            mask = np.abs(num[name]) + np.abs(grads[name]) > 1e-7
            assert np.all(rel_err(grads[name], num[name])[mask] < 1e-4), name

    def test_batched_matches_single(self):
        rng = np.random.default_rng(6)
        spec = SetEncoderSpec((2, 8, 4))
        params = set_encoder_init(spec, rng)
        clouds = rng.normal(size=(3, 10, 2))
        fb, _ = set_encode(spec, params, clouds)
        for i in range(3):
            fi, _ = set_encode(spec, params, clouds[i])
            assert np.allclose(fb[i], fi)


class TestAdam:
    def test_zero_gradient_no_change(self):
        params = {"w": np.array([1.0, 2.0])}
        opt = Adam(lr=0.1)
        opt.step(params, {"w": np.zeros(2)})
        assert np.array_equal(params["w"], [1.0, 2.0])

    def test_first_step_closed_form(self):
        # bias correction makes the first update exactly -lr * sign(g)
        # up to the epsilon regularizer
        g = 0.37
        params = {"w": np.array([1.0])}
        opt = Adam(lr=0.01, eps=1e-8)
        opt.step(params, {"w": np.array([g])})
        expect = 1.0 - 0.01 * g / (abs(g) + 1e-8)
        assert params["w"][0] == pytest.approx(expect, rel=1e-12)

    def test_deterministic_trajectories(self):
        def run():
            rng = np.random.default_rng(7)
            spec = MlpSpec((2, 8, 1))
            params = mlp_init(spec, rng)
            opt = Adam(lr=1e-3)
            x = rng.normal(size=(16, 2))
            y = x[:, :1] * x[:, 1:]
            for _ in range(20):
                out, cache = mlp_forward(spec, params, x)
                grads, _ = mlp_backward(spec, params, cache, 2 * (out - y) / len(x))
                opt.step(params, grads)
            return params

        a, b = run(), run()
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_nan_gradient_debug(self):
        params = {"w": np.ones(2)}
        opt = Adam(debug=True)
        with pytest.raises(FloatingPointError):
            opt.step(params, {"w": np.array([np.nan, 0.0])})


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        params = {"enc.W0": rng.normal(size=(2, 16)), "enc.b0": rng.normal(size=16),
                  "head.W0": rng.normal(size=(16, 6))}
        meta = {"kind": "score", "beta_min": 0.1}
        path = tmp_path / "model.ckpt"
        save_params(path, params, meta)
        back, meta2 = load_params(path)
        assert meta2 == meta
        assert list(back) == list(params)  # declared order preserved
        for k in params:
            assert np.array_equal(back[k], params[k])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"something else\n")
        with pytest.raises(ValueError, match="magic"):
            load_params(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_params(path, {"w": np.ones(100)})
        data = path.read_bytes()
        path.write_bytes(data[:-50])
        with pytest.raises(ValueError, match="truncated"):
            load_params(path)


def test_accumulate():
    total = accumulate({}, {"a": np.ones(2)})
    total = accumulate(total, {"a": np.ones(2), "b": np.full(3, 2.0)}, scale=0.5)
    assert np.allclose(total["a"], 1.5)
    assert np.allclose(total["b"], 1.0)
