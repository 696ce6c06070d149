import numpy as np
import pytest

import flowcast.autodiff as ad
from flowcast.autodiff import Adam, Tensor, backward
from flowcast.errors import ShapeError
from oracles import finite_diff_check


class TestForwardExamples:
    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_rows_sum_to_one_and_shift_invariant(self, rng):
        x = rng.normal(0, 3, (6, 9))
        y = ad.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
        y2 = ad.softmax(Tensor(x + 7.3), axis=-1).data
        np.testing.assert_allclose(y, y2, atol=1e-12)

    def test_matmul_identity(self, rng):
        a = rng.normal(size=(3, 3))
        out = ad.matmul(Tensor(np.eye(3)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_mse_gradient_hand_case(self):
        """d/dw of (w*x - y)^2 at w=1, x=2, y=0 is 2*2*2 = 8."""
        w = ad.parameter([1.0])
        x = ad.constant([2.0])
        loss = ad.mse_loss(ad.mul(w, x), ad.constant([0.0]))
        backward(loss)
        np.testing.assert_allclose(w.grad, [8.0])

    def test_layer_norm_moments(self, rng):
        x = rng.normal(3.0, 2.5, (8, 16))
        y = ad.layer_norm(Tensor(x)).data
        assert np.abs(y.mean(axis=-1)).max() <= 1e-7
        assert np.abs(y.var(axis=-1) - 1.0).max() <= 1e-5

    def test_relu(self):
        out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_concat_and_narrow(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
        cat = ad.concat([Tensor(a), Tensor(b)], axis=1)
        np.testing.assert_array_equal(cat.data, np.concatenate([a, b], axis=1))
        sl = ad.narrow(cat, 1, 3, 2)
        np.testing.assert_array_equal(sl.data, b)

    def test_roll_semantics(self):
        out = ad.roll(Tensor([[1.0], [2.0], [3.0], [4.0]]), -1, axis=0)
        np.testing.assert_array_equal(out.data.ravel(), [2.0, 3.0, 4.0, 1.0])

    def test_max_pool_hand_case(self):
        """Width-3/stride-2 same-pad pooling of [1,5,2,0,3,9,4,4]."""
        x = Tensor(np.array([1.0, 5, 2, 0, 3, 9, 4, 4]).reshape(1, 8, 1))
        out = ad.max_pool1d(x, axis=-2)
        np.testing.assert_array_equal(out.data.ravel(), [5.0, 5.0, 9.0, 9.0])

    def test_max_pool_length(self, rng):
        for length in (2, 5, 8, 13):
            x = Tensor(rng.normal(size=(2, length, 3)))
            assert ad.max_pool1d(x, axis=-2).shape == (2, (length + 1) // 2, 3)

    def test_circ_diag_mean_matches_loop(self, rng):
        s = rng.normal(size=(2, 3, 5, 5))
        out = ad.circ_diag_mean(Tensor(s)).data
        expect = np.zeros((2, 3, 5))
        for lag in range(5):
            for t in range(5):
                expect[..., lag] += s[..., t, (t + lag) % 5]
        np.testing.assert_allclose(out, expect / 5.0, atol=1e-12)


class TestShapeErrors:
    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError) as err:
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        assert "matmul" in str(err.value) and "(2, 3)" in str(err.value)

    def test_add_mismatch(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_backward_requires_scalar(self):
        t = ad.parameter(np.ones(3))
        with pytest.raises(ShapeError):
            backward(ad.scale(t, 2.0))

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.mse_loss(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_pool_too_short(self):
        with pytest.raises(ShapeError):
            ad.max_pool1d(Tensor(np.ones((1, 1, 2))), axis=-2)


class TestBackwardContract:
    def test_unrelated_parameter_gets_no_grad(self):
        p = ad.parameter([1.0, 2.0])
        q = ad.parameter([3.0])
        loss = ad.mean(ad.mul(p, p))
        backward(loss)
        assert q.grad is None

    def test_sum_gradient_is_ones(self):
        p = ad.parameter(np.arange(6.0).reshape(2, 3))
        backward(ad.tsum(p))
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_grad_accumulates_across_calls(self):
        p = ad.parameter([2.0])
        backward(ad.tsum(p))
        backward(ad.tsum(ad.scale(p, 3.0)))
        np.testing.assert_allclose(p.grad, [4.0])
        p.zero_grad()
        assert p.grad is None

    def test_each_node_visited_once(self):
        """Reverse pass hits every interior node exactly once even in a
        diamond-shaped graph."""
        p = ad.parameter([1.0, 2.0])
        shared = ad.mul(p, p)
        left = ad.scale(shared, 2.0)
        right = ad.scale(shared, 3.0)
        loss = ad.tsum(ad.add(left, right))

        calls = {"n": 0}
        orig = shared._backward_fn

        def counting(g):
            calls["n"] += 1
            return orig(g)

        shared._backward_fn = counting
        backward(loss)
        assert calls["n"] == 1
        # chain rule through both branches: d/dp of 5*p^2 = 10p
        np.testing.assert_allclose(p.grad, [10.0, 20.0])

    def test_broadcast_bias_grad(self, rng):
        x = Tensor(rng.normal(size=(4, 5, 3)))
        b = ad.parameter(np.zeros(3))
        backward(ad.tsum(ad.add(x, b)))
        np.testing.assert_allclose(b.grad, np.full(3, 20.0))


class TestFiniteDifferences:
    """Central-difference oracle across every differentiable op."""

    def _check(self, rng, build, *shapes):
        params = {
            f"p{i}": ad.parameter(rng.normal(size=s) * 0.7)
            for i, s in enumerate(shapes)
        }

        def loss_fn():
            return build(*params.values())

        failures = finite_diff_check(loss_fn, params, rng)
        assert not failures, failures

    def test_add_mul_sub_neg(self, rng):
        self._check(
            rng,
            lambda a, b: ad.mean(ad.mul(ad.add(a, b), ad.sub(a, ad.neg(b)))),
            (3, 4),
            (3, 4),
        )

    def test_broadcast_ops(self, rng):
        self._check(
            rng,
            lambda a, b: ad.mean(ad.mul(a, b)),
            (2, 5, 3),
            (3,),
        )

    def test_matmul_batched(self, rng):
        self._check(
            rng,
            lambda a, b: ad.mean(ad.matmul(a, b)),
            (2, 3, 4),
            (4, 5),
        )

    def test_softmax(self, rng):
        self._check(rng, lambda a: ad.mean(ad.mul(ad.softmax(a, axis=-1), a)), (4, 6))

    def test_layer_norm(self, rng):
        self._check(rng, lambda a: ad.mean(ad.mul(ad.layer_norm(a), a)), (5, 7))

    def test_relu(self, rng):
        self._check(rng, lambda a: ad.mean(ad.relu(a)), (6, 6))

    def test_transpose_reshape(self, rng):
        self._check(
            rng,
            lambda a: ad.mean(
                ad.mul(ad.reshape(ad.transpose(a, (1, 0, 2)), (12, 2)), 1.5)
            ),
            (3, 4, 2),
        )

    def test_concat_narrow_roll(self, rng):
        def build(a, b):
            cat = ad.concat([a, b], axis=0)
            rolled = ad.roll(cat, 2, axis=0)
            return ad.mean(ad.mul(ad.narrow(rolled, 0, 1, 4), 2.0))

        self._check(rng, build, (3, 2), (4, 2))

    def test_mean_sum_axes(self, rng):
        self._check(
            rng,
            lambda a: ad.tsum(ad.mul(ad.mean(a, axis=(0, 2), keepdims=True), a)),
            (3, 4, 2),
        )

    def test_mse(self, rng):
        self._check(rng, lambda a, b: ad.mse_loss(a, b), (4, 3), (4, 3))

    def test_max_pool(self, rng):
        self._check(rng, lambda a: ad.mean(ad.max_pool1d(a, axis=-2)), (2, 9, 3))

    def test_circ_diag_and_take_lags(self, rng):
        def build(a):
            scores = ad.circ_diag_mean(ad.matmul(a, ad.transpose(a, (0, 2, 1))))
            sel = ad.take_lags(scores, [0, 2, 3])
            return ad.mean(ad.mul(ad.softmax(sel, axis=-1), sel))

        self._check(rng, build, (2, 6, 3))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = ad.parameter([1.0, -2.0])
        opt = Adam({"p": p}, lr=0.05)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_constant_gradient_descends(self):
        p = ad.parameter([0.0])
        opt = Adam({"p": p}, lr=0.01)
        for _ in range(50):
            p.grad = np.array([2.5])
            opt.step()
        assert p.data[0] < 0.0  # moves opposite the gradient sign

    def test_quadratic_bowl_converges(self):
        """(p-3)^2 from p=0 reaches |p-3| < 0.01 within 2000 steps."""
        p = ad.parameter([0.0])
        opt = Adam({"p": p}, lr=0.01)
        for step in range(2000):
            opt.zero_grad()
            loss = ad.mse_loss(p, ad.constant([3.0]))
            backward(loss)
            opt.step()
            if abs(p.data[0] - 3.0) < 0.01:
                break
        assert abs(p.data[0] - 3.0) < 0.01
        assert opt.step_count == step + 1

    def test_state_shapes_match_params(self):
        p = ad.parameter(np.ones((3, 2)))
        opt = Adam({"p": p})
        assert opt.m["p"].shape == (3, 2) and opt.v["p"].shape == (3, 2)


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        params = {
            "w": ad.parameter(rng.normal(size=(4, 3))),
            "b": ad.parameter(rng.normal(size=(3,))),
            "scalar": ad.parameter(np.array(1.25)),
        }
        path = tmp_path / "ckpt.bin"
        ad.save_params(path, params, meta={"kind": "test"})
        arrays, meta = ad.load_checkpoint(path)
        assert meta == {"kind": "test"}
        for name, p in params.items():
            assert arrays[name].dtype == np.float64
            assert arrays[name].shape == p.data.shape
            assert np.array_equal(arrays[name], p.data)
            assert arrays[name].tobytes() == p.data.tobytes()

    def test_deterministic_bytes(self, tmp_path, rng):
        params = {"w": ad.parameter(rng.normal(size=(7,)))}
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        ad.save_params(a, params)
        ad.save_params(b, params)
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        f = tmp_path / "junk.bin"
        f.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            ad.load_params(f)
