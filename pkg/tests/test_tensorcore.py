import numpy as np
import pytest

from weakseg.tensorcore import (Tensor, ParameterStore, backward, conv2d, relu, sigmoid,
                                softmax, maxpool2d, global_average_pool, fully_connected,
                                tsum, tmean, square, SgdOptimizer,
                                save_checkpoint, load_checkpoint, CheckpointError)

from gradcheck import max_relative_grad_error
from oracles import conv2d_naive


def t(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestConv2d:
    def test_all_ones_sums_to_nine(self):
        out = conv2d(t(np.ones((1, 1, 3, 3))), t(np.ones((1, 1, 3, 3))), t(np.zeros(1)))
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 1, 5, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d(t(x), t(w), t(np.zeros(1)), padding=1)
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2)])
    def test_matches_naive_reference_exactly(self, stride, padding, dilation):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = conv2d(t(x), t(w), t(b), stride=stride, padding=padding, dilation=dilation)
        ref = conv2d_naive(x, w, b, stride=stride, padding=padding, dilation=dilation)
        np.testing.assert_array_equal(out.data, ref)

    def test_shape_mismatch_reported(self):
        with pytest.raises(ValueError, match="channels"):
            conv2d(t(np.ones((1, 2, 4, 4))), t(np.ones((3, 5, 3, 3))), t(np.zeros(3)))

    def test_empty_output_rejected(self):
        with pytest.raises(ValueError, match="output"):
            conv2d(t(np.ones((1, 1, 2, 2))), t(np.ones((1, 1, 3, 3))), t(np.zeros(1)))


class TestSimpleOps:
    def test_gap_mean(self):
        out = global_average_pool(t([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert out.data[0, 0] == 2.5

    def test_softmax_uniform(self):
        out = softmax(t([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, np.full(3, 1 / 3), rtol=0, atol=1e-15)

    def test_sigmoid_zero(self):
        assert sigmoid(t([0.0])).data[0] == 0.5

    def test_relu_subgradient_zero_at_zero(self):
        x = t([-1.0, 0.0, 2.0])
        out = tsum(relu(x))
        backward(out)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_maxpool_first_max_wins(self):
        x = t([[[[1.0, 1.0], [0.0, 0.0]]]])
        out = maxpool2d(x, kernel=2)
        assert out.data[0, 0, 0, 0] == 1.0
        backward(tsum(out))
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_fully_connected_bias_free(self):
        out = fully_connected(t([1.0, 2.0]), t([[3.0, 4.0]]))
        assert out.data[0] == 11.0


class TestBackward:
    def test_shared_parameter_accumulates_both_branches(self):
        w = t([2.0])
        x = t([3.0])
        loss = tsum(w * x) + tsum(w * x)
        backward(loss)
        assert w.grad[0] == 6.0

    def test_shared_parameter_k_branches(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4)
        w = t(x.copy())
        single = tsum(square(w))
        backward(single)
        ref = w.grad.copy()
        for k in (2, 3, 5):
            wk = t(x.copy())
            loss = tsum(square(wk))
            for _ in range(k - 1):
                loss = loss + tsum(square(wk))
            backward(loss)
            np.testing.assert_allclose(wk.grad, k * ref, rtol=1e-12)

    def test_zero_upstream_gives_zero_grads(self):
        x = t([1.0, -2.0])
        loss = tsum(x * x) * 0.0
        backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(t([1.0, 2.0]))


class TestGradientChecks:
    """Central differences, h=1e-5, relative error < 1e-4 in double."""

    def check(self, build, arrays, **kw):
        assert max_relative_grad_error(build, arrays, **kw) < 1e-4

    def test_conv2d(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, (1, 2, 4, 4))
        w = rng.uniform(-1, 1, (2, 2, 3, 3))
        b = rng.uniform(-1, 1, 2)
        self.check(lambda xx, ww, bb: tsum(conv2d(xx, ww, bb, padding=1)), [x, w, b])

    def test_relu(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, (3, 4)) + 0.01  # keep away from the kink
        self.check(lambda xx: tsum(square(relu(xx))), [x])

    def test_sigmoid(self):
        rng = np.random.default_rng(9)
        self.check(lambda xx: tsum(square(sigmoid(xx))), [rng.uniform(-1, 1, 6)])

    def test_softmax(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-1, 1, (3, 2, 2))
        mix = rng.uniform(0.5, 1.5, (3, 2, 2))
        self.check(lambda xx: tsum(mul_const(softmax(xx, axis=0), mix)), [x])

    def test_maxpool(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-1, 1, (1, 2, 4, 4))
        self.check(lambda xx: tsum(square(maxpool2d(xx))), [x])

    def test_gap_and_fc(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(-1, 1, (1, 3, 4, 4))
        w = rng.uniform(-1, 1, (2, 3))
        self.check(lambda xx, ww: tsum(square(fully_connected(global_average_pool(xx), ww))), [x, w])

    def test_mean(self):
        rng = np.random.default_rng(13)
        self.check(lambda xx: tmean(square(xx)), [rng.uniform(-1, 1, (3, 5))])


def mul_const(tensor, arr):
    return tensor * Tensor(arr)


class TestSgd:
    def make(self, value, momentum, wd):
        store = ParameterStore()
        store.register("p", Tensor(np.array([value])))
        return store, SgdOptimizer(store, momentum=momentum, weight_decay=wd)

    def test_plain_step(self):
        store, opt = self.make(1.0, 0.0, 0.0)
        store["p"].grad = np.array([1.0])
        opt.step(0.1)
        assert store["p"].data[0] == pytest.approx(0.9)

    def test_momentum_two_steps(self):
        # v1 = 1, p = 0.9; v2 = 0.9 + 1 = 1.9, p = 0.9 - 0.19 = 0.71
        store, opt = self.make(1.0, 0.9, 0.0)
        for _ in range(2):
            store["p"].grad = np.array([1.0])
            opt.step(0.1)
        assert store["p"].data[0] == pytest.approx(0.71)

    def test_pure_weight_decay(self):
        store, opt = self.make(1.0, 0.0, 0.0005)
        store["p"].grad = np.array([0.0])
        opt.step(0.1)
        assert store["p"].data[0] == pytest.approx(0.99995)

    def test_none_grad_skipped(self):
        store, opt = self.make(1.0, 0.9, 0.0005)
        opt.step(0.1)
        assert store["p"].data[0] == 1.0


class TestParameterStore:
    def test_duplicate_rejected(self):
        store = ParameterStore()
        store.register("w", Tensor(np.zeros(2)))
        with pytest.raises(ValueError, match="already registered"):
            store.register("w", Tensor(np.zeros(2)))

    def test_load_shape_mismatch(self):
        store = ParameterStore()
        store.register("w", Tensor(np.zeros(2)))
        with pytest.raises(ValueError, match="shape mismatch"):
            store.load_state_arrays({"w": np.zeros(3)})


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        arrays = {f"a{i}": rng.standard_normal((i + 1, 3)) for i in range(4)}
        meta = {"iteration": 17, "note": "x"}
        path = tmp_path / "ck.bin"
        save_checkpoint(path, arrays, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded_meta == meta
        assert list(loaded) == list(arrays)
        for k in arrays:
            assert loaded[k].tobytes() == arrays[k].tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTACKPTxxxxxxxx")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "ck.bin"
        save_checkpoint(path, {"w": np.ones((4, 4))}, {})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
