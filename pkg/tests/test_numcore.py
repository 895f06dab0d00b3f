"""Autodiff kernels: forward values, finite-difference checks, sharing."""

import math

import numpy as np
import pytest

from sublm import numcore as nc
from sublm.errors import DataError, NumericError


def f64_registry():
    return nc.ParamRegistry(dtype=np.float64)


def randomize(registry, rng, scale=1.0):
    for t in registry.unique_storages().values():
        t.data[...] = rng.uniform(-scale, scale, size=t.shape)


class TestForwardValues:
    def test_matmul_all_ones(self):
        a = nc.constant(np.ones((2, 3)))
        b = nc.constant(np.ones((3, 1)))
        assert np.array_equal(nc.matmul(a, b).data, [[3.0], [3.0]])

    def test_relu(self):
        x = nc.constant([-1.0, 2.0])
        assert np.array_equal(nc.relu(x).data, [0.0, 2.0])

    def test_max_over_time(self):
        x = nc.constant([[1.0, 5.0, 2.0], [4.0, 0.0, 3.0]])
        assert np.array_equal(nc.max_over_time(x).data, [5.0, 4.0])

    def test_uniform_nll_is_log_v(self):
        logits = nc.constant(np.zeros((3, 4)))
        loss = nc.softmax_cross_entropy(logits, np.array([0, 1, 3]))
        assert loss.item() == pytest.approx(math.log(4), rel=1e-6)

    def test_confident_nll_closed_form(self):
        # logsumexp([10, -10]) - 10 == log(1 + e^-20)
        logits = nc.constant(np.array([[10.0, -10.0]], dtype=np.float64))
        loss = nc.softmax_cross_entropy(logits, np.array([0]))
        assert loss.item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)

    def test_mean_reduction_matches_identical_rows(self):
        row = np.array([[0.3, -1.2, 0.7]])
        one = nc.softmax_cross_entropy(nc.constant(row), np.array([2]))
        many = nc.softmax_cross_entropy(
            nc.constant(np.repeat(row, 5, axis=0)), np.full(5, 2)
        )
        assert one.item() == pytest.approx(many.item(), rel=1e-6)

    def test_shape_mismatch_raises(self):
        a = nc.constant(np.ones((2, 3)))
        b = nc.constant(np.ones((4, 2)))
        with pytest.raises(NumericError):
            nc.matmul(a, b)
        with pytest.raises(NumericError):
            nc.add(a, b)

    def test_nonfinite_detected(self):
        big = nc.constant(np.full((2, 2), 1e300, dtype=np.float64))
        with pytest.raises(NumericError):
            nc.mul(big, big)

    def test_invalid_target_rejected(self):
        logits = nc.constant(np.zeros((2, 3)))
        with pytest.raises(NumericError):
            nc.softmax_cross_entropy(logits, np.array([0, 3]))


class TestBackwardBasics:
    def test_product_rule(self):
        reg = f64_registry()
        x = reg.add("x", (1, 1))
        y = reg.add("y", (1, 1))
        x.tensor.data[...] = 2.0
        y.tensor.data[...] = 3.0
        nc.backward(nc.mul(x.tensor, y.tensor))
        assert x.tensor.grad[0, 0] == 3.0
        assert y.tensor.grad[0, 0] == 2.0

    def test_reused_parameter_accumulates(self):
        reg = f64_registry()
        p = reg.add("p", (1, 1))
        p.tensor.data[...] = 1.5
        nc.backward(nc.add(p.tensor, p.tensor))
        assert p.tensor.grad[0, 0] == 2.0

    def test_tied_grad_equals_sum_of_untied_copies(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(3, 3))
        x = rng.normal(size=(2, 3))

        # untied: two separate copies used at two sites
        reg = f64_registry()
        a = reg.add("a", (3, 3))
        b = reg.add("b", (3, 3))
        a.tensor.data[...] = w
        b.tensor.data[...] = w
        out = nc.matmul(nc.matmul(nc.constant(x, np.float64), a.tensor), b.tensor)
        nc.backward(nc.softmax_cross_entropy(out, np.array([0, 2])))
        summed = a.tensor.grad + b.tensor.grad

        # tied: one storage, two names
        reg2 = f64_registry()
        a2 = reg2.add("a", (3, 3))
        reg2.add("b", (3, 3))
        reg2.rebind("b", "a")
        a2.tensor.data[...] = w
        t = reg2["b"].tensor
        out2 = nc.matmul(nc.matmul(nc.constant(x, np.float64), a2.tensor), t)
        nc.backward(nc.softmax_cross_entropy(out2, np.array([0, 2])))
        np.testing.assert_allclose(a2.tensor.grad, summed, rtol=1e-12)


OPS = {}


def op_case(name):
    def deco(fn):
        OPS[name] = fn
        return fn

    return deco


@op_case("matmul")
def _(reg, rng):
    a = reg.add("a", (4, 3)).tensor
    b = reg.add("b", (3, 5)).tensor
    return lambda: nc.softmax_cross_entropy(nc.matmul(a, b), np.array([1, 0, 4, 2]))


@op_case("add_bias_row")
def _(reg, rng):
    a = reg.add("a", (4, 5)).tensor
    b = reg.add("b", (5,)).tensor
    return lambda: nc.softmax_cross_entropy(nc.add(a, b), np.array([1, 0, 4, 2]))


@op_case("mul")
def _(reg, rng):
    a = reg.add("a", (4, 5)).tensor
    b = reg.add("b", (4, 5)).tensor
    return lambda: nc.softmax_cross_entropy(nc.mul(a, b), np.array([1, 0, 4, 2]))


@op_case("sigmoid_tanh_relu")
def _(reg, rng):
    a = reg.add("a", (3, 6)).tensor
    return lambda: nc.softmax_cross_entropy(
        nc.relu(nc.add_const(nc.tanh(nc.sigmoid(a)), 0.1)), np.array([1, 5, 0])
    )


@op_case("concat_narrow_transpose")
def _(reg, rng):
    a = reg.add("a", (3, 4)).tensor
    b = reg.add("b", (3, 2)).tensor

    def loss():
        cat = nc.concat([a, b], axis=1)
        part = nc.narrow(cat, 1, 1, 4)
        return nc.softmax_cross_entropy(nc.transpose(part), np.array([0, 2, 1, 0]))

    return loss


@op_case("reshape")
def _(reg, rng):
    a = reg.add("a", (2, 6)).tensor
    return lambda: nc.softmax_cross_entropy(
        nc.reshape(a, (3, 4)), np.array([0, 3, 2])
    )


@op_case("row_gather_repeats")
def _(reg, rng):
    a = reg.add("a", (5, 4)).tensor
    idx = np.array([0, 2, 2, 4, 1])
    return lambda: nc.softmax_cross_entropy(
        nc.row_gather(a, idx), np.array([0, 3, 2, 1, 1])
    )


@op_case("segment_sum")
def _(reg, rng):
    a = reg.add("a", (6, 4)).tensor
    seg = np.array([0, 0, 1, 2, 2, 2])
    return lambda: nc.softmax_cross_entropy(
        nc.segment_sum(a, seg, 3), np.array([0, 3, 2])
    )


@op_case("segment_max")
def _(reg, rng):
    a = reg.add("a", (6, 4)).tensor
    seg = np.array([0, 0, 1, 1, 2, 2])
    return lambda: nc.softmax_cross_entropy(
        nc.segment_max(a, seg, 3), np.array([0, 3, 2])
    )


@op_case("max_over_time")
def _(reg, rng):
    a = reg.add("a", (5, 3)).tensor

    def loss():
        pooled = nc.max_over_time(a)
        return nc.softmax_cross_entropy(nc.reshape(pooled, (1, 5)), np.array([2]))

    return loss


@op_case("dropout_masked")
def _(reg, rng):
    a = reg.add("a", (4, 6)).tensor
    mask = rng.integers(0, 2, size=(4, 6)).astype(np.float64)
    mask[:, 0] = 1.0  # keep at least one live column
    return lambda: nc.softmax_cross_entropy(
        nc.dropout(a, mask, 0.4), np.array([0, 5, 3, 2])
    )


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    reg = f64_registry()
    build = OPS[name](reg, rng)
    randomize(reg, rng)
    assert nc.gradient_check(build, reg) < 1e-4


def test_three_layer_net_gradient_check():
    rng = np.random.default_rng(11)
    reg = f64_registry()
    w1 = reg.add("w1", (4, 6)).tensor
    b1 = reg.add("b1", (6,)).tensor
    w2 = reg.add("w2", (6, 6)).tensor
    b2 = reg.add("b2", (6,)).tensor
    w3 = reg.add("w3", (6, 5)).tensor
    randomize(reg, rng)
    x = nc.constant(rng.normal(size=(3, 4)), np.float64)
    y = np.array([1, 4, 0])

    def loss():
        h1 = nc.tanh(nc.add(nc.matmul(x, w1), b1))
        h2 = nc.relu(nc.add(nc.matmul(h1, w2), b2))
        return nc.softmax_cross_entropy(nc.matmul(h2, w3), y)

    assert nc.gradient_check(loss, reg) < 1e-4


class TestClipAndStep:
    def _reg_with_grads(self, grads):
        reg = f64_registry()
        for i, g in enumerate(grads):
            slot = reg.add(f"p{i}", g.shape)
            slot.tensor.grad = g.astype(np.float64)
        return reg

    def test_norm_exceeds_limit(self):
        g = np.zeros((10,))
        g[0] = 10.0
        reg = self._reg_with_grads([g])
        assert nc.clip_global_norm(reg, 5.0, batch_size=1) == pytest.approx(0.5)
        assert reg["p0"].tensor.grad[0] == pytest.approx(5.0)

    def test_norm_under_limit(self):
        g = np.zeros((4,))
        g[0] = 3.0
        reg = self._reg_with_grads([g])
        assert nc.clip_global_norm(reg, 5.0, batch_size=1) == 1.0

    def test_global_norm_is_pythagorean(self):
        a = np.zeros((5,))
        a[0] = 3.0
        b = np.zeros((5,))
        b[0] = 4.0
        reg = self._reg_with_grads([a, b])
        # norm 5 == max_norm 5: no clipping
        assert nc.clip_global_norm(reg, 5.0, batch_size=1) == 1.0
        reg2 = self._reg_with_grads([a, b])
        assert nc.clip_global_norm(reg2, 2.5, batch_size=1) == pytest.approx(0.5)

    def test_batch_size_normalization_applies_first(self):
        g = np.zeros((3,))
        g[0] = 10.0
        reg = self._reg_with_grads([g])
        assert nc.clip_global_norm(reg, 5.0, batch_size=2) == 1.0
        assert reg["p0"].tensor.grad[0] == pytest.approx(5.0)

    def test_sgd_step(self):
        reg = f64_registry()
        slot = reg.add("p", (1,))
        slot.tensor.data[...] = 1.0
        slot.tensor.grad = np.array([0.5])
        nc.sgd_step(reg, lr=0.2)
        assert slot.tensor.data[0] == pytest.approx(0.9)
        assert slot.tensor.grad[0] == 0.0
        assert reg.version == 1

    def test_tied_slots_update_once(self):
        reg = f64_registry()
        a = reg.add("a", (2,))
        reg.add("b", (2,))
        reg.rebind("b", "a")
        a.tensor.data[...] = 1.0
        a.tensor.grad = np.array([1.0, 1.0])
        nc.sgd_step(reg, lr=0.1)
        np.testing.assert_allclose(reg["b"].tensor.data, [0.9, 0.9])

    def test_zero_lr_is_identity(self):
        reg = f64_registry()
        slot = reg.add("p", (3,))
        slot.tensor.data[...] = [1.0, 2.0, 3.0]
        slot.tensor.grad = np.ones(3)
        nc.sgd_step(reg, lr=0.0)
        np.testing.assert_array_equal(slot.tensor.data, [1.0, 2.0, 3.0])


class TestRegistry:
    def test_unique_count_shrinks_under_tying(self):
        reg = nc.ParamRegistry()
        reg.add("a", (4, 4))
        reg.add("b", (4, 4))
        assert reg.total_param_count() == 32
        assert reg.unique_param_count() == 32
        reg.rebind("b", "a")
        assert reg.total_param_count() == 32
        assert reg.unique_param_count() == 16

    def test_rebind_shape_mismatch(self):
        reg = nc.ParamRegistry()
        reg.add("a", (4, 4))
        reg.add("b", (2, 4))
        with pytest.raises(DataError):
            reg.rebind("b", "a")

    def test_duplicate_name_rejected(self):
        reg = nc.ParamRegistry()
        reg.add("a", (1,))
        with pytest.raises(DataError):
            reg.add("a", (1,))


class TestCheckpoint:
    def test_roundtrip_preserves_values_and_tying(self, tmp_path):
        rng = np.random.default_rng(3)
        reg = nc.ParamRegistry()
        reg.add("enc.w", (4, 3))
        reg.add("dec.w", (4, 3))
        reg.add("bias", (7,))
        reg.rebind("dec.w", "enc.w")
        randomize(reg, rng)
        path = tmp_path / "model.ckpt"
        nc.save_checkpoint(path, reg, {"units": "morph", "d": 3})

        loaded, config = nc.load_checkpoint(path)
        assert config == {"units": "morph", "d": 3}
        assert loaded.unique_param_count() == reg.unique_param_count()
        assert loaded["dec.w"].tensor is loaded["enc.w"].tensor
        np.testing.assert_allclose(
            loaded["enc.w"].tensor.data, reg["enc.w"].tensor.data, atol=1e-7
        )
        np.testing.assert_allclose(
            loaded["bias"].tensor.data, reg["bias"].tensor.data, atol=1e-7
        )

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(DataError):
            nc.load_checkpoint(path)


def test_no_grad_skips_recording():
    reg = f64_registry()
    p = reg.add("p", (2, 2)).tensor
    p.data[...] = 1.0
    with nc.no_grad():
        out = nc.mul(p, p)
    assert out._backward is None and not out.requires_grad
