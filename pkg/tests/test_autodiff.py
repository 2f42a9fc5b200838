import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisesep.autodiff import (
    Graph, NonFiniteError, ShapeError, Tensor, backward, grad_check, is_grad_enabled, no_grad, ops,
)
from noisesep.autodiff.checkpoint import load_arrays, save_arrays
from noisesep.errors import FormatError
from noisesep.gradsuite import PRIMITIVES, check_primitive


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


class TestForwardExamples:
    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_l2_normalize_3_4(self):
        y = ops.l2_normalize(Tensor([3.0, 4.0]), axis=0).data
        np.testing.assert_allclose(y, [0.6, 0.8], atol=1e-15)
        assert np.linalg.norm(y) == pytest.approx(1.0, abs=1e-12)

    def test_conv1d_frame_count(self):
        x = Tensor(np.zeros((1, 32000)))
        w = Tensor(np.zeros((4, 1, 16)))
        assert ops.conv1d(x, w, stride=8).shape == (4, 3999)
        assert ops.conv1d_out_len(32000, 16, 8) == 3999

    def test_conv1d_transpose_length(self):
        h = Tensor(np.zeros((4, 3999)))
        w = Tensor(np.zeros((4, 1, 16)))
        assert ops.conv1d_transpose(h, w, stride=8).shape == (1, 32000)

    def test_conv1d_matches_direct_sum(self, rng):
        x, w, b = rng.standard_normal((2, 11)), rng.standard_normal((3, 2, 4)), rng.standard_normal(3)
        y = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=3).data
        L = (11 - 4) // 3 + 1
        ref = np.array([[b[o] + np.sum(w[o] * x[:, l * 3:l * 3 + 4]) for l in range(L)] for o in range(3)])
        np.testing.assert_allclose(y, ref, atol=1e-12)

    def test_conv1d_transpose_is_adjoint_of_conv1d(self, rng):
        # <conv(x), y> == <x, conv_T(y)> with shared weights
        x, w = rng.standard_normal((2, 18)), rng.standard_normal((3, 2, 4))
        y = rng.standard_normal((3, ops.conv1d_out_len(18, 4, 2)))
        lhs = np.sum(ops.conv1d(Tensor(x), Tensor(w), stride=2).data * y)
        xt = ops.conv1d_transpose(Tensor(y), Tensor(w), stride=2).data
        assert lhs == pytest.approx(np.sum(xt * x), rel=1e-12)

    def test_softmax_logsumexp_stable(self):
        x = Tensor([[1000.0, 1000.0], [-1000.0, 0.0]])
        np.testing.assert_allclose(ops.softmax(x, axis=1).data[0], [0.5, 0.5])
        assert ops.logsumexp(x, axis=1).data[0] == pytest.approx(1000.0 + np.log(2.0))

    def test_layer_norm_statistics(self, rng):
        x = rng.standard_normal((5, 16)) * 3 + 2
        y = ops.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=1), 1.0, atol=1e-6)

    def test_prelu_slope(self):
        y = ops.prelu(Tensor([-2.0, 0.0, 3.0]), Tensor([0.25])).data
        np.testing.assert_array_equal(y, [-0.5, 0.0, 3.0])


class TestShapeErrors:
    @pytest.mark.parametrize("fn", [
        lambda: ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))),
        lambda: ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3)))),
        lambda: ops.affine(Tensor(np.zeros((4, 3))), Tensor(np.zeros((2, 5)))),
        lambda: ops.conv1d(Tensor(np.zeros((2, 10))), Tensor(np.zeros((3, 1, 4)))),
        lambda: ops.conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros((3, 1, 4)))),
        lambda: ops.reshape(Tensor(np.zeros(6)), (4, 2)),
    ])
    def test_structured_error(self, fn):
        with pytest.raises(ShapeError) as exc:
            fn()
        assert exc.value.primitive
        assert exc.value.detail

    def test_bias_style_broadcast_only(self):
        # trailing-axis bias is allowed, anything else must be explicit
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 1))))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = leaf([1.0, 2.0, 3.0])
        backward(ops.sum_(x))
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_relu_subgradient(self):
        x = leaf([-1.0, 2.0, 0.0])
        backward(ops.sum_(ops.relu(x)))
        np.testing.assert_array_equal(x.grad, [0, 1, 0])

    def test_non_scalar_loss_rejected(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            backward(ops.mul(x, x))

    def test_accumulates_without_reset(self):
        x = leaf([1.0, -2.0])
        backward(ops.sum_(ops.mul(x, x)))
        backward(ops.sum_(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, 4 * x.data)

    def test_independent_parameter_gets_exact_zero(self):
        x, y = leaf([1.0, 2.0]), leaf([3.0])
        loss = ops.add(ops.sum_(ops.exp(x)), ops.scale(ops.sum_(y), 0.0))
        backward(loss)
        assert np.all(y.grad == 0.0)

    def test_shared_subexpression(self):
        x = leaf([1.5])
        y = ops.mul(x, x)
        backward(ops.sum_(ops.add(y, y)))  # d/dx 2x^2 = 4x
        np.testing.assert_allclose(x.grad, [6.0])

    def test_graph_topological_order(self):
        x = leaf([1.0, 2.0])
        a = ops.exp(x)
        loss = ops.sum_(ops.mul(a, ops.log(a)))
        g = Graph(loss)
        pos = {id(n): i for i, n in enumerate(g.nodes)}
        for n in g.nodes:
            for p in n._parents:
                assert pos[id(p)] < pos[id(n)]
        assert x in g.leaves()

    def test_deep_chain_no_recursion_limit(self):
        x = leaf([0.5])
        y = x
        for _ in range(5000):
            y = ops.scale(y, 1.0)
        backward(ops.sum_(y))
        assert x.grad[0] == 1.0

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with no_grad():
            assert not is_grad_enabled()
            y = ops.exp(x)
        assert is_grad_enabled()
        assert not y.requires_grad

    def test_nonfinite_forward_raises(self):
        with pytest.raises(NonFiniteError):
            ops.log(Tensor([0.0]))


class TestGradCheck:
    def test_square_exact(self):
        x = leaf([3.0])
        rep = grad_check(lambda: ops.sum_(ops.mul(x, x)), [x])
        assert rep.passed
        assert rep.max_rel_err < 1e-8

    def test_detects_wrong_gradient(self):
        x = leaf([0.7, -0.3])

        def bad():
            from noisesep.autodiff.tensor import make_node
            return ops.sum_(make_node(x.data ** 2, (x,), lambda g: (3 * x.data * g,), "bad_sq"))

        rep = grad_check(bad, [x])
        assert not rep.passed
        assert rep.failures and "param0" in rep.failures[0]

    def test_nonfinite_perturbation_reported(self):
        x = leaf([1e-6])
        rep = grad_check(lambda: ops.sum_(ops.log(x)), [x], step=1e-5)
        assert not rep.passed
        assert "non-finite" in rep.failures[0]

    def test_layer_norm_params(self, rng):
        x = Tensor(rng.standard_normal((4, 6)))
        g, b = leaf(1 + 0.1 * rng.standard_normal(6)), leaf(rng.standard_normal(6))
        w = Tensor(rng.standard_normal((4, 6)))
        rep = grad_check(lambda: ops.sum_(ops.mul(ops.layer_norm(x, g, b), w)), [g, b])
        assert rep.max_rel_err < 1e-4


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_50_instances(name):
    worst = max(check_primitive(name, seed=s).max_rel_err for s in range(50))
    assert worst <= 1e-4, f"{name}: {worst:.3e}"


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 400), kernel=st.integers(1, 32), stride=st.integers(1, 32))
def test_encode_decode_length_algebra(T, kernel, stride):
    if stride > kernel or T < kernel:
        return
    L = ops.conv1d_out_len(T, kernel, stride)
    assert L == (T - kernel) // stride + 1
    out = ops.conv1d_transpose_out_len(L, kernel, stride)
    assert out <= T
    assert out >= T - (stride - 1)  # tight: only the tail remainder is lost
    if 2 * stride <= kernel:
        assert out >= T - (kernel - stride)


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path, rng):
        arrays = {"a.w": rng.standard_normal((3, 4)), "b": np.array([1.5]), "scalar": np.array(2.0)}
        path = save_arrays(tmp_path / "c.ckpt", arrays, {"k": "v=1", "other": "x"})
        header, back = load_arrays(path)
        assert header == {"k": "v=1", "other": "x"}
        for k in arrays:
            assert back[k].shape == arrays[k].shape
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_layout_is_documented_binary(self, tmp_path):
        import struct
        path = save_arrays(tmp_path / "c.ckpt", {"w": np.array([[1.0, 2.0]])}, {})
        raw = path.read_bytes()
        assert raw[:8] == b"NSEPCKPT"
        assert struct.unpack("<I", raw[8:12])[0] == 1
        assert raw[-16:] == np.array([1.0, 2.0], dtype="<f8").tobytes()

    @pytest.mark.parametrize("mutate", [
        lambda b: b"BADMAGIC" + b[8:],
        lambda b: b[:8] + (99).to_bytes(4, "little") + b[12:],
        lambda b: b[:-5],
    ])
    def test_corruption_is_format_error(self, tmp_path, mutate):
        path = save_arrays(tmp_path / "c.ckpt", {"w": np.ones((2, 2))}, {"a": "b"})
        path.write_bytes(mutate(path.read_bytes()))
        with pytest.raises(FormatError):
            load_arrays(path)
