"""Tape engine tests: finite-difference checks per primitive, replay, backward."""

import numpy as np
import pytest

from arctrack import autodiff
from arctrack.autodiff import Node, Tape, backward
from arctrack.errors import ShapeError, TapeCorruption


def _loss_weights(shape):
    # fixed, non-constant weighting so every output element matters
    return np.cos(np.arange(int(np.prod(shape))) * 0.7 + 0.3).reshape(shape)


def _eval_loss(build, arrays):
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in arrays.items()}
    out = build(tape, leaves)
    w = _loss_weights(out.data.shape)
    return float((out.data * w).sum())


def fd_check(build, arrays, step=1e-6, tol=5e-6):
    """Compare backward() against central differences for every leaf element."""
    tape = Tape()
    leaves = {k: tape.leaf(v, k) for k, v in arrays.items()}
    out = build(tape, leaves)
    w = _loss_weights(out.data.shape)
    grads = backward(tape, w, output=out)
    for name, val in arrays.items():
        analytic = grads[name]
        assert analytic.shape == np.asarray(val).shape
        numeric = np.zeros_like(analytic)
        flat = numeric.ravel()
        for i in range(flat.size):
            hi = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
            lo = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
            hi[name].ravel()[i] += step
            lo[name].ravel()[i] -= step
            flat[i] = (_eval_loss(build, hi) - _eval_loss(build, lo)) / (2.0 * step)
        scale = max(1.0, float(np.abs(numeric).max()))
        assert np.abs(analytic - numeric).max() <= tol * scale, (
            f"leaf {name}: max dev {np.abs(analytic - numeric).max():.3e}"
        )


def rng(seed=0):
    return np.random.default_rng(seed)


class TestPrimitiveGradients:
    def test_matmul(self):
        r = rng(1)
        fd_check(
            lambda t, lv: autodiff.matmul(lv["a"], lv["b"]),
            {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4, 2))},
        )

    def test_add_broadcast_row(self):
        r = rng(2)
        fd_check(
            lambda t, lv: autodiff.add(lv["a"], lv["b"]),
            {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4,))},
        )

    def test_add_broadcast_keepdims(self):
        r = rng(3)
        fd_check(
            lambda t, lv: autodiff.add(lv["a"], lv["b"]),
            {"a": r.normal(size=(3, 4)), "b": r.normal(size=(3, 1))},
        )

    def test_mul_broadcast(self):
        r = rng(4)
        fd_check(
            lambda t, lv: autodiff.mul(lv["a"], lv["b"]),
            {"a": r.normal(size=(2, 5)), "b": r.normal(size=(1, 5))},
        )

    def test_scale(self):
        r = rng(5)
        fd_check(
            lambda t, lv: autodiff.scale(lv["a"], -2.5),
            {"a": r.normal(size=(3, 3))},
        )

    def test_transpose(self):
        r = rng(6)
        fd_check(
            lambda t, lv: autodiff.matmul(autodiff.transpose(lv["a"]), lv["a"]),
            {"a": r.normal(size=(3, 4))},
        )

    def test_relu(self):
        r = rng(7)
        vals = r.normal(size=(4, 4))
        vals[np.abs(vals) < 0.05] = 0.5  # stay off the kink
        fd_check(lambda t, lv: autodiff.relu(lv["a"]), {"a": vals})

    def test_sigmoid(self):
        r = rng(8)
        fd_check(lambda t, lv: autodiff.sigmoid(lv["a"]), {"a": r.normal(size=(3, 4))})

    def test_sigmoid_extreme_inputs_stable(self):
        tape = Tape()
        a = tape.leaf(np.array([[-1000.0, 1000.0, 0.0]]), "a")
        with np.errstate(over="raise"):
            out = autodiff.sigmoid(a)
        assert np.allclose(out.data, [[0.0, 1.0, 0.5]])

    def test_softmax_rows(self):
        r = rng(9)
        fd_check(lambda t, lv: autodiff.softmax_rows(lv["a"]), {"a": r.normal(size=(3, 5))})

    def test_softmax_rows_normalized_and_shift_invariant(self):
        tape = Tape()
        x = np.array([[1.0, 2.0, 3.0], [500.0, 501.0, 502.0]])
        out = autodiff.softmax_rows(tape.leaf(x, "x"))
        assert np.allclose(out.data.sum(axis=1), 1.0)
        assert np.allclose(out.data[0], out.data[1])

    def test_layer_norm_rows(self):
        r = rng(10)
        fd_check(
            lambda t, lv: autodiff.layer_norm_rows(lv["x"], lv["g"], lv["b"]),
            {
                "x": r.normal(size=(3, 6)),
                "g": 1.0 + 0.2 * r.normal(size=(6,)),
                "b": 0.1 * r.normal(size=(6,)),
            },
            tol=2e-5,
        )

    def test_layer_norm_rows_values(self):
        tape = Tape()
        x = tape.leaf(np.array([[1.0, 2.0, 3.0, 4.0]]), "x")
        g = tape.leaf(np.ones(4), "g")
        b = tape.leaf(np.zeros(4), "b")
        out = autodiff.layer_norm_rows(x, g, b)
        assert abs(out.data.mean()) < 1e-12
        # population variance with the epsilon inside the root
        expected = (np.array([1.0, 2, 3, 4]) - 2.5) / np.sqrt(1.25 + autodiff.LAYER_NORM_EPS)
        assert np.allclose(out.data[0], expected)

    def test_concat_cols(self):
        r = rng(11)
        fd_check(
            lambda t, lv: autodiff.concat_cols([lv["a"], lv["b"], lv["c"]]),
            {"a": r.normal(size=(3, 2)), "b": r.normal(size=(3, 1)), "c": r.normal(size=(3, 3))},
        )

    def test_concat_rows(self):
        r = rng(12)
        fd_check(
            lambda t, lv: autodiff.concat_rows([lv["a"], lv["b"]]),
            {"a": r.normal(size=(2, 3)), "b": r.normal(size=(4, 3))},
        )

    def test_take_rows(self):
        r = rng(13)
        fd_check(lambda t, lv: autodiff.take_rows(lv["a"], 1, 3), {"a": r.normal(size=(5, 3))})

    def test_composite_graph(self):
        r = rng(14)

        def build(tape, lv):
            h = autodiff.relu(autodiff.add(autodiff.matmul(lv["x"], lv["w1"]), lv["b1"]))
            h = autodiff.layer_norm_rows(h, lv["g"], lv["o"])
            att = autodiff.softmax_rows(
                autodiff.scale(autodiff.matmul(h, autodiff.transpose(h)), 0.5)
            )
            return autodiff.sigmoid(autodiff.matmul(att, autodiff.matmul(h, lv["w2"])))

        fd_check(
            build,
            {
                "x": r.normal(size=(3, 4)),
                "w1": r.normal(size=(4, 6)) * 0.5,
                "b1": r.normal(size=(6,)) * 0.1,
                "g": 1.0 + 0.1 * r.normal(size=(6,)),
                "o": 0.1 * r.normal(size=(6,)),
                "w2": r.normal(size=(6, 2)) * 0.5,
            },
            tol=5e-5,
        )


class TestTape:
    def _small_graph(self):
        tape = Tape()
        a = tape.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]), "a")
        b = tape.leaf(np.array([[0.5], [2.0]]), "b")
        out = autodiff.relu(autodiff.matmul(a, b))
        return tape, a, b, out

    def test_replay_clean(self):
        tape, *_ = self._small_graph()
        tape.replay()

    def test_replay_detects_mutation(self):
        tape, a, b, out = self._small_graph()
        out.data[0, 0] += 1.0
        with pytest.raises(TapeCorruption):
            tape.replay()

    def test_replay_detects_leaf_mutation(self):
        tape, a, b, out = self._small_graph()
        a.data[0, 0] = 99.0  # children no longer reproduce
        with pytest.raises(TapeCorruption):
            tape.replay()

    def test_cross_tape_raises(self):
        t1, t2 = Tape(), Tape()
        a = t1.leaf(np.ones((2, 2)), "a")
        b = t2.leaf(np.ones((2, 2)), "b")
        with pytest.raises(TapeCorruption):
            autodiff.add(a, b)

    def test_output_marked_automatically(self):
        tape, a, b, out = self._small_graph()
        assert tape.output is out

    def test_constant_gets_no_gradient(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)), "a")
        c = tape.constant(np.full((2, 2), 3.0))
        out = autodiff.mul(a, c)
        grads = backward(tape, np.ones((2, 2)))
        assert set(grads) == {"a"}
        assert np.allclose(grads["a"], 3.0)


class TestBackward:
    def test_zero_seed_gives_zero_grads(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 3)), "a")
        autodiff.scale(a, 4.0)
        grads = backward(tape, np.zeros((2, 3)))
        assert np.all(grads["a"] == 0.0)

    def test_unreached_leaf_reports_zeros(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)), "a")
        unused = tape.leaf(np.ones((3, 3)), "unused")
        autodiff.scale(a, 2.0)
        grads = backward(tape, np.ones((2, 2)))
        assert grads["unused"].shape == (3, 3)
        assert np.all(grads["unused"] == 0.0)

    def test_fan_out_accumulates(self):
        tape = Tape()
        a = tape.leaf(np.array([[2.0]]), "a")
        out = autodiff.add(autodiff.scale(a, 3.0), autodiff.scale(a, 4.0))
        grads = backward(tape, np.ones((1, 1)), output=out)
        assert grads["a"][0, 0] == pytest.approx(7.0)

    def test_seed_shape_mismatch(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 2)), "a")
        autodiff.scale(a, 1.0)
        with pytest.raises(ShapeError):
            backward(tape, np.ones((3, 3)))

    def test_no_output_raises(self):
        tape = Tape()
        tape.leaf(np.ones(2), "a")
        with pytest.raises(TapeCorruption):
            backward(tape, np.ones(2))

    def test_explicit_output_overrides_mark(self):
        tape = Tape()
        a = tape.leaf(np.array([1.0, 2.0]), "a")
        mid = autodiff.scale(a, 2.0)
        autodiff.scale(mid, 10.0)  # becomes tape.output
        grads = backward(tape, np.ones(2), output=mid)
        assert np.allclose(grads["a"], 2.0)


class TestShapeValidation:
    def test_matmul_mismatch(self):
        tape = Tape()
        a = tape.leaf(np.ones((2, 3)), "a")
        b = tape.leaf(np.ones((4, 2)), "b")
        with pytest.raises(ShapeError):
            autodiff.matmul(a, b)

    def test_layer_norm_gain_shape(self):
        tape = Tape()
        x = tape.leaf(np.ones((2, 4)), "x")
        g = tape.leaf(np.ones(3), "g")
        b = tape.leaf(np.ones(4), "b")
        with pytest.raises(ShapeError):
            autodiff.layer_norm_rows(x, g, b)

    def test_take_rows_bounds(self):
        tape = Tape()
        a = tape.leaf(np.ones((3, 2)), "a")
        with pytest.raises(ShapeError):
            autodiff.take_rows(a, 1, 5)
        with pytest.raises(ShapeError):
            autodiff.take_rows(a, 2, 2)
