"""Tensor ops, neural primitives, gradient checking, checkpoints."""
import json
import math

import numpy as np
import pytest

from clozeqa.mathcore import (
    GruParams,
    MlpParams,
    ShapeError,
    Tensor,
    apply_params,
    grad_check,
    gru_sequence,
    load_params,
    matmul,
    mlp_forward,
    mul,
    pick,
    save_params,
    softmax,
    tsum,
)
from clozeqa.mathcore.tensor import gather_rows, max_vec, seq_sum, stack_vec, take_vec


def softmax_oracle(values):
    """Direct e^x / sum e^x, no shift trick."""
    es = [math.exp(v) for v in values]
    total = sum(es)
    return [e / total for e in es]


class TestTensorBasics:
    def test_rank_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2, 2)))

    def test_values_row_major(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.data.ravel().tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_grad_shape_matches(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        tsum(mul(t, t)).backward()
        assert t.grad.shape == t.shape

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            mul(Tensor([1.0]), Tensor([1.0, 2.0]))
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_backward_needs_scalar(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            mul(t, t).backward()

    def test_repeated_parent_accumulates(self):
        t = Tensor([3.0], requires_grad=True)
        tsum(mul(t, t)).backward()  # d/dt t^2 = 2t
        np.testing.assert_allclose(t.grad, [6.0], rtol=0, atol=0)

    def test_seq_sum_matches_fold(self):
        rng = np.random.default_rng(7)
        for n in (1, 5, 9, 40, 130):
            v = rng.uniform(0, 1, n)
            acc = 0.0
            for x in v:
                acc += float(x)
            assert seq_sum(Tensor(v)).item() == acc


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=0)

    def test_singleton(self):
        for c in (-3.7, 0.0, 42.0):
            np.testing.assert_allclose(softmax(Tensor([c])).data, [1.0], atol=0)

    def test_against_formula_oracle(self):
        got = softmax(Tensor([1.0, 2.0, 3.0])).data
        np.testing.assert_allclose(got, softmax_oracle([1.0, 2.0, 3.0]), rtol=0, atol=1e-12)

    def test_probability_vector_property(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            v = rng.uniform(-50, 50, size=rng.integers(1, 12))
            out = softmax(Tensor(v)).data
            assert np.all(out >= 0)
            assert abs(out.sum() - 1.0) <= 1e-9

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            v = rng.uniform(-20, 20, size=6)
            c = rng.uniform(-30, 30)
            np.testing.assert_allclose(
                softmax(Tensor(v)).data, softmax(Tensor(v + c)).data, rtol=0, atol=1e-12
            )

    def test_mask_zeroes_and_renormalizes(self):
        mask = np.array([True, False, True, False])
        out = softmax(Tensor([1.0, 99.0, 3.0, 99.0]), mask).data
        assert out[1] == 0.0 and out[3] == 0.0
        np.testing.assert_allclose(out[[0, 2]], softmax_oracle([1.0, 3.0]), atol=1e-12)

    def test_mask_preserves_order(self):
        rng = np.random.default_rng(5)
        v = rng.uniform(-4, 4, 8)
        mask = np.array([True] * 6 + [False] * 2)
        out = softmax(Tensor(v), mask).data
        order_in = np.argsort(v[:6])
        order_out = np.argsort(out[:6])
        assert list(order_in) == list(order_out)

    def test_empty_support_errors(self):
        with pytest.raises(ValueError, match="empty softmax support"):
            softmax(Tensor([1.0, 2.0]), np.array([False, False]))


def scalar_gru_step(x, h, p):
    """Hand-executed one-dimensional GRU cell."""
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    z = sig(p["wz"] * x + p["uz"] * h + p["bz"])
    r = sig(p["wr"] * x + p["ur"] * h + p["br"])
    c = math.tanh(p["wc"] * x + p["uc"] * (r * h) + p["bc"])
    return (1.0 - z) * h + z * c


def scalar_gru_params(p):
    t = lambda v: Tensor(np.array(v).reshape(1, 1) if np.ndim(v) == 0 else [v], requires_grad=True)
    return GruParams(
        Tensor([[p["wz"]]], requires_grad=True),
        Tensor([[p["uz"]]], requires_grad=True),
        Tensor([p["bz"]], requires_grad=True),
        Tensor([[p["wr"]]], requires_grad=True),
        Tensor([[p["ur"]]], requires_grad=True),
        Tensor([p["br"]], requires_grad=True),
        Tensor([[p["wc"]]], requires_grad=True),
        Tensor([[p["uc"]]], requires_grad=True),
        Tensor([p["bc"]], requires_grad=True),
        1,
        1,
    )


SCALAR_PARAMS = {
    "wz": 0.5, "uz": 0.25, "bz": 0.1,
    "wr": -0.3, "ur": 0.2, "br": 0.0,
    "wc": 0.8, "uc": -0.5, "bc": 0.05,
}


class TestGruSequence:
    def test_zero_inputs_zero_biases_give_zero(self):
        p = GruParams.init(3, 4, np.random.default_rng(0))  # biases init to zero
        out = gru_sequence(Tensor(np.zeros((6, 3))), p)
        np.testing.assert_array_equal(out.data, np.zeros((6, 4)))

    def test_single_step_matches_scalar_oracle(self):
        p = scalar_gru_params(SCALAR_PARAMS)
        out = gru_sequence(Tensor([[0.7]]), p)
        expected = scalar_gru_step(0.7, 0.0, SCALAR_PARAMS)
        np.testing.assert_allclose(out.data, [[expected]], rtol=0, atol=1e-12)

    def test_three_steps_match_scalar_oracle(self):
        p = scalar_gru_params(SCALAR_PARAMS)
        xs = [0.7, -1.1, 0.4]
        out = gru_sequence(Tensor([[x] for x in xs]), p)
        h = 0.0
        for t, x in enumerate(xs):
            h = scalar_gru_step(x, h, SCALAR_PARAMS)
            np.testing.assert_allclose(out.data[t, 0], h, rtol=0, atol=1e-12)

    def test_reversed_singleton_equals_forward(self):
        rng = np.random.default_rng(1)
        p = GruParams.init(2, 3, rng)
        x = Tensor(rng.normal(size=(1, 2)))
        np.testing.assert_array_equal(
            gru_sequence(x, p).data, gru_sequence(x, p, reverse=True).data
        )

    def test_forward_causality(self):
        rng = np.random.default_rng(2)
        p = GruParams.init(3, 4, rng)
        x = rng.normal(size=(7, 3))
        base = gru_sequence(Tensor(x), p).data
        x2 = x.copy()
        x2[5:] = rng.normal(size=(2, 3))  # perturb the future
        changed = gru_sequence(Tensor(x2), p).data
        np.testing.assert_array_equal(base[:5], changed[:5])
        assert not np.array_equal(base[5:], changed[5:])

    def test_reverse_causality(self):
        rng = np.random.default_rng(3)
        p = GruParams.init(3, 4, rng)
        x = rng.normal(size=(7, 3))
        base = gru_sequence(Tensor(x), p, reverse=True).data
        x2 = x.copy()
        x2[:2] = rng.normal(size=(2, 3))  # perturb the past
        changed = gru_sequence(Tensor(x2), p, reverse=True).data
        np.testing.assert_array_equal(base[2:], changed[2:])

    def test_dimension_mismatch(self):
        p = GruParams.init(3, 4, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            gru_sequence(Tensor(np.zeros((5, 2))), p)

    @pytest.mark.parametrize("reverse", [False, True])
    def test_gradients_inputs_and_params(self, reverse):
        rng = np.random.default_rng(11)
        p = GruParams.init(3, 4, rng)
        x_data = rng.normal(size=(5, 3))

        def loss_of_inputs(t):
            out = gru_sequence(t, p, reverse=reverse)
            return tsum(mul(out, out))

        assert grad_check(loss_of_inputs, Tensor(x_data)) < 1e-8

        for field in ("w_update", "u_update", "b_update", "w_reset", "u_reset",
                      "b_reset", "w_cand", "u_cand", "b_cand"):
            def loss_of_param(t, field=field):
                kwargs = {f: getattr(p, f) for f in (
                    "w_update", "u_update", "b_update", "w_reset", "u_reset",
                    "b_reset", "w_cand", "u_cand", "b_cand")}
                kwargs[field] = t
                q = GruParams(input_dim=3, hidden_dim=4, **kwargs)
                out = gru_sequence(Tensor(x_data), q, reverse=reverse)
                return tsum(mul(out, out))

            assert grad_check(loss_of_param, getattr(p, field).detach()) < 1e-8


class TestMlpForward:
    def test_zero_params_zero_output(self):
        p = MlpParams.zeros(3, 4, 2)
        out = mlp_forward(Tensor([1.0, -2.0, 0.5]), p)
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_identity_plus_summing_head(self):
        # W1 = I, b1 = 0, W2 a row of ones: output is sum of tanh(x_i)
        p = MlpParams(
            Tensor(np.eye(3), requires_grad=True),
            Tensor(np.zeros(3), requires_grad=True),
            Tensor(np.ones((1, 3)), requires_grad=True),
            Tensor(np.zeros(1), requires_grad=True),
        )
        x = [0.3, -1.2, 2.0]
        expected = sum(math.tanh(v) for v in x)
        np.testing.assert_allclose(mlp_forward(Tensor(x), p).data, [expected], atol=1e-12)

    def test_zero_input_zero_biases(self):
        p = MlpParams.init(3, 5, 2, np.random.default_rng(0))  # zero biases at init
        np.testing.assert_array_equal(mlp_forward(Tensor(np.zeros(3)), p).data, [0.0, 0.0])

    def test_dimension_mismatch(self):
        p = MlpParams.zeros(3, 4, 1)
        with pytest.raises(ShapeError):
            mlp_forward(Tensor([1.0, 2.0]), p)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        p = MlpParams.init(4, 6, 1, rng)
        assert grad_check(lambda t: pick(mlp_forward(t, p), 0), Tensor(rng.normal(size=4))) < 1e-8


class TestGradCheck:
    def test_quadratic(self):
        x = Tensor([1.0, 2.0])
        err = grad_check(lambda t: tsum(mul(t, t)), x)
        assert err < 1e-8
        np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-15)

    def test_softmax_pick(self):
        rng = np.random.default_rng(9)
        err = grad_check(lambda t: pick(softmax(t), 2), Tensor(rng.normal(size=5)))
        assert err < 1e-6

    def test_eps_range_enforced(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: tsum(t), Tensor([1.0]), eps=1e-2)
        with pytest.raises(ValueError):
            grad_check(lambda t: tsum(t), Tensor([1.0]), eps=1e-8)

    def test_nonfinite_rejected(self):
        from clozeqa.mathcore import log

        with pytest.raises(ValueError, match="finite"):
            grad_check(lambda t: log(tsum(t)), Tensor([-1.0]))


class TestGatherOps:
    def test_gather_rows_repeats_accumulate(self):
        a = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        out = gather_rows(a, [1, 1, 0])
        tsum(out).backward()
        np.testing.assert_array_equal(a.grad, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])

    def test_take_vec_and_pick(self):
        v = Tensor([10.0, 20.0, 30.0])
        np.testing.assert_array_equal(take_vec(v, [2, 0]).data, [30.0, 10.0])
        assert pick(v, 1).item() == 20.0

    def test_max_vec_first_argmax(self):
        v = Tensor([1.0, 3.0, 3.0], requires_grad=True)
        m = max_vec(v)
        m.backward()
        np.testing.assert_array_equal(v.grad, [0.0, 1.0, 0.0])

    def test_stack_vec_routes_gradients(self):
        a, b = Tensor([2.0], requires_grad=True), Tensor([5.0], requires_grad=True)
        out = stack_vec([pick(a, 0), pick(b, 0)])
        pick(out, 1).backward()
        np.testing.assert_array_equal(a.grad, [0.0])
        np.testing.assert_array_equal(b.grad, [1.0])


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(12)
        params = {
            "emb.table": Tensor(rng.normal(size=(4, 3)), requires_grad=True),
            "head.b": Tensor(rng.normal(size=2), requires_grad=True),
        }
        path = tmp_path / "ck.json"
        save_params(path, params, meta={"seed": 12})
        loaded, meta = load_params(path)
        assert meta["seed"] == 12
        for name, t in params.items():
            assert loaded[name].dtype == np.float64
            np.testing.assert_array_equal(loaded[name], t.data)

    def test_identical_params_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(3, 3))
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_params(p1, {"w": Tensor(data.copy())}, meta={"seed": 1})
        save_params(p2, {"w": Tensor(data.copy())}, meta={"seed": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_apply_checks_names_and_shapes(self, tmp_path):
        from clozeqa.mathcore import CheckpointError

        params = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
        path = tmp_path / "ck.json"
        save_params(path, params)
        loaded, _ = load_params(path)
        apply_params(params, loaded)
        with pytest.raises(CheckpointError):
            apply_params({"w": params["w"], "v": params["w"]}, loaded)
        bad = {"w": np.zeros((3, 3))}
        with pytest.raises(ShapeError):
            apply_params(params, bad)

    def test_rejects_foreign_files(self, tmp_path):
        from clozeqa.mathcore import CheckpointError

        path = tmp_path / "junk.json"
        path.write_text(json.dumps({"format": "other"}))
        with pytest.raises(CheckpointError):
            load_params(path)
