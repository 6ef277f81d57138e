import numpy as np
import pytest

from flowshot import autograd as ag
from flowshot.errors import DimensionError, NumericError


def leaf(values, dtype=np.float64):
    return ag.Param(np.asarray(values, dtype=dtype))


# ---------------------------------------------------------------------------
# primitive op values


def test_matmul_identity():
    a = ag.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    eye = ag.Tensor(np.eye(2))
    out = ag.matmul(a, eye)
    assert np.array_equal(out.value, a.value)


def test_matmul_dot_product():
    a = ag.Tensor(np.array([[1.0, 2.0]]))
    b = ag.Tensor(np.array([[3.0], [4.0]]))
    assert ag.matmul(a, b).value[0, 0] == 11.0


def test_matmul_shape_mismatch_names_both_shapes():
    a = ag.Tensor(np.zeros((2, 3)))
    b = ag.Tensor(np.zeros((4, 2)))
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        ag.matmul(a, b)


def test_relu_values():
    out = ag.relu(ag.Tensor(np.array([[-1.0, 0.0, 2.0]])))
    assert np.array_equal(out.value, [[0.0, 0.0, 2.0]])
    all_neg = ag.relu(ag.Tensor(-np.ones((3, 3))))
    assert np.array_equal(all_neg.value, np.zeros((3, 3)))


def test_relu_subgradient_at_zero_is_zero():
    p = leaf([[-1.0, 2.0]])
    with ag.Tape() as tape:
        loss = ag.sum_all(ag.relu(p.leaf()))
    tape.backward(loss)
    assert np.array_equal(p.grad, [[0.0, 1.0]])


def test_sigmoid_values():
    assert ag.sigmoid(ag.Tensor(np.zeros((1, 1)))).value[0, 0] == 0.5
    big = ag.sigmoid(ag.Tensor(np.array([[50.0]]))).value[0, 0]
    assert 1.0 - 1e-6 < big <= 1.0 and np.isfinite(big)


def test_sigmoid_symmetry():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 4)) * 3
    s = ag.sigmoid(ag.Tensor(x)).value + ag.sigmoid(ag.Tensor(-x)).value
    assert np.allclose(s, 1.0, atol=1e-6)


def test_ops_deterministic():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(5, 2))
    r1 = ag.matmul(ag.Tensor(a), ag.Tensor(b)).value
    r2 = ag.matmul(ag.Tensor(a.copy()), ag.Tensor(b.copy())).value
    assert np.array_equal(r1, r2)


# ---------------------------------------------------------------------------
# tape mechanics


def test_tape_backward_runs_in_reverse_recording_order():
    calls = []
    with ag.Tape() as tape:
        tape.record(lambda: calls.append("first"))
        tape.record(lambda: calls.append("second"))
        loss = ag.Tensor(np.zeros((1, 1)))
    tape.backward(loss)
    assert calls == ["second", "first"]


def test_nested_tapes_rejected():
    with ag.Tape():
        with pytest.raises(RuntimeError):
            with ag.Tape():
                pass


def test_every_reachable_param_gets_a_grad():
    rng = np.random.default_rng(11)
    p1 = leaf(rng.normal(size=(3, 4)))
    p2 = leaf(rng.normal(size=(4, 2)))
    with ag.Tape() as tape:
        loss = ag.sum_all(ag.square(ag.matmul(p1.leaf(), p2.leaf())))
    tape.backward(loss)
    assert np.any(p1.grad != 0) and np.any(p2.grad != 0)


def test_eager_mode_records_nothing():
    p = leaf([[2.0]])
    out = ag.square(p.leaf())  # no active tape
    assert out.value[0, 0] == 4.0
    assert np.array_equal(p.grad, [[0.0]])


# ---------------------------------------------------------------------------
# initialization


def test_xavier_deterministic_per_seed():
    a = ag.xavier_init(6, 9, np.random.default_rng(42))
    b = ag.xavier_init(6, 9, np.random.default_rng(42))
    assert np.array_equal(a, b)
    c = ag.xavier_init(6, 9, np.random.default_rng(43))
    assert np.any(a != c)


def test_xavier_bound_43x128():
    # Glorot-uniform bound sqrt(6 / (43 + 128)) = sqrt(6/171) ~= 0.1873
    w = ag.xavier_init(43, 128, np.random.default_rng(0))
    bound = np.sqrt(6.0 / 171.0)
    assert abs(bound - 0.18731716) < 1e-6
    assert np.abs(w).max() <= bound


def test_xavier_rejects_zero_dims():
    with pytest.raises(DimensionError):
        ag.xavier_init(0, 4, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_grads_is_identity():
    p = leaf([[1.5, -2.0], [0.25, 3.0]])
    before = p.value.copy()
    ag.adam_step([p], lr=0.1, weight_decay=0.0)
    assert np.array_equal(p.value, before)
    assert p.step == 1


def test_adam_first_step_hand_value():
    # bias-corrected first step: m_hat = g, v_hat = g^2,
    # update = lr * g / (|g| + eps) ~= lr * sign(g)
    p = leaf([[1.0]])
    p.grad[:] = 1.0
    ag.adam_step([p], lr=0.1, weight_decay=0.0)
    assert abs(p.value[0, 0] - 0.9) < 1e-6
    assert np.array_equal(p.grad, [[0.0]])  # grads zeroed after the step


def test_adam_decoupled_weight_decay_scaling():
    p = leaf([[1.0]])
    for step in range(3):
        ag.adam_step([p], lr=1e-3, weight_decay=1e-2)
        assert np.isclose(p.value[0, 0], (1.0 - 1e-5) ** (step + 1), rtol=1e-12)


def test_adam_rejects_nonfinite_grad():
    p = leaf([[1.0]])
    p.name = "w_broken"
    p.grad[:] = np.nan
    with pytest.raises(NumericError, match="w_broken"):
        ag.adam_step([p], lr=0.1)


def test_adam_step_counter_monotone():
    p = leaf([[1.0]])
    steps = []
    for _ in range(4):
        ag.adam_step([p], lr=0.01)
        steps.append(p.step)
    assert steps == sorted(steps) == [1, 2, 3, 4]


# ---------------------------------------------------------------------------
# gradient checking


def test_grad_check_quadratic_is_nearly_exact():
    rng = np.random.default_rng(5)
    p = leaf(rng.uniform(0.5, 1.5, size=(3, 4)))

    def loss_fn():
        return ag.sum_all(ag.square(p.leaf()))

    assert ag.grad_check(loss_fn, [p], h=1e-5) < 1e-7


def test_grad_check_flags_corrupted_gradient():
    p = leaf([[0.7, 1.3]])

    def doubled_square(t):
        out = ag.Tensor(t.value * t.value)

        def backward():
            if out.grad is None:
                return
            ag.accumulate_grad(t, out.grad * (4.0 * t.value))  # true grad is 2x

        tape = ag.active_tape()
        if tape is not None:
            tape.record(backward)
        return out

    def loss_fn():
        return ag.sum_all(doubled_square(p.leaf()))

    err = ag.grad_check(loss_fn, [p], h=1e-5)
    assert abs(err - 0.5) < 1e-3


def test_grad_check_requires_float64():
    p = ag.Param(np.ones((1, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        ag.grad_check(lambda: ag.sum_all(ag.square(p.leaf())), [p])


def test_grad_check_rejects_nonfinite_loss():
    p = leaf([[-1.0]])
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericError):
            ag.grad_check(lambda: ag.sum_all(ag.log(p.leaf())), [p])


# ---------------------------------------------------------------------------
# finite-difference property sweep over every primitive


def _fd_case(op_name: str, rng: np.random.Generator) -> float:
    """Build a random instance of one primitive and grad-check it."""
    r = int(rng.integers(1, 5))
    c = int(rng.integers(1, 5))

    def rand(shape, lo=-2.0, hi=2.0, avoid_zero=False):
        v = rng.uniform(lo, hi, size=shape)
        if avoid_zero:
            v = np.where(np.abs(v) < 1e-2, np.sign(v) * 1e-2 + (v == 0) * 1e-2, v)
        return v

    if op_name == "matmul":
        k = int(rng.integers(1, 5))
        a, b = leaf(rand((r, k))), leaf(rand((k, c)))
        fn = lambda: ag.sum_all(ag.square(ag.matmul(a.leaf(), b.leaf())))
        params = [a, b]
    elif op_name == "transpose":
        a = leaf(rand((r, c)))
        fn = lambda: ag.sum_all(ag.square(ag.transpose(a.leaf())))
        params = [a]
    elif op_name == "relu":
        a = leaf(rand((r, c), avoid_zero=True))
        fn = lambda: ag.sum_all(ag.square(ag.relu(a.leaf())))
        params = [a]
    elif op_name == "sigmoid":
        a = leaf(rand((r, c)))
        fn = lambda: ag.sum_all(ag.square(ag.sigmoid(a.leaf())))
        params = [a]
    elif op_name == "log":
        a = leaf(rand((r, c), lo=0.3, hi=2.0))
        fn = lambda: ag.sum_all(ag.square(ag.log(a.leaf())))
        params = [a]
    elif op_name == "clamp":
        a = leaf(rand((r, c)))
        # keep entries away from the clip boundaries so FD stays two-sided
        a.value[np.abs(np.abs(a.value) - 1.0) < 1e-2] = 0.5
        fn = lambda: ag.sum_all(ag.square(ag.clamp(a.leaf(), -1.0, 1.0)))
        params = [a]
    elif op_name == "square":
        # x^4 gradients vanish cubically near 0, where FD noise dominates
        a = leaf(rand((r, c), lo=0.2, hi=2.0))
        fn = lambda: ag.sum_all(ag.square(ag.square(a.leaf())))
        params = [a]
    elif op_name == "add":
        a, b = leaf(rand((r, c))), leaf(rand((r, c)))
        fn = lambda: ag.sum_all(ag.square(ag.add(a.leaf(), b.leaf())))
        params = [a, b]
    elif op_name == "affine":
        a = leaf(rand((r, c)))
        fn = lambda: ag.sum_all(ag.square(ag.affine(a.leaf(), 1.7, -0.3)))
        params = [a]
    elif op_name == "sub_const":
        a = leaf(rand((r, c)))
        const = rand((r, c))
        fn = lambda: ag.sum_all(ag.square(ag.sub_const(a.leaf(), const)))
        params = [a]
    elif op_name == "mul_const":
        a = leaf(rand((r, c)))
        const = rand((r, c))
        fn = lambda: ag.sum_all(ag.square(ag.mul_const(a.leaf(), const)))
        params = [a]
    elif op_name == "add_rowvec":
        a, v = leaf(rand((r, c))), leaf(rand((1, c)))
        fn = lambda: ag.sum_all(ag.square(ag.add_rowvec(a.leaf(), v.leaf())))
        params = [a, v]
    elif op_name == "concat_cols":
        a, b = leaf(rand((r, c))), leaf(rand((r, c + 1)))
        fn = lambda: ag.sum_all(ag.square(ag.concat_cols(a.leaf(), b.leaf())))
        params = [a, b]
    elif op_name == "gather_rows":
        a = leaf(rand((r + 2, c)))
        idx = rng.integers(0, r + 2, size=r + 3)  # duplicates exercise scatter-add
        fn = lambda: ag.sum_all(ag.square(ag.gather_rows(a.leaf(), idx)))
        params = [a]
    elif op_name == "mean_rows":
        a = leaf(rand((r, c)))
        fn = lambda: ag.sum_all(ag.square(ag.mean_rows(a.leaf())))
        params = [a]
    elif op_name == "sum_all":
        a = leaf(rand((r, c)))
        fn = lambda: ag.square(ag.sum_all(a.leaf()))
        params = [a]
    else:
        raise AssertionError(op_name)
    return ag.grad_check(fn, params, h=1e-5)


_ALL_OPS = [
    "matmul", "transpose", "relu", "sigmoid", "log", "clamp", "square", "add",
    "affine", "sub_const", "mul_const", "add_rowvec", "concat_cols",
    "gather_rows", "mean_rows", "sum_all",
]


@pytest.mark.parametrize("op_name", _ALL_OPS)
def test_primitive_gradients_match_finite_differences(op_name):
    # >= 100 random shapes/seeds per primitive
    for seed in range(100):
        rng = np.random.default_rng(seed * 31 + 7)
        err = _fd_case(op_name, rng)
        assert err < 1e-4, f"{op_name} seed {seed}: rel. error {err}"
