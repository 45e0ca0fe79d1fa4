"""Tensor-engine tests: forward examples, gradient checks, invariants."""

import numpy as np
import pytest

from gaitrisk import numerics as nm
from gaitrisk.numerics import AdamState, Tensor, adam_step, grad_check
from gaitrisk.numerics import kernels


def ref_conv3d(x, w, b):
    """Independent same-padding conv oracle built on einsum over taps."""
    B, Ci, T, H, W = x.shape
    Co, _, kt, kh, kw = w.shape
    pt, ph, pw = (kt - 1) // 2, (kh - 1) // 2, (kw - 1) // 2
    xp = np.zeros((B, Ci, T + 2 * pt, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, :, pt:pt + T, ph:ph + H, pw:pw + W] = x
    out = np.zeros((B, Co, T, H, W), dtype=np.float64)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                patch = xp[:, :, dt:dt + T, dh:dh + H, dw:dw + W]
                out += np.einsum("oc,bcthw->bothw",
                                 w[:, :, dt, dh, dw].astype(np.float64), patch)
    return out + b.reshape(1, -1, 1, 1, 1)


# ---------------------------------------------------------------------------
# conv3d
# ---------------------------------------------------------------------------

def test_conv3d_delta_kernel_is_identity(rng):
    x = Tensor(rng.random((1, 1, 4, 5, 6)).astype(np.float32))
    w = np.zeros((1, 1, 3, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1, 1] = 1.0
    out = nm.conv3d(x, Tensor(w), Tensor(np.zeros(1, np.float32)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv3d_ones_kernel_interior_sums_to_27():
    x = Tensor(np.ones((1, 1, 5, 5, 5), dtype=np.float64))
    w = Tensor(np.ones((1, 1, 3, 3, 3), dtype=np.float64))
    out = nm.conv3d(x, w, Tensor(np.zeros(1, np.float64)))
    interior = out.data[0, 0, 1:-1, 1:-1, 1:-1]
    np.testing.assert_allclose(interior, 27.0)


def test_conv3d_paper_kernel_geometry_preserves_shape(rng):
    x = Tensor(rng.standard_normal((1, 2, 8, 8, 8)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 2, 5, 3, 3)).astype(np.float32))
    out = nm.conv3d(x, w, Tensor(np.zeros(4, np.float32)))
    assert out.shape == (1, 4, 8, 8, 8)


@pytest.mark.parametrize("shape,kshape", [
    ((2, 1, 4, 6, 7), (3, 1, 5, 3, 3)),
    ((1, 3, 5, 4, 5), (8, 3, 3, 3, 3)),
    ((2, 2, 3, 5, 6), (2, 2, 5, 5, 5)),   # generic spatial path
    ((1, 2, 4, 8, 11), (7, 2, 7, 3, 3)),
])
def test_conv3d_matches_reference(rng, shape, kshape):
    x = rng.standard_normal(shape)
    w = rng.standard_normal(kshape)
    b = rng.standard_normal(kshape[0])
    out = nm.conv3d(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, ref_conv3d(x, w, b), atol=1e-10)


def test_conv3d_linearity(rng):
    x = rng.standard_normal((1, 2, 4, 5, 6))
    z = rng.standard_normal((1, 2, 4, 5, 6))
    w = Tensor(rng.standard_normal((3, 2, 3, 3, 3)))
    zero = Tensor(np.zeros(3))
    a, b = 0.7, -1.3
    lhs = nm.conv3d(Tensor(a * x + b * z), w, zero).data
    rhs = a * nm.conv3d(Tensor(x), w, zero).data + b * nm.conv3d(Tensor(z), w, zero).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_conv3d_channel_mismatch_raises(rng):
    x = Tensor(rng.random((1, 3, 4, 4, 4)))
    w = Tensor(rng.random((2, 2, 3, 3, 3)))
    with pytest.raises(ValueError, match="input channels"):
        nm.conv3d(x, w, Tensor(np.zeros(2)))


def test_conv3d_even_kernel_raises(rng):
    x = Tensor(rng.random((1, 1, 4, 4, 4)))
    w = Tensor(rng.random((1, 1, 4, 3, 3)))
    with pytest.raises(ValueError, match="odd"):
        nm.conv3d(x, w, Tensor(np.zeros(1)))


# ---------------------------------------------------------------------------
# maxpool_spatial
# ---------------------------------------------------------------------------

def test_maxpool_single_window():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 1, 2, 2))
    out = nm.maxpool_spatial(x)
    assert out.shape == (1, 1, 1, 1, 1)
    assert out.data[0, 0, 0, 0, 0] == 4.0


def test_maxpool_constant_input_halves_extents():
    x = Tensor(np.full((1, 2, 3, 6, 8), 0.75, dtype=np.float32))
    out = nm.maxpool_spatial(x)
    assert out.shape == (1, 2, 3, 3, 4)
    np.testing.assert_array_equal(out.data, 0.75)


def test_maxpool_canonical_frame_geometry(rng):
    x = Tensor(rng.random((1, 32, 60, 64, 44)).astype(np.float32))
    out = nm.maxpool_spatial(x)
    assert out.shape == (1, 32, 60, 32, 22)


def test_maxpool_odd_extents_partial_windows(rng):
    x = rng.standard_normal((1, 1, 2, 5, 7))
    out = nm.maxpool_spatial(Tensor(x))
    assert out.shape == (1, 1, 2, 3, 4)
    # brute-force window max oracle
    for t in range(2):
        for ho in range(3):
            for wo in range(4):
                window = x[0, 0, t, 2 * ho:2 * ho + 2, 2 * wo:2 * wo + 2]
                assert out.data[0, 0, t, ho, wo] == window.max()


def test_maxpool_bounded_by_input_max(rng):
    x = rng.standard_normal((2, 3, 4, 9, 11))
    out = nm.maxpool_spatial(Tensor(x))
    assert out.data.max() <= x.max()


def test_maxpool_tie_routes_to_first_occurrence():
    x = np.zeros((1, 1, 1, 2, 2))  # all equal: gradient goes to (0, 0)
    t = Tensor(x, requires_grad=True)
    out = nm.maxpool_spatial(t)
    nm.sum_(out).backward()
    expected = np.zeros((1, 1, 1, 2, 2))
    expected[0, 0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(t.grad, expected)


# ---------------------------------------------------------------------------
# fully_connected / leaky_relu
# ---------------------------------------------------------------------------

def test_fully_connected_identity_rows():
    f = Tensor(np.array([1.0, 0.0, 0.0, 0.0]))
    w = Tensor(np.arange(8, dtype=np.float64).reshape(2, 4))
    out = nm.fully_connected(f, w, Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, w.data[:, 0])


def test_fully_connected_zero_input_passes_bias():
    f = Tensor(np.zeros(6))
    out = nm.fully_connected(f, Tensor(np.zeros((2, 6))),
                             Tensor(np.array([0.3, -0.3])))
    np.testing.assert_allclose(out.data, [0.3, -0.3])


def test_fully_connected_128_to_2(rng):
    f = Tensor(rng.standard_normal(128))
    w = Tensor(rng.standard_normal((2, 128)))
    out = nm.fully_connected(f, w, Tensor(np.zeros(2)))
    assert out.shape == (2,)


def test_fully_connected_dim_mismatch():
    with pytest.raises(ValueError, match="feature dim"):
        nm.fully_connected(Tensor(np.zeros(5)), Tensor(np.zeros((2, 4))),
                           Tensor(np.zeros(2)))


def test_leaky_relu_values():
    x = Tensor(np.array([2.0, -2.0, 0.0]))
    out = nm.leaky_relu(x, 0.1)
    np.testing.assert_allclose(out.data, [2.0, -0.2, 0.0])


def test_leaky_relu_slope_range():
    with pytest.raises(ValueError):
        nm.leaky_relu(Tensor(np.zeros(2)), 1.0)
    with pytest.raises(ValueError):
        nm.leaky_relu(Tensor(np.zeros(2)), -0.1)


# ---------------------------------------------------------------------------
# grad_check examples
# ---------------------------------------------------------------------------

def test_grad_check_quadratic():
    x = Tensor(np.array([3.0]))
    err = grad_check(lambda t: nm.sum_(nm.mul(t, t)), x, eps=1e-4)
    assert err < 1e-6


def test_grad_check_linear():
    x = Tensor(np.array([1.0, 2.0, 3.0]))
    err = grad_check(lambda t: nm.sum_(t), x, eps=1e-4)
    assert err < 1e-10


def test_grad_check_nonfinite_raises():
    x = Tensor(np.array([0.0]))

    def bad(t):
        return nm.mul(nm.sum_(t), np.inf)

    with pytest.raises(FloatingPointError):
        grad_check(bad, x, eps=1e-4)


# ---------------------------------------------------------------------------
# per-op gradient checks (double precision, smooth probe points)
# ---------------------------------------------------------------------------

def _weighted(fn):
    """Reduce op output to a fixed random scalar so every output element
    receives a distinct upstream gradient."""
    def wrapped(t):
        out = fn(t)
        coeff = np.random.default_rng(7).standard_normal(out.shape)
        return nm.sum_(nm.mul(out, coeff))
    return wrapped


def _op_under_test(name, r):
    """Build the op with any constants drawn once, so repeated evaluations
    during finite differencing see the same function."""
    if name == "add_broadcast":
        c = Tensor(r.standard_normal((1, 4)))
        return lambda t: nm.add(t, c)
    if name == "sub":
        c = Tensor(r.standard_normal((3, 4)))
        return lambda t: nm.sub(c, t)
    if name == "mul":
        c = Tensor(r.standard_normal((3, 4)))
        return lambda t: nm.mul(t, c)
    if name == "matmul":
        c = Tensor(r.standard_normal((4, 2)))
        return lambda t: nm.matmul(t, c)
    if name == "reshape":
        return lambda t: nm.reshape(t, (4, 3))
    if name == "transpose":
        return lambda t: nm.transpose(t, (1, 0))
    if name == "leaky":
        return lambda t: nm.leaky_relu(t, 0.1)
    if name == "sqrt_offset":
        return lambda t: nm.sqrt(nm.add(nm.mul(t, t), 0.5))
    if name == "logsumexp":
        return lambda t: nm.logsumexp(t, axis=-1)
    if name == "sum_axis":
        return lambda t: nm.sum_(t, axis=1)
    if name == "mean_all":
        return lambda t: nm.mean(t)
    if name == "concat":
        return lambda t: nm.concat([t, nm.mul(t, 2.0)], axis=0)
    if name == "index_axis":
        return lambda t: nm.index_axis(t, 1, 2)
    raise AssertionError(name)


@pytest.mark.parametrize("name", [
    "add_broadcast", "sub", "mul", "matmul", "reshape", "transpose", "leaky",
    "sqrt_offset", "logsumexp", "sum_axis", "mean_all", "concat", "index_axis",
])
def test_grad_per_op(name, rng):
    x = Tensor(rng.standard_normal((3, 4)) + 0.1)
    err = grad_check(_weighted(_op_under_test(name, rng)), x, eps=1e-5)
    assert err < 1e-4, f"{name}: {err}"


def test_grad_gather_index(rng):
    x = Tensor(rng.standard_normal((5, 3)))
    idx = np.array([0, 2, 1, 0, 2])
    err = grad_check(_weighted(lambda t: nm.gather_index(t, idx)), x, eps=1e-5)
    assert err < 1e-4


def test_grad_conv3d_all_sides(rng):
    xv = rng.standard_normal((2, 2, 3, 4, 5))
    wv = rng.standard_normal((3, 2, 3, 3, 3))
    bv = rng.standard_normal(3)

    x, w, b = Tensor(xv.copy()), Tensor(wv.copy()), Tensor(bv.copy())

    def through_x(t):
        return _weighted(lambda q: nm.conv3d(q, Tensor(wv), Tensor(bv)))(t)

    def through_w(t):
        return _weighted(lambda q: nm.conv3d(Tensor(xv), q, Tensor(bv)))(t)

    def through_b(t):
        return _weighted(lambda q: nm.conv3d(Tensor(xv), Tensor(wv), q))(t)

    assert grad_check(through_x, x, eps=1e-5) < 1e-4
    assert grad_check(through_w, w, eps=1e-5) < 1e-4
    assert grad_check(through_b, b, eps=1e-5) < 1e-4


def test_grad_conv3d_generic_spatial_kernel(rng):
    xv = rng.standard_normal((1, 2, 3, 5, 6))
    w = Tensor(rng.standard_normal((2, 2, 3, 5, 5)))
    err = grad_check(_weighted(
        lambda q: nm.conv3d(Tensor(xv), q, Tensor(np.zeros(2)))), w, eps=1e-5)
    assert err < 1e-4


def test_grad_maxpool(rng):
    # well-separated values avoid argmax ties at the probe point
    xv = rng.permutation(np.arange(2 * 1 * 2 * 5 * 6, dtype=np.float64))
    x = Tensor(xv.reshape(2, 1, 2, 5, 6))
    err = grad_check(_weighted(nm.maxpool_spatial), x, eps=1e-4)
    assert err < 1e-4


def test_grad_flatten_max(rng):
    xv = rng.permutation(np.arange(3 * 2 * 24, dtype=np.float64))
    x = Tensor(xv.reshape(3, 2, 4, 3, 2))
    err = grad_check(_weighted(lambda t: nm.flatten_max(t, 2)), x, eps=1e-4)
    assert err < 1e-4


def test_grad_temporal_group_compress(rng):
    x = Tensor(rng.standard_normal((2, 3, 6, 2, 2)))
    wv = rng.standard_normal(3)

    err = grad_check(_weighted(
        lambda t: nm.temporal_group_compress(t, Tensor(wv))), x, eps=1e-5)
    assert err < 1e-4
    w = Tensor(wv.copy())
    xv = rng.standard_normal((2, 3, 6, 2, 2))
    err = grad_check(_weighted(
        lambda t: nm.temporal_group_compress(Tensor(xv), t)), w, eps=1e-5)
    assert err < 1e-4


def test_grad_fully_connected_batched(rng):
    x = Tensor(rng.standard_normal((4, 6)))
    w = Tensor(rng.standard_normal((2, 6)))
    b = Tensor(rng.standard_normal(2))
    err = grad_check(_weighted(lambda t: nm.fully_connected(t, w, b)), x, eps=1e-5)
    assert err < 1e-4
    x2 = Tensor(rng.standard_normal((4, 6)))
    err = grad_check(_weighted(lambda t: nm.fully_connected(x2, t, b)), w, eps=1e-5)
    assert err < 1e-4


def test_fanout_accumulates_both_paths(rng):
    xv = rng.standard_normal((3, 3))
    x = Tensor(xv, requires_grad=True)
    # y = sum(x * x) + sum(x): dy/dx = 2x + 1
    y = nm.add(nm.sum_(nm.mul(x, x)), nm.sum_(x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * xv + 1, atol=1e-12)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_first_step_hand_computed():
    p = {"w": Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)}
    state = AdamState.initialize(p)
    adam_step(p, {"w": np.array([0.5], dtype=np.float32)}, state, lr=1e-3)
    # bias-corrected first step moves by ~lr * g/|g|
    np.testing.assert_allclose(p["w"].data, [0.999], atol=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_is_noop():
    p = {"w": Tensor(np.array([2.5, -1.0], dtype=np.float32), requires_grad=True)}
    state = AdamState.initialize(p)
    adam_step(p, {"w": np.zeros(2, dtype=np.float32)}, state, lr=1e-3)
    np.testing.assert_array_equal(p["w"].data, [2.5, -1.0])


def test_adam_deterministic():
    def run():
        p = {"w": Tensor(np.arange(4, dtype=np.float32), requires_grad=True)}
        state = AdamState.initialize(p, weight_decay=5e-4)
        g = np.array([0.1, -0.2, 0.3, -0.4], dtype=np.float32)
        for _ in range(5):
            adam_step(p, {"w": g}, state, lr=1e-3)
        return p["w"].data.copy()

    np.testing.assert_array_equal(run(), run())


def test_adam_weight_decay_pulls_toward_zero():
    p = {"w": Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)}
    state = AdamState.initialize(p, weight_decay=0.1)
    adam_step(p, {"w": np.zeros(1, dtype=np.float32)}, state, lr=1e-3)
    assert 0 < p["w"].data[0] < 1.0


def test_adam_nonfinite_gradient_raises():
    p = {"w": Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)}
    state = AdamState.initialize(p)
    with pytest.raises(FloatingPointError):
        adam_step(p, {"w": np.array([np.nan], dtype=np.float32)}, state, 1e-3)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_conv3d_bitwise_deterministic(rng):
    x = rng.standard_normal((2, 3, 4, 8, 9)).astype(np.float32)
    w = rng.standard_normal((5, 3, 5, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    a = kernels.conv3d_forward(x, w, b)
    bb = kernels.conv3d_forward(x, w, b)
    assert a.tobytes() == bb.tobytes()


def test_backward_bitwise_deterministic(rng):
    xv = rng.standard_normal((2, 2, 4, 6, 6)).astype(np.float32)
    wv = rng.standard_normal((4, 2, 3, 3, 3)).astype(np.float32)

    def run():
        x = Tensor(xv, requires_grad=True)
        w = Tensor(wv, requires_grad=True)
        out = nm.conv3d(x, w, Tensor(np.zeros(4, np.float32), requires_grad=True))
        nm.sum_(nm.mul(out, out)).backward()
        return x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()
