import numpy as np
import pytest

from iqaprobe import autodiff as ad
from oracles import conv2d_loops, finite_diff_grad


def grad_of(fn, x, coords=None):
    """Analytic gradient of a Tensor-valued function at ndarray x."""
    x_leaf = ad.leaf(x)
    root = fn(x_leaf)
    return ad.backward(root, x_leaf)


def check_grad(fn_graph, x, rtol=1e-3, step=1e-4, coords=None, frac=1.0):
    g = grad_of(fn_graph, x).ravel()

    def plain(arr):
        return float(fn_graph(ad.leaf(arr)).value)

    fd = finite_diff_grad(plain, x, step=step, coords=coords)
    ok = 0
    for i, d in fd.items():
        err = abs(g[i] - d) / (abs(d) + 1e-8)
        if err <= rtol:
            ok += 1
    assert ok >= frac * len(fd), f"{ok}/{len(fd)} coordinates within tolerance"


def test_forward_sum_of_ones():
    t = ad.leaf(np.ones((2, 2)))
    assert ad.reduce_sum(t).item() == 4.0


def test_forward_global_max():
    t = ad.leaf(np.array([0.1, 0.9, 0.4]))
    assert ad.tmax(t).item() == 0.9


def test_backward_mean_gradient():
    x = np.arange(10, dtype=float)
    g = grad_of(ad.mean, x)
    np.testing.assert_allclose(g, np.full(10, 0.1), atol=1e-15)


def test_backward_squared_norm():
    x = np.array([3.0, 4.0])
    g = grad_of(lambda t: ad.reduce_sum(t * t), x)
    np.testing.assert_allclose(g, [6.0, 8.0], atol=1e-12)


def test_backward_unreachable_leaf():
    a = ad.leaf(np.ones(3))
    b = ad.leaf(np.ones(3))
    root = ad.reduce_sum(a * 2.0)
    with pytest.raises(ad.GraphError):
        ad.backward(root, b)


def test_shape_mismatch_names_shapes():
    a = ad.leaf(np.ones((2, 3)))
    b = ad.leaf(np.ones((4, 5)))
    with pytest.raises(ad.ShapeError, match=r"add.*\(2, 3\).*\(4, 5\)"):
        ad.add(a, b)


@pytest.mark.parametrize(
    "name,fn",
    [
        ("add", lambda t: ad.reduce_sum(t + t * 0.3)),
        ("subtract", lambda t: ad.reduce_sum(t - 2.0 * t * t)),
        ("multiply", lambda t: ad.reduce_sum(t * (t + 1.0))),
        ("divide", lambda t: ad.reduce_sum(t / (t + 2.0))),
        ("power", lambda t: ad.reduce_sum(t**3.0)),
        ("exp", lambda t: ad.reduce_sum(ad.exp(t))),
        ("log", lambda t: ad.reduce_sum(ad.log(t + 2.0))),
        ("sqrt", lambda t: ad.reduce_sum(ad.sqrt(t + 2.0))),
        ("negate", lambda t: ad.reduce_sum(-t * t)),
        ("mean", ad.mean),
        ("channel_weighted_sum", None),
    ],
)
def test_primitive_gradients_match_fd(name, fn, rng):
    if name == "channel_weighted_sum":
        x = rng.uniform(0.2, 0.8, (5, 4, 3))
        fn = lambda t: ad.reduce_sum(ad.channel_weighted_sum(t, [0.3, 0.5, 0.2]) ** 2.0)
    else:
        x = rng.uniform(0.2, 0.8, (4, 5))
    check_grad(fn, x)


def test_absolute_gradient_away_from_zero(rng):
    x = rng.uniform(0.3, 0.9, (4, 4)) * rng.choice([-1.0, 1.0], (4, 4))
    check_grad(lambda t: ad.reduce_sum(ad.absolute(t)), x)


def test_max_subgradient_first_winner():
    x = np.array([1.0, 3.0, 3.0, 2.0])
    g = grad_of(ad.tmax, x)
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0, 0.0])


def test_channel_max_gradient_and_value(rng):
    x = rng.uniform(0, 1, (6, 5, 3))
    t = ad.leaf(x)
    cm = ad.channel_max(t)
    np.testing.assert_allclose(cm.value, x.max(axis=(0, 1)), atol=0)
    g = ad.backward(ad.reduce_sum(cm * np.array([1.0, 2.0, 3.0])), t)
    for c in range(3):
        flat = x[:, :, c].ravel()
        idx = int(np.argmax(flat))
        expected = np.zeros(flat.size)
        expected[idx] = c + 1.0
        np.testing.assert_array_equal(g[:, :, c].ravel(), expected)


def test_crop_gradient_scatter(rng):
    x = rng.uniform(0, 1, (5, 5, 2))
    sl = (slice(1, 4), slice(0, 3), slice(None))
    check_grad(lambda t: ad.reduce_sum(ad.crop(t, sl) ** 2.0), x)


def test_stack_and_concat_gradients(rng):
    x = rng.uniform(0.1, 0.9, 6)

    def fn(t):
        s1 = ad.mean(ad.crop(t, (slice(0, 3),)))
        s2 = ad.reduce_sum(ad.crop(t, (slice(3, 6),)) ** 2.0)
        v = ad.stack_scalars([s1, s2, s1 * s2])
        w = ad.concat1d([v, v * 2.0])
        return ad.reduce_sum(w * w)

    check_grad(fn, x)


class TestConv2d:
    def test_identity_kernel_same_padding(self, rng):
        x = rng.uniform(0, 1, (6, 7, 1))
        k = np.zeros((3, 3))
        k[1, 1] = 1.0
        out = ad.conv2d(ad.leaf(x), k, padding="same")
        np.testing.assert_allclose(out.value, x, atol=0)

    def test_sum_kernel(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        out = ad.conv2d(ad.leaf(x), np.ones((2, 2)))
        assert out.value.shape == (1, 1, 1)
        assert out.value[0, 0, 0] == 10.0

    def test_matches_loop_oracle(self, rng):
        x = rng.uniform(-1, 1, (5, 5, 1))
        k = rng.uniform(-1, 1, (3, 3))
        got = ad.conv2d(ad.leaf(x), k).value
        want = conv2d_loops(x, k)
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("padding", ["valid", "same"])
    def test_multichannel_matches_oracle(self, rng, stride, padding):
        x = rng.uniform(-1, 1, (7, 6, 3))
        k = rng.uniform(-1, 1, (3, 3, 3, 4))
        got = ad.conv2d(ad.leaf(x), k, stride=stride, padding=padding).value
        want = conv2d_loops(x, k, stride=stride, padding=padding)
        np.testing.assert_allclose(got, want, atol=1e-12)
        ho = (x.shape[0] + (2 if padding == "same" else 0) - 3) // stride + 1
        assert got.shape[0] == ho

    def test_channel_mismatch_errors(self, rng):
        x = rng.uniform(0, 1, (5, 5, 3))
        with pytest.raises(ad.ShapeError, match="channels"):
            ad.conv2d(ad.leaf(x), np.ones((3, 3, 2, 1)))

    @pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "valid"), (1, "same"), (2, "same")])
    def test_gradient_matches_fd(self, rng, stride, padding):
        x = rng.uniform(0.1, 0.9, (6, 6, 2))
        k = rng.uniform(-1, 1, (3, 3, 2, 2))
        check_grad(
            lambda t: ad.reduce_sum(ad.conv2d(t, k, stride=stride, padding=padding) ** 2.0),
            x,
        )


def test_backward_linearity(rng):
    x = rng.uniform(0.2, 0.8, (4, 4))

    def j1(t):
        return ad.reduce_sum(t * t)

    def j2(t):
        return ad.mean(ad.exp(t))

    a, b = 1.7, -0.4
    g1 = grad_of(j1, x)
    g2 = grad_of(j2, x)
    gc = grad_of(lambda t: a * j1(t) + b * j2(t), x)
    np.testing.assert_allclose(gc, a * g1 + b * g2, atol=1e-12)


def test_determinism(rng):
    x = rng.uniform(0, 1, (8, 8, 1))

    def run():
        t = ad.leaf(x)
        root = ad.mean(ad.conv2d(t, ad.gaussian_kernel(3, 1.0), padding="same") ** 2.0)
        return float(root.value), ad.backward(root, t)

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert (g1 == g2).all()
