import numpy as np
import pytest

from c2clab.errors import InvalidInput
from c2clab import numerics as nm
from c2clab.numerics import Tensor, hsic, median_bandwidth


def brute_raw_hsic(x, y, kernel_x, kernel_y):
    """Oracle: explicit kernel matrices and trace(K H L H) / (n-1)^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]

    def gram(values, kind):
        if kind == "linear":
            return values @ values.T
        dists = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                dists[i, j] = np.sum((values[i] - values[j]) ** 2)
        pair = [np.sqrt(dists[i, j]) for i in range(n) for j in range(i + 1, n)]
        sigma = np.median(pair) if pair else 0.0
        if sigma <= 0:
            sigma = 1.0
        return np.exp(-dists / (2.0 * sigma * sigma))

    k = gram(x, kernel_x)
    l = gram(y, kernel_y)
    h = np.eye(n) - np.ones((n, n)) / n
    return float(np.trace(k @ h @ l @ h)) / (n - 1) ** 2


@pytest.mark.parametrize("kernel", ["gaussian_median", "linear"])
def test_raw_estimator_matches_brute_force(kernel):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=(8, 3))
        y = rng.normal(size=(8, 2))
        got = hsic(Tensor(x), Tensor(y), kernel_x=kernel, normalized=False).item()
        want = brute_raw_hsic(x, y, kernel, kernel)
        assert abs(got - want) < 1e-10


def test_mixed_kernels_match_brute_force():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(8, 4))
    y = nm.one_hot(rng.integers(0, 3, size=8), 3)
    got = hsic(Tensor(x), Tensor(y), kernel_x="gaussian_median", kernel_y="linear",
               normalized=False).item()
    want = brute_raw_hsic(x, y, "gaussian_median", "linear")
    assert abs(got - want) < 1e-10


def test_constant_input_gives_zero():
    rng = np.random.default_rng(7)
    x = np.ones((6, 3)) * 2.5
    y = rng.normal(size=(6, 2))
    assert abs(hsic(Tensor(x), Tensor(y)).item()) < 1e-6


def test_identical_inputs_normalize_to_one():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(10, 4))
    val = hsic(Tensor(x), Tensor(x)).item()
    assert val == pytest.approx(1.0, abs=1e-6)


def test_symmetry_and_permutation_invariance():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(9, 3))
    y = rng.normal(size=(9, 5))
    a = hsic(Tensor(x), Tensor(y)).item()
    b = hsic(Tensor(y), Tensor(x)).item()
    assert a == pytest.approx(b, abs=1e-12)
    perm = rng.permutation(9)
    c = hsic(Tensor(x[perm]), Tensor(y[perm])).item()
    assert a == pytest.approx(c, abs=1e-12)


def test_normalized_value_in_unit_interval():
    rng = np.random.default_rng(13)
    for _ in range(10):
        x = rng.normal(size=(7, 2))
        y = rng.normal(size=(7, 3))
        v = hsic(Tensor(x), Tensor(y)).item()
        assert -1e-9 <= v <= 1.0 + 1e-9


def test_independence_behaviour_large_sample():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(512, 2))
    y = rng.normal(size=(512, 2))
    assert hsic(Tensor(x), Tensor(y)).item() < 0.05
    assert hsic(Tensor(x), Tensor(x)).item() > 0.5


def test_small_batch_rejected():
    with pytest.raises(InvalidInput):
        hsic(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))))


def test_empty_feature_slice_gives_zero():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(4, 0))
    y = rng.normal(size=(4, 3))
    assert hsic(Tensor(x), Tensor(y)).item() == 0.0


def test_hsic_gradcheck():
    rng = np.random.default_rng(19)
    x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    y = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
    bw = median_bandwidth(x.data)  # frozen, as in the analytic gradient

    def build():
        return hsic(x, y, kernel_x="gaussian_median", kernel_y="linear", bandwidth_x=bw)

    report = nm.gradcheck(build, {"x": x, "y": y}, eps=1e-5, tol=1e-5)
    assert report.passed, report.as_dict()


def test_hsic_gradcheck_both_gaussian():
    rng = np.random.default_rng(21)
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    y = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    bwx, bwy = median_bandwidth(x.data), median_bandwidth(y.data)

    def build():
        return hsic(x, y, bandwidth_x=bwx, bandwidth_y=bwy)

    report = nm.gradcheck(build, {"x": x, "y": y}, eps=1e-5, tol=1e-5)
    assert report.passed, report.as_dict()


def test_median_bandwidth_constant_rows_fallback():
    assert median_bandwidth(np.ones((5, 3))) == 1.0
