import numpy as np
import pytest

from thermogyro import loss as L


def berhu_oracle(e, c):
    # scalar reference, written independently of the vectorized version
    a = abs(e)
    if c == 0 or a <= c:
        return a
    return (e * e + c * c) / (2 * c)


class TestAdaptiveC:
    def test_examples(self):
        assert L.adaptive_c([0.1, 0.5, 0.2], [0, 0, 0]) == pytest.approx(0.1, abs=1e-15)
        assert L.adaptive_c([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert L.adaptive_c([0.7], [0.0]) == pytest.approx(0.14, abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            L.adaptive_c([], [])


class TestBerhu:
    def test_linear_branch(self):
        assert float(L.berhu(0.1, 0.2)) == pytest.approx(0.1, abs=1e-15)

    def test_quadratic_branch(self):
        assert float(L.berhu(0.5, 0.2)) == pytest.approx(0.725, abs=1e-15)

    def test_boundary(self):
        assert float(L.berhu(0.2, 0.2)) == pytest.approx(0.2, abs=1e-15)
        assert (0.2**2 + 0.2**2) / (2 * 0.2) == pytest.approx(0.2, abs=1e-15)

    def test_zero_threshold_is_abs(self):
        np.testing.assert_array_equal(L.berhu(np.array([-1.5, 0.0, 2.0]), 0.0), [1.5, 0.0, 2.0])

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            L.berhu(1.0, -0.1)

    def test_gradient_examples(self):
        assert float(L.berhu_grad(0.1, 0.2)) == 1.0
        assert float(L.berhu_grad(0.5, 0.2)) == pytest.approx(2.5, abs=1e-15)
        assert float(L.berhu_grad(-0.5, 0.2)) == pytest.approx(-2.5, abs=1e-15)
        assert float(L.berhu_grad(0.0, 0.2)) == 0.0

    def test_random_properties(self):
        rng = np.random.default_rng(0)
        e = rng.uniform(-3, 3, 10_000)
        c = rng.uniform(1e-3, 2, 10_000)
        values = np.array([L.berhu(ei, ci) for ei, ci in zip(e, c)]).ravel()
        np.testing.assert_allclose(values, [berhu_oracle(ei, ci) for ei, ci in zip(e, c)], rtol=1e-15)
        assert np.all(values >= np.abs(e))
        inside = np.abs(e) <= c
        np.testing.assert_array_equal(values[inside], np.abs(e[inside]))
        assert np.all(values[~inside] > np.abs(e[~inside]))

    def test_continuity_and_c1_at_threshold(self):
        rng = np.random.default_rng(1)
        for c in rng.uniform(1e-3, 2, 1000):
            for s in (1.0, -1.0):
                lin = abs(s * c)
                quad = ((s * c) ** 2 + c * c) / (2 * c)
                assert abs(lin - quad) <= 1e-12
                # slopes of the two branches at |e| = c: sign(e) and e / c
                assert abs(np.sign(s) - s * c / c) <= 1e-12
                assert float(L.berhu_grad(s * c, c)) == np.sign(s)

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            c = rng.uniform(0.05, 1)
            e = rng.uniform(-3, 3)
            if abs(abs(e) - c) < 1e-3:
                continue
            h = 1e-6
            fd = (berhu_oracle(e + h, c) - berhu_oracle(e - h, c)) / (2 * h)
            assert float(L.berhu_grad(e, c)) == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestBatchLoss:
    def test_perfect(self):
        value, grad = L.batch_loss([0.3, -0.2], [0.3, -0.2])
        assert value == 0.0 and not grad.any()

    def test_two_element_example(self):
        value, grad = L.batch_loss([0.1, 0.5], [0.0, 0.0])
        assert value == pytest.approx(0.7, abs=1e-12)
        np.testing.assert_allclose(grad, [1.0 / 2, (0.5 / 0.1) / 2], rtol=1e-12)

    def test_singleton(self):
        value, _ = L.batch_loss([1.0], [0.0])
        assert value == pytest.approx(2.6, abs=1e-12)

    def test_gradient_with_frozen_threshold(self):
        rng = np.random.default_rng(3)
        pred, targ = rng.normal(size=16), rng.normal(size=16)
        c = L.adaptive_c(pred, targ)
        _, grad = L.batch_loss(pred, targ)
        fd = np.empty(16)
        for i in range(16):
            p, m = pred.copy(), pred.copy()
            p[i] += 1e-6
            m[i] -= 1e-6
            fd[i] = (np.mean(L.berhu(p - targ, c)) - np.mean(L.berhu(m - targ, c))) / 2e-6
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            L.batch_loss([1.0, 2.0], [1.0])


class TestMSE:
    def test_examples(self):
        assert L.mse_loss([1.0, -1.0], [0.0, 0.0])[0] == 1.0
        assert L.mse_loss([0.0, 0.0], [0.0, 0.0])[0] == 0.0
        assert L.mse_loss([0.1, 0.3], [0.0, 0.0])[0] == pytest.approx(0.05, abs=1e-15)

    def test_gradient(self):
        _, grad = L.mse_loss([0.1, 0.3], [0.0, 0.0])
        np.testing.assert_allclose(grad, [0.1, 0.3], rtol=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            L.mse_loss([], [])
