"""Diagonal Gaussian KL and reparameterized sampling against MC / hand oracles."""

import numpy as np
import pytest

from dtam.errors import DomainError, ShapeError
from dtam.numcore import (
    DiagGaussian,
    Tensor,
    gaussian_reparam_sample,
    grad_check,
    kl_diag_gaussian,
)


def test_kl_self_is_zero():
    q = DiagGaussian(Tensor([0.3, -1.2, 4.0]), Tensor([0.5, 1.0, 2.0]))
    assert kl_diag_gaussian(q, q).item() == pytest.approx(0.0, abs=1e-14)


def test_kl_hand_values():
    # KL(N(0,1) || N(1,1)) = 0.5
    q = DiagGaussian(Tensor([0.0]), Tensor([1.0]))
    p = DiagGaussian(Tensor([1.0]), Tensor([1.0]))
    assert kl_diag_gaussian(q, p).item() == pytest.approx(0.5, abs=1e-12)
    # KL(N(0,4) || N(0,1)) = -ln 2 + (4 - 1)/2
    q2 = DiagGaussian(Tensor([0.0]), Tensor([2.0]))
    p2 = DiagGaussian(Tensor([0.0]), Tensor([1.0]))
    assert kl_diag_gaussian(q2, p2).item() == pytest.approx(-np.log(2.0) + 1.5, abs=1e-12)


def test_kl_matches_monte_carlo():
    # Oracle: KL = E_q[log q(x) - log p(x)] estimated from 2e6 samples.
    rng = np.random.default_rng(42)
    mq, sq = np.array([0.5, -1.0, 2.0]), np.array([0.7, 1.3, 0.4])
    mp, sp = np.array([0.0, 0.5, 1.5]), np.array([1.1, 0.9, 1.0])
    n = 2_000_000
    x = mq + sq * rng.standard_normal((n, 3))

    def logpdf(x, m, s):
        return (-0.5 * ((x - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)).sum(axis=1)

    diffs = logpdf(x, mq, sq) - logpdf(x, mp, sp)
    mc = diffs.mean()
    se = diffs.std(ddof=1) / np.sqrt(n)
    got = kl_diag_gaussian(
        DiagGaussian(Tensor(mq), Tensor(sq)), DiagGaussian(Tensor(mp), Tensor(sp))
    ).item()
    assert abs(got - mc) < 5 * se + 1e-6


def test_kl_nonnegative_over_random_pairs():
    rng = np.random.default_rng(8)
    for _ in range(300):
        d = rng.integers(1, 6)
        q = DiagGaussian(Tensor(rng.normal(size=d)), Tensor(rng.uniform(0.1, 3.0, d)))
        p = DiagGaussian(Tensor(rng.normal(size=d)), Tensor(rng.uniform(0.1, 3.0, d)))
        assert kl_diag_gaussian(q, p).item() >= -1e-12


def test_kl_gradients():
    rng = np.random.default_rng(17)
    mq = Tensor(rng.normal(size=3), requires_grad=True)
    sq = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    mp = Tensor(rng.normal(size=3), requires_grad=True)
    sp = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)

    def f():
        return kl_diag_gaussian(DiagGaussian(mq, sq), DiagGaussian(mp, sp))

    rep = grad_check(f, {"mq": mq, "sq": sq, "mp": mp, "sp": sp}, tolerance=1e-6)
    assert rep.passed, rep.max_rel_error


def test_reparam_sample_value_and_gradient():
    m = Tensor([1.0, 2.0], requires_grad=True)
    s = Tensor([0.5, 3.0], requires_grad=True)
    g = DiagGaussian(m, s)
    eps = np.array([2.0, -1.0])
    out = gaussian_reparam_sample(g, eps)
    np.testing.assert_allclose(out.data, [2.0, -1.0])
    out.sum().backward()
    np.testing.assert_allclose(m.grad, [1.0, 1.0])
    np.testing.assert_allclose(s.grad, eps)


def test_reparam_sample_matches_target_moments():
    rng = np.random.default_rng(23)
    g = DiagGaussian(Tensor([3.0]), Tensor([0.5]))
    xs = np.array([
        gaussian_reparam_sample(g, rng.standard_normal(1)).data[0]
        for _ in range(20000)
    ])
    assert abs(xs.mean() - 3.0) < 0.02
    assert abs(xs.std() - 0.5) < 0.02


def test_zero_noise_returns_mean():
    g = DiagGaussian(Tensor([4.0, -2.0]), Tensor([9.0, 0.1]))
    np.testing.assert_array_equal(gaussian_reparam_sample(g, np.zeros(2)).data, [4.0, -2.0])


def test_validation_errors():
    with pytest.raises(DomainError):
        DiagGaussian(Tensor([0.0]), Tensor([0.0]))
    with pytest.raises(ShapeError):
        DiagGaussian(Tensor([0.0, 1.0]), Tensor([1.0]))
    g = DiagGaussian(Tensor([0.0]), Tensor([1.0]))
    with pytest.raises(ShapeError):
        gaussian_reparam_sample(g, np.zeros(3))
    with pytest.raises(ShapeError):
        kl_diag_gaussian(g, DiagGaussian(Tensor([0.0, 0.0]), Tensor([1.0, 1.0])))
