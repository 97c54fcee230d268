import numpy as np
import pytest
from numpy.testing import assert_allclose

from flowlik.models import (ConvolutionMode, ConvolutionPolicy,
                            ExponentialModel, GammaModel)
from flowlik.quadrature import kfold_logpdf_quad

QUAD = ConvolutionPolicy(mode=ConvolutionMode.NUMERIC_QUADRATURE)


@pytest.mark.parametrize("k", [2, 5, 10])
def test_gamma_closure_vs_quadrature(k):
    g = GammaModel(0.6, 526.32)
    xs = np.array([0.25, 0.5, 1.0, 2.0, 4.0]) * k * g.mean()
    q = kfold_logpdf_quad(g, k, xs)
    c = g.kfold_logpdf(k, xs)
    assert np.max(np.abs(np.expm1(q - c))) < 1e-8


def test_reference_point_k10():
    # matches the closed form at the mean-scale duration of a 10-fold sum
    g = GammaModel(0.6, 526.32)
    q = kfold_logpdf_quad(g, 10, 0.0114)
    assert_allclose(np.exp(q), np.exp(g.kfold_logpdf(10, 0.0114)), rtol=1e-8)


def test_exponential_erlang_vs_quadrature():
    e = ExponentialModel(526.32)
    xs = np.array([0.002, 0.006, 0.02])
    q = kfold_logpdf_quad(e, 3, xs)
    assert np.max(np.abs(np.expm1(q - e.kfold_logpdf(3, xs)))) < 1e-8


def test_policy_dispatch_and_k1():
    g = GammaModel(0.6, 526.32)
    assert g.kfold_logpdf(1, 0.001, QUAD) == pytest.approx(g.logpdf(0.001))
    via_policy = g.kfold_logpdf(4, 0.005, QUAD)
    direct = kfold_logpdf_quad(g, 4, 0.005)
    assert via_policy == pytest.approx(direct)


def test_depth_cap():
    g = GammaModel(0.6, 526.32)
    with pytest.raises(ValueError):
        kfold_logpdf_quad(g, 17, 0.01, QUAD)
    with pytest.raises(ValueError):
        kfold_logpdf_quad(g, 0, 0.01)
    with pytest.raises(ValueError):
        kfold_logpdf_quad(g, 2, -0.5)
