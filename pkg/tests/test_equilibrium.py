"""Free-energy values, the mirror-descent minimizer, and stationarity checks."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gibbslab.energy import (
    BetaSchedule,
    CallableKernel,
    EnergyModel,
    GreenKernel,
    LogChordKernel,
    StaticPotential,
    w_macro,
)
from gibbslab.equilibrium import (
    directional_derivative_check,
    free_energy,
    free_energy_gradient,
    mean_field_residual,
    minimize_free_energy,
)
from gibbslab.errors import EnergyError, MeasureError, StepSizeFailureError
from gibbslab.measures import GridMeasure, relative_entropy
from gibbslab.spaces import BackgroundCharge, GreenModel, build_space


@pytest.fixture(scope="module")
def torus_model(torus_space, torus_green):
    return EnergyModel(torus_space, GreenKernel(torus_green), BetaSchedule.constant(2.0))


@pytest.fixture(scope="module")
def torus_equilibrium(torus_model, torus_space):
    u = torus_space.nodes[:, 0]
    init = GridMeasure.from_unnormalized(torus_space, 1.0 + 0.4 * np.cos(2.0 * np.pi * u))
    return minimize_free_energy(torus_model, initial=init, tol=1e-12, max_iters=3000)


def test_free_energy_decomposition(torus_model, torus_space):
    mu = GridMeasure.from_unnormalized(
        torus_space, 1.0 + 0.3 * np.sin(2.0 * np.pi * torus_space.nodes[:, 1])
    )
    value = free_energy(torus_model, mu)
    assert_allclose(
        value,
        w_macro(torus_model, mu) + relative_entropy(mu) / 2.0,
        rtol=1e-14,
    )
    frozen = EnergyModel(torus_model.space, torus_model.kernel, BetaSchedule.linear())
    assert free_energy(frozen, mu) == w_macro(frozen, mu)


def test_uniform_charge_equilibrium_is_uniform(torus_equilibrium):
    res = torus_equilibrium
    assert res.converged and res.status == "gap_below_tol"
    assert np.abs(res.measure.density - 1.0).max() < 1e-10
    assert abs(res.value) < 1e-12
    assert res.gap <= 1e-12 * (1.0 + abs(res.value))


def test_trace_monotone(torus_equilibrium):
    trace = np.asarray(torus_equilibrium.trace)
    assert np.all(np.diff(trace[:-1]) <= 0.0)
    assert abs(trace[-1] - trace[-2]) < 1e-9


def test_mean_field_residual_at_equilibrium(torus_model, torus_equilibrium):
    report = mean_field_residual(torus_model, torus_equilibrium.measure)
    assert report.residual < 1e-8
    assert report.tail < 1e-12
    assert report.beta == 2.0


def test_semicircle_density():
    space = build_space("box", 128, bounds=[(-3.0, 3.0)])
    pot = StaticPotential.from_expression(space, "x*x/2")
    model = EnergyModel(space, LogChordKernel(2.0), BetaSchedule.linear(),
                        potentials=[pot])
    result = minimize_free_energy(model, tol=1e-10, max_iters=5000)
    x = space.nodes[:, 0]
    target = np.where(np.abs(x) <= 2.0,
                      np.sqrt(np.maximum(4.0 - x ** 2, 0.0)) / (2.0 * np.pi), 0.0)
    density = result.measure.node_masses / space.cell_volumes
    l1 = float((np.abs(density - target) * space.cell_volumes).sum())
    assert l1 < 0.02
    # symmetric potential on a symmetric grid gives a symmetric profile
    assert_allclose(density, density[::-1], atol=1e-9)


def test_sphere_nonuniform_charge_residual(sphere_space):
    lam = 1.0 + 0.5 * math.sqrt(3.0) * sphere_space.nodes[:, 2]
    green = GreenModel(sphere_space, BackgroundCharge(sphere_space, lam))
    model = EnergyModel(sphere_space, GreenKernel(green), BetaSchedule.constant(4.0))
    result = minimize_free_energy(model, tol=1e-12, max_iters=2000)
    assert result.converged
    report = mean_field_residual(model, result.measure)
    assert report.residual < 1e-3
    assert report.residual < 1e-8  # discrete optimum sits far below the target
    # the equilibrium density leans toward the charge surplus
    north = sphere_space.nodes[:, 2] > 0.5
    assert result.measure.density[north].mean() > 1.0


def test_directional_derivative_random_pairs(torus_model, torus_space, rng):
    for _ in range(25):
        mu = GridMeasure.from_unnormalized(
            torus_space, np.exp(0.3 * rng.normal(size=torus_space.n_nodes)))
        nu = GridMeasure.from_unnormalized(
            torus_space, np.exp(0.3 * rng.normal(size=torus_space.n_nodes)))
        report = directional_derivative_check(torus_model, mu, nu)
        assert report.consistent
        # one-sided differences converge at first order
        if report.errors[1e-3] > 1e-11:
            assert report.errors[1e-4] < report.errors[1e-3]


def test_directional_derivative_vanishes_at_minimizer(torus_model, torus_equilibrium,
                                                      torus_space, rng):
    for _ in range(10):
        nu = GridMeasure.from_unnormalized(
            torus_space, np.exp(0.3 * rng.normal(size=torus_space.n_nodes)))
        report = directional_derivative_check(torus_model, torus_equilibrium.measure, nu)
        assert abs(report.analytic) < 1e-6


def test_gradient_matches_componentwise_fd(torus_model, torus_space):
    mu = GridMeasure.from_unnormalized(
        torus_space, 1.0 + 0.2 * np.cos(2.0 * np.pi * torus_space.nodes[:, 0]))
    grad = free_energy_gradient(torus_model, mu)
    assert grad.shape == (torus_space.n_nodes,)
    assert np.all(np.isfinite(grad))


def test_minimize_guards(torus_model, torus_space, circle_space):
    other = GridMeasure.uniform(circle_space)
    with pytest.raises(MeasureError):
        minimize_free_energy(torus_model, initial=other)
    zeros = np.ones(torus_space.n_nodes)
    zeros[0] = 0.0
    flat = GridMeasure.from_unnormalized(torus_space, zeros)
    with pytest.raises(MeasureError):
        minimize_free_energy(torus_model, initial=flat)
    k3 = CallableKernel(lambda sp, *arrays: np.zeros(arrays[0].shape[0]), arity=3)
    with pytest.raises(EnergyError):
        minimize_free_energy(EnergyModel(torus_space, k3, BetaSchedule.constant(1.0)))


def test_nonfinite_gradient_raises(torus_space):
    nan_kernel = CallableKernel(
        lambda sp, a, b: np.full((a.shape[0], b.shape[1]), np.nan))
    model = EnergyModel(torus_space, nan_kernel, BetaSchedule.constant(1.0))
    with pytest.raises(StepSizeFailureError):
        minimize_free_energy(model, max_iters=10)


def test_mean_field_residual_guards(torus_model, torus_space, torus_green,
                                    circle_space):
    mu = GridMeasure.uniform(torus_space)
    plain = EnergyModel(torus_space, LogChordKernel(), BetaSchedule.constant(2.0))
    with pytest.raises(EnergyError):
        mean_field_residual(plain, mu)
    frozen = EnergyModel(torus_space, GreenKernel(torus_green), BetaSchedule.linear())
    with pytest.raises(EnergyError):
        mean_field_residual(frozen, mu)
    with pytest.raises(MeasureError):
        mean_field_residual(torus_model, GridMeasure.uniform(circle_space))
    holey = np.ones(torus_space.n_nodes)
    holey[3] = 0.0
    with pytest.raises(MeasureError):
        mean_field_residual(torus_model, GridMeasure.from_unnormalized(torus_space, holey))
