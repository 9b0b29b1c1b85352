"""Metropolis chains against exact enumerations and closed-form marginals."""

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chi2 as chi2_dist

from gibbslab.energy import (
    BetaSchedule,
    CallableKernel,
    ConstantKernel,
    EnergyModel,
    FiniteEnergyModel,
    GreenKernel,
    LogChordKernel,
    StaticPotential,
)
from gibbslab.errors import EnergyError, EnumerationCapError, TrappedChainError
from gibbslab.measures import FiniteSpace
from gibbslab.sampler import enumerate_gibbs, mcmc_run
from gibbslab.spaces import build_space


@pytest.fixture(scope="module")
def four_atom_model():
    space = FiniteSpace([0.4, 0.3, 0.2, 0.1])
    g = np.array([
        [0.0, 1.0, 0.5, -0.3],
        [1.0, 0.2, 0.8, 0.1],
        [0.5, 0.8, 0.0, 0.4],
        [-0.3, 0.1, 0.4, 0.6],
    ])
    return FiniteEnergyModel(space, BetaSchedule.constant(1.0), pair_matrix=g)


def _batch_z(values, exact, batches=50):
    values = np.asarray(values, dtype=float)
    usable = len(values) // batches * batches
    means = values[:usable].reshape(batches, -1).mean(axis=1)
    se = means.std(ddof=1) / math.sqrt(batches)
    return (values.mean() - exact) / se


# -- finite chains vs exact enumeration ---------------------------------------------


def test_enumeration_normalizes(four_atom_model):
    table = enumerate_gibbs(four_atom_model, 6)
    assert table.counts.shape == (84, 4)
    assert abs(np.exp(table.log_probs).sum() - 1.0) < 1e-12
    assert np.all(table.counts.sum(axis=1) == 6)
    marginal = table.marginal()
    assert abs(marginal.sum() - 1.0) < 1e-12


def test_free_case_enumeration_is_multinomial(four_atom_model):
    # zero interaction: the Gibbs measure is the bare product measure
    space = four_atom_model.space
    free = FiniteEnergyModel(space, BetaSchedule.constant(1.0),
                             pair_matrix=np.zeros((4, 4)))
    table = enumerate_gibbs(free, 5)
    assert abs(table.log_partition) < 1e-12
    np.testing.assert_allclose(table.marginal(), space.probs, atol=1e-13)


def test_finite_chain_matches_enumeration(four_atom_model):
    n = 6
    exact = enumerate_gibbs(four_atom_model, n)
    result = mcmc_run(four_atom_model, n, steps=200_000, seed=77, thin=1)
    occupation = (result.samples == 0).sum(axis=1) / n
    z_occ = _batch_z(occupation, exact.expectation(lambda c: c[0] / n))
    z_energy = _batch_z(result.energies,
                        exact.expectation(lambda c: four_atom_model.w_counts(c, n)))
    assert abs(z_occ) < 3.0
    assert abs(z_energy) < 3.0


def test_seed_determinism_byte_exact(four_atom_model):
    a = mcmc_run(four_atom_model, 6, steps=20_000, seed=123)
    b = mcmc_run(four_atom_model, 6, steps=20_000, seed=123)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.energies.tobytes() == b.energies.tobytes()
    c = mcmc_run(four_atom_model, 6, steps=20_000, seed=124)
    assert a.samples.tobytes() != c.samples.tobytes()


def test_detailed_balance_flow_counts(four_atom_model):
    result = mcmc_run(four_atom_model, 6, steps=120_000, seed=31, thin=1, burn_in=0.1)
    samples = result.samples
    flows = np.zeros((4, 4))
    changed = samples[1:] != samples[:-1]
    rows, cols = np.nonzero(changed)
    for r, c in zip(rows, cols):
        flows[samples[r, c], samples[r + 1, c]] += 1
    for a in range(4):
        for b in range(a + 1, 4):
            total = flows[a, b] + flows[b, a]
            if total == 0:
                continue
            assert abs(flows[a, b] - flows[b, a]) <= 3.0 * math.sqrt(total)


# -- continuous chains ---------------------------------------------------------------


def test_circle_potential_marginal_chi_squared(circle_space):
    pot = StaticPotential(lambda pts: np.cos(pts[:, 0]))
    model = EnergyModel(circle_space, ConstantKernel(0.0),
                        BetaSchedule.constant(2.0), potentials=[pot])
    result = mcmc_run(model, n=4, steps=400_000, seed=11, thin=40)
    angles = result.samples[..., 0].ravel()
    z = quad(lambda t: math.exp(-2.0 * math.cos(t)), 0.0, 2.0 * np.pi)[0]
    bins = np.linspace(0.0, 2.0 * np.pi, 13)
    observed, _ = np.histogram(angles, bins)
    probs = np.array([
        quad(lambda t: math.exp(-2.0 * math.cos(t)) / z, bins[i], bins[i + 1])[0]
        for i in range(12)
    ])
    expected = probs * angles.size
    statistic = float(((observed - expected) ** 2 / expected).sum())
    assert statistic < chi2_dist.ppf(0.99, 11)


def test_repulsive_pair_distance(circle_space):
    # two log-gas particles at coupling 2: gap density ~ sin(gap/2)^(1/2)
    model = EnergyModel(circle_space, LogChordKernel(), BetaSchedule.constant(1.0))
    result = mcmc_run(model, n=2, steps=200_000, seed=9, thin=25)
    gaps = np.array([
        float(circle_space.geodesic(s[0], s[1])[0, 0]) for s in result.samples
    ])
    weight = lambda d: math.sin(d / 2.0) ** 0.5
    exact = (quad(lambda d: d * weight(d), 0.0, np.pi)[0]
             / quad(weight, 0.0, np.pi)[0])
    assert abs(_batch_z(gaps, exact)) < 3.0
    assert gaps.mean() > np.pi / 2.0  # strictly more spread than independent pairs


def test_box_reference_density_is_respected():
    space = build_space("box", 64, bounds=[(-4.0, 4.0)], density="exp(-x*x/2)")
    model = EnergyModel(space, ConstantKernel(0.0), BetaSchedule.constant(1.0))
    result = mcmc_run(model, n=2, steps=150_000, seed=21, thin=20)
    xs = result.samples[..., 0].ravel()
    assert abs(_batch_z(xs, 0.0)) < 3.5
    assert abs(xs.var() - 1.0) < 0.1


def test_sphere_and_torus_chains(sphere_space, torus_space, torus_green):
    green = EnergyModel(torus_space, GreenKernel(torus_green), BetaSchedule.constant(2.0))
    res = mcmc_run(green, n=8, steps=4000, seed=3)
    assert res.samples.shape[1:] == (8, 2)
    assert 0.0 < res.acceptance_rate <= 1.0
    assert np.all((res.samples >= 0.0) & (res.samples < 1.0))
    pot = StaticPotential(lambda pts: pts[:, 2])
    sp_model = EnergyModel(sphere_space, ConstantKernel(0.0),
                           BetaSchedule.constant(1.0), potentials=[pot])
    res2 = mcmc_run(sp_model, n=6, steps=4000, seed=4)
    norms = np.linalg.norm(res2.samples, axis=-1)
    assert np.abs(norms - 1.0).max() < 1e-12
    # the linear potential pushes mass toward the south pole
    assert res2.samples[..., 2].mean() < 0.0


# -- safety rails ----------------------------------------------------------------------


def test_trapped_chain_raises():
    space = build_space("box", 32, bounds=[(-1.0, 1.0)])
    model = EnergyModel(space, ConstantKernel(0.0), BetaSchedule.constant(1.0))
    with pytest.raises(TrappedChainError):
        mcmc_run(model, n=2, steps=150_000, seed=1, proposal_scale=1e9, burn_in=0.0)


def test_cache_coherence_guard(circle_space):
    calls = {"count": 0}

    def drifting(space, a, b):
        calls["count"] += 1
        scale = 1.5 if calls["count"] > 500 else 1.0
        return scale * np.cos(a[..., 0] - b[..., 0])

    model = EnergyModel(circle_space, CallableKernel(drifting),
                        BetaSchedule.constant(1.0))
    with pytest.raises(EnergyError, match="drifted"):
        mcmc_run(model, n=6, steps=5000, seed=2, burn_in=0.0)


def test_run_guards(four_atom_model, circle_space):
    model = EnergyModel(circle_space, ConstantKernel(0.0), BetaSchedule.constant(1.0))
    with pytest.raises(EnergyError):
        mcmc_run(model, n=2, steps=5, seed=1)
    with pytest.raises(EnergyError):
        mcmc_run(model, n=0, steps=100, seed=1)
    with pytest.raises(EnergyError):
        mcmc_run(model, n=2, steps=100, seed=1, burn_in=0.95)
    with pytest.raises(EnergyError):
        mcmc_run(model, n=2, steps=100, seed=1, thin=0)
    with pytest.raises(EnergyError):
        mcmc_run(model, n=2, steps=100, seed=1, ladder=[0.5, 0.2, 1.0])
    with pytest.raises(EnergyError):
        mcmc_run(model, n=2, steps=100, seed=1, ladder=[0.5, 0.9])
    with pytest.raises(EnergyError):
        mcmc_run(model, n=3, steps=100, seed=1, initial=np.zeros((2, 1)))
    singular = EnergyModel(circle_space, LogChordKernel(), BetaSchedule.constant(1.0))
    with pytest.raises(EnergyError):
        mcmc_run(singular, n=2, steps=100, seed=1,
                 initial=np.array([[1.0], [1.0]]))
    frozen = EnergyModel(circle_space, ConstantKernel(0.0),
                         BetaSchedule.from_callable(lambda n: math.inf, math.inf))
    with pytest.raises(EnergyError):
        mcmc_run(frozen, n=2, steps=100, seed=1)


def test_enumeration_guards(four_atom_model, circle_space):
    with pytest.raises(EnumerationCapError):
        enumerate_gibbs(FiniteEnergyModel(FiniteSpace(np.full(6, 1 / 6)),
                                          BetaSchedule.constant(1.0),
                                          pair_matrix=np.zeros((6, 6))), 100)
    model = EnergyModel(circle_space, ConstantKernel(0.0), BetaSchedule.constant(1.0))
    with pytest.raises(EnergyError):
        enumerate_gibbs(model, 4)


# -- parallel tempering -----------------------------------------------------------------


def test_parallel_tempering_matches_enumeration(four_atom_model):
    n = 6
    exact = enumerate_gibbs(four_atom_model, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = mcmc_run(four_atom_model, n, steps=120_000, seed=56, thin=1,
                          ladder=[0.25, 0.5, 1.0], swap_every=25)
    assert result.swap_rates is not None and len(result.swap_rates) == 2
    assert set(result.ladder_energies) == {0.25, 0.5, 1.0}
    occupation = (result.samples == 0).sum(axis=1) / n
    z = _batch_z(occupation, exact.expectation(lambda c: c[0] / n))
    assert abs(z) < 3.0


def test_tempering_swap_rate_warning(four_atom_model):
    with pytest.warns(RuntimeWarning, match="swap rate"):
        mcmc_run(four_atom_model, 4, steps=5000, seed=13, ladder=[0.99, 1.0],
                 swap_every=10)


def test_result_accessors(four_atom_model, circle_space):
    finite = mcmc_run(four_atom_model, 5, steps=2000, seed=6)
    counts = finite.counts(4, 0)
    assert counts.sum() == 5
    payload = finite.to_json_dict()
    assert payload["kind"] == "finite" and payload["n"] == 5
    model = EnergyModel(circle_space, ConstantKernel(0.0), BetaSchedule.constant(1.0))
    cont = mcmc_run(model, n=3, steps=2000, seed=7)
    emp = cont.empirical(circle_space, 0)
    assert emp.points.shape == (3, 1)
