"""gibbslab: a desk-scale numerical laboratory for Gibbs point gases.

Builds compact base spaces with spectral Green kernels, evaluates many-body
interaction energies, minimizes free energies over densities, samples Gibbs
ensembles by Markov chain Monte Carlo, optimizes minimal-energy point
configurations, and verifies Laplace-principle asymptotics numerically.
"""

__version__ = "0.1.0"
