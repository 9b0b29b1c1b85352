"""Free-energy functionals on grid densities and their minimizers.

For an arity-2 model with kernel table M, one-body values V and limiting
inverse temperature beta, the discrete free energy of node masses m is

    F(m) = (1/2) m^T M m + V^T m + (1/beta) sum_i m_i log(m_i / w_i),

the grid transcription of  energy + (1/beta) * relative entropy.  The
minimizer runs entropic mirror descent (multiplicative weights) with an
Armijo backtracking line search; its certified optimality measure is the
simplex duality gap  <g, m> - min_i g_i.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .energy import EnergyModel, GreenKernel, w_macro
from .errors import EnergyError, MeasureError, StepSizeFailureError
from .measures import GridMeasure, relative_entropy

__all__ = [
    "EquilibriumResult",
    "MeanFieldReport",
    "DerivativeReport",
    "free_energy",
    "free_energy_gradient",
    "minimize_free_energy",
    "mean_field_residual",
    "directional_derivative_check",
]

_ARMIJO_SLOPE = 1e-4


def free_energy(model, mu, clip=None):
    """Macroscopic energy plus (1/beta) relative entropy; beta = inf drops
    the entropy term."""
    beta = model.beta.limit
    energy = w_macro(model, mu, clip=clip)
    if math.isinf(beta):
        return energy
    return energy + relative_entropy(mu) / beta


def _model_tables(model):
    if model.kernel.arity != 2:
        raise EnergyError("free-energy minimization requires an arity-2 kernel")
    matrix = model.node_matrix()
    v = model.potential_limit_values(model.space.nodes)
    return matrix, v


def _gradient(matrix, v, weights, masses, beta):
    g = matrix @ masses + v
    if math.isinf(beta):
        return g
    with np.errstate(divide="ignore"):
        return g + (np.log(masses / weights) + 1.0) / beta


def free_energy_gradient(model, mu):
    """Node values of the first variation dF/dm at mu (mass coordinates)."""
    matrix, v = _model_tables(model)
    return _gradient(matrix, v, model.space.weights, mu.node_masses,
                     model.beta.limit)


def _objective(matrix, v, weights, masses, beta):
    value = 0.5 * float(masses @ matrix @ masses) + float(v @ masses)
    if math.isinf(beta):
        return value
    ratio = masses / weights
    terms = np.where(masses > 0.0, masses * np.log(np.where(ratio > 0.0, ratio, 1.0)), 0.0)
    return value + float(terms.sum()) / beta


@dataclass
class EquilibriumResult:
    """Outcome of a free-energy minimization."""

    measure: GridMeasure
    value: float
    gap: float
    iterations: int
    converged: bool
    status: str
    gradient: np.ndarray
    trace: list = field(default_factory=list)


def _md_step(log_m, gradient, eta, beta):
    shifted = log_m - eta * gradient
    masses = np.exp(shifted - logsumexp(shifted))
    if not math.isinf(beta):
        masses = np.maximum(masses, 1e-300)
        masses /= masses.sum()
    return masses


def minimize_free_energy(model, initial=None, max_iters=5000, tol=1e-10, step=1.0):
    """Entropic mirror descent to the minimizer of the free energy.

    Stops when the simplex duality gap <g, m> - min g falls below
    ``tol * (1 + |F|)``.  A first phase runs multiplicative updates under an
    Armijo line search; once objective decreases fall below float resolution,
    a second phase iterates the fixed-step update map and keeps the iterate
    with the smallest gap.  Raises StepSizeFailureError when the line search
    cannot decrease the objective while the gap is still far from the target.
    """
    space = model.space
    matrix, v = _model_tables(model)
    beta = model.beta.limit
    weights = space.weights
    if initial is None:
        masses = weights.copy()
    else:
        if initial.space is not space:
            raise MeasureError("initial measure lives on a different space")
        masses = initial.node_masses.copy()
    if not math.isinf(beta) and masses.min() <= 0.0:
        raise MeasureError("finite-temperature minimization needs a strictly "
                           "positive initial density")

    eta = float(step)
    value = _objective(matrix, v, weights, masses, beta)
    trace = [value]
    status = "max_iterations"
    converged = False
    gradient = _gradient(matrix, v, weights, masses, beta)
    iterations = 0
    polish = False
    for iterations in range(1, max_iters + 1):
        gap = float(gradient @ masses - gradient.min())
        if not math.isfinite(gap):
            raise StepSizeFailureError(
                f"free-energy gradient is not finite at iteration {iterations}"
            )
        if gap <= tol * (1.0 + abs(value)):
            status, converged = "gap_below_tol", True
            break
        if polish:
            break
        with np.errstate(divide="ignore"):
            log_m = np.log(masses)
        accepted = False
        while eta >= step * 1e-15:
            new_masses = _md_step(log_m, gradient, eta, beta)
            predicted = float(gradient @ (masses - new_masses))
            new_value = _objective(matrix, v, weights, new_masses, beta)
            if math.isfinite(new_value) and new_value <= value - _ARMIJO_SLOPE * predicted:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # The objective can no longer be resolved past float rounding.
            if gap > max(1e3 * tol, 1e-6) * (1.0 + abs(value)):
                raise StepSizeFailureError(
                    f"line search stalled at gap {gap!r} after {iterations} iterations"
                )
            polish = True
            break
        masses, value = new_masses, new_value
        trace.append(value)
        gradient = _gradient(matrix, v, weights, masses, beta)
        eta = min(eta * 1.3, step * 100.0)

    if polish and not converged:
        # Fixed-step polish: the update map contracts near the optimum, and
        # tracking the best gap avoids comparing objective values in the
        # rounding-floor regime.  Restarting from the best iterate with a
        # halved step whenever progress stops walks eta into the stable range.
        best_masses, best_gradient = masses, gradient
        best_gap = float(gradient @ masses - gradient.min())
        since_best = 0
        # The line search drains eta to a no-op scale while it fights the
        # rounding floor, so restart from the caller's base step.
        eta = float(step)
        while iterations < max_iters:
            iterations += 1
            with np.errstate(divide="ignore"):
                log_m = np.log(masses)
            masses = _md_step(log_m, gradient, eta, beta)
            gradient = _gradient(matrix, v, weights, masses, beta)
            gap = float(gradient @ masses - gradient.min())
            if gap <= tol * (1.0 + abs(value)):
                best_masses, best_gradient, best_gap = masses, gradient, gap
                break
            if gap < 0.9 * best_gap:
                best_masses, best_gradient, best_gap = masses, gradient, gap
                since_best = 0
                continue
            since_best += 1
            if gap > 3.0 * best_gap or since_best % 15 == 0:
                masses, gradient = best_masses, best_gradient
                eta *= 0.5
            if since_best >= 100 or eta < step * 1e-15:
                break
        masses, gradient = best_masses, best_gradient
        value = _objective(matrix, v, weights, masses, beta)
        trace.append(value)
        if best_gap <= tol * (1.0 + abs(value)):
            status, converged = "gap_below_tol", True
        else:
            status = "polish_floor"

    gap = float(gradient @ masses - gradient.min())
    measure = GridMeasure(space, masses / weights)
    return EquilibriumResult(measure=measure, value=value, gap=gap,
                             iterations=iterations, converged=converged,
                             status=status, gradient=gradient, trace=trace)


# -- mean-field first-order condition ---------------------------------------------


@dataclass
class MeanFieldReport:
    """Spectral residual of the mean-field condition and its truncation floor."""

    residual: float
    tail: float
    beta: float


def _spectral_laplacian(space, order, node_values):
    """Coefficients -> values of -Laplacian of the projected function."""
    basis = space.basis_values[:, 1 : order + 1]
    coeffs = basis.T @ (space.weights * node_values)
    return basis @ (space.eigenvalues[1 : order + 1] * coeffs), coeffs


def mean_field_residual(model, mu):
    """L2 residual of  beta (rho - lambda - lap V) + (-lap log rho) = 0.

    The first variation of the free energy is G mu + V + (1/beta) log rho;
    applying the negative Laplacian and using the Green identity turns
    stationarity into the reported field equation.  ``tail`` is the part of
    beta (rho - lambda) outside the truncated basis: the residual cannot sit
    below it on this grid, so values near ``tail`` mean the discrete optimum
    was reached.
    """
    if not isinstance(model.kernel, GreenKernel):
        raise EnergyError("mean-field residual needs a Green-kernel model")
    beta = model.beta.limit
    if not math.isfinite(beta) or beta <= 0.0:
        raise EnergyError("mean-field residual needs a finite positive beta limit")
    if mu.space is not model.space:
        raise MeasureError("measure lives on a different space")
    space = model.space
    green = model.kernel.model
    order = green.order
    rho = mu.density
    if rho.min() <= 0.0:
        raise MeasureError("mean-field residual needs a strictly positive density")
    lam = green.charge.values
    field_values = rho - lam
    v = model.potential_limit_values(space.nodes)
    if np.any(v):
        lap_v, _ = _spectral_laplacian(space, order, v)
        field_values = field_values + lap_v / 1.0
    lap_log_rho, _ = _spectral_laplacian(space, order, np.log(rho))
    residual_values = beta * field_values + lap_log_rho
    residual = math.sqrt(float(space.weights @ residual_values ** 2))
    basis = space.basis_values[:, : order + 1]
    coeffs = basis.T @ (space.weights * field_values)
    projected = basis @ coeffs
    tail_values = field_values - projected
    tail = beta * math.sqrt(float(space.weights @ tail_values ** 2))
    return MeanFieldReport(residual=residual, tail=tail, beta=beta)


# -- directional derivative checks ---------------------------------------------------


@dataclass
class DerivativeReport:
    """One-sided finite-difference consistency of the first variation."""

    analytic: float
    fd: dict
    errors: dict
    curvature: float

    @property
    def consistent(self):
        return all(err <= h * self.curvature + 1e-12
                   for h, err in self.errors.items())


def directional_derivative_check(model, mu, nu, hs=(1e-3, 1e-4)):
    """Compare <dF(mu), nu - mu> with one-sided difference quotients of F
    along the segment (1-h) mu + h nu; the error should be O(h) with the
    reported curvature constant."""
    if mu.space is not model.space or nu.space is not model.space:
        raise MeasureError("measures live on a different space")
    matrix, v = _model_tables(model)
    beta = model.beta.limit
    weights = model.space.weights
    m = mu.node_masses
    target = nu.node_masses
    if not math.isinf(beta) and m.min() <= 0.0:
        raise MeasureError("finite-temperature derivative needs interior mu")
    direction = target - m
    gradient = _gradient(matrix, v, weights, m, beta)
    analytic = float(gradient @ direction)
    base = _objective(matrix, v, weights, m, beta)
    curvature = float(direction @ matrix @ direction)
    if not math.isinf(beta):
        mask = direction != 0.0
        curvature += float((direction[mask] ** 2 / m[mask]).sum()) / beta
    curvature = abs(curvature)
    fd, errors = {}, {}
    for h in hs:
        moved = m + h * direction
        fd[h] = (_objective(matrix, v, weights, moved, beta) - base) / h
        errors[h] = abs(fd[h] - analytic)
    return DerivativeReport(analytic=analytic, fd=fd, errors=errors,
                            curvature=curvature)
