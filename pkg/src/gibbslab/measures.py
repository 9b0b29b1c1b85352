"""Probability measures on base spaces and finite atom spaces.

Grid measures carry a density against the space's reference measure;
empirical measures carry atom locations.  Relative entropy follows the
convention 0*log(0) = 0 and returns +inf when absolute continuity fails
(in particular for any empirical measure against a diffuse reference).
"""

from dataclasses import dataclass

import math

import numpy as np

from .errors import MeasureError
from .simplex import simplex_grid, simplex_minimize

__all__ = [
    "EmpiricalMeasure",
    "GridMeasure",
    "FiniteSpace",
    "LegendreReport",
    "relative_entropy",
    "legendre_check",
    "bounded_lipschitz_distance",
    "empirical_from_points",
    "grid_projection",
]

_MASS_TOL = 1e-10


class EmpiricalMeasure:
    """Uniform atoms 1/n at explicit points of a base space."""

    def __init__(self, space, points):
        self.space = space
        self.points = space._as_points(points)
        if self.points.shape[0] == 0:
            raise MeasureError("empirical measure needs at least one atom")

    @property
    def n_atoms(self):
        return self.points.shape[0]

    def integrate(self, fn):
        """Mean of a point function over the atoms."""
        return float(np.mean(fn(self.points)))

    def to_csv_rows(self):
        header = ["index"] + [f"coord{i}" for i in range(self.points.shape[1])]
        rows = [[str(i)] + [_fmt(c) for c in p] for i, p in enumerate(self.points)]
        return [header] + rows

    def to_json_dict(self):
        return {
            "type": "empirical",
            "space": self.space.kind,
            "points": [[float(c) for c in p] for p in self.points],
        }


class GridMeasure:
    """Nonnegative density against the reference measure, total mass 1."""

    def __init__(self, space, density):
        density = np.asarray(density, dtype=float)
        if density.shape != (space.n_nodes,):
            raise MeasureError(
                f"density has shape {density.shape}, expected ({space.n_nodes},)"
            )
        if np.any(density < 0.0) or not np.all(np.isfinite(density)):
            raise MeasureError("grid density must be finite and nonnegative")
        mass = float((space.weights * density).sum())
        if abs(mass - 1.0) > _MASS_TOL:
            raise MeasureError(f"grid density has mass {mass!r}, expected 1")
        self.space = space
        self.density = density

    @classmethod
    def uniform(cls, space):
        return cls(space, np.ones(space.n_nodes))

    @classmethod
    def from_unnormalized(cls, space, values):
        values = np.asarray(values, dtype=float)
        total = float((space.weights * values).sum())
        if total <= 0.0 or not np.isfinite(total):
            raise MeasureError("cannot normalize a density with nonpositive total mass")
        return cls(space, values / total)

    @property
    def node_masses(self):
        return self.space.weights * self.density

    def integrate(self, node_values):
        """Integral of a function given by its values at the grid nodes."""
        return float((self.node_masses * np.asarray(node_values, float)).sum())

    def to_csv_rows(self):
        pdim = self.space.point_dim
        header = ["index"] + [f"coord{i}" for i in range(pdim)] + ["weight", "density"]
        rows = []
        for i in range(self.space.n_nodes):
            rows.append(
                [str(i)]
                + [_fmt(c) for c in self.space.nodes[i]]
                + [_fmt(self.space.weights[i]), _fmt(self.density[i])]
            )
        return [header] + rows

    def to_json_dict(self):
        return {
            "type": "grid",
            "space": self.space.kind,
            "density": [float(v) for v in self.density],
        }


class FiniteSpace:
    """Finitely many labelled atoms with a positive base distribution."""

    def __init__(self, probs, labels=None):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.shape[0] < 2:
            raise MeasureError("finite space needs at least two atoms")
        if np.any(probs <= 0.0):
            raise MeasureError("finite base distribution must be strictly positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise MeasureError(f"finite base distribution sums to {probs.sum()!r}")
        self.probs = probs
        self.labels = list(labels) if labels is not None else [str(i) for i in range(len(probs))]
        if len(self.labels) != len(probs):
            raise MeasureError("labels and probabilities disagree in length")

    @property
    def n_atoms(self):
        return self.probs.shape[0]


def _fmt(value):
    return format(float(value), ".17g")


def _xlogx(x):
    out = np.zeros_like(x)
    mask = x > 0.0
    out[mask] = x[mask] * np.log(x[mask])
    return out


def relative_entropy(mu, ref=None):
    """Relative entropy D(mu || ref) in nats.

    ``mu`` may be a GridMeasure (ref: GridMeasure or None for the space's
    reference), an EmpiricalMeasure (+inf against any diffuse reference), or
    a plain probability vector with ``ref`` a vector of the same length.
    """
    if isinstance(mu, EmpiricalMeasure):
        return math.inf
    if isinstance(mu, GridMeasure):
        p = mu.density
        if ref is None:
            q = np.ones_like(p)
        elif isinstance(ref, GridMeasure):
            if ref.space is not mu.space:
                raise MeasureError("measures live on different spaces")
            q = ref.density
        else:
            raise MeasureError(f"unsupported reference {type(ref).__name__}")
        w = mu.space.weights
        if np.any((q == 0.0) & (p > 0.0)):
            return math.inf
        mask = p > 0.0
        value = float((w[mask] * p[mask] * np.log(p[mask] / q[mask])).sum())
    else:
        p = np.asarray(mu, dtype=float)
        q = np.asarray(ref, dtype=float)
        if p.shape != q.shape:
            raise MeasureError("distribution and reference have different lengths")
        if np.any((q == 0.0) & (p > 0.0)):
            return math.inf
        mask = p > 0.0
        value = float((p[mask] * np.log(p[mask] / q[mask])).sum())
    # Entropy is nonnegative; clamp quadrature round-off.
    if -1e-12 < value < 0.0:
        return 0.0
    return value


@dataclass
class LegendreReport:
    """Two independent evaluations of the entropy Legendre identity."""

    lhs: float
    rhs_closed: float
    rhs_grid: float
    tilt: np.ndarray


_ENTROPY_CACHE = {}


def _grid_entropy(m, steps):
    """Cache sum(t*log t) over the global composition grid (g-independent)."""
    key = (m, steps)
    if key not in _ENTROPY_CACHE:
        if len(_ENTROPY_CACHE) > 8:
            _ENTROPY_CACHE.clear()
        _ENTROPY_CACHE[key] = _xlogx(simplex_grid(m, steps)).sum(axis=1)
    return _ENTROPY_CACHE[key]


def _finite_objective(pi, g, grid=None, grid_entropy=None):
    finite = np.isfinite(g)
    coef = np.where(finite, g, 0.0) - np.log(pi)

    def objective(taus):
        ent = grid_entropy if taus is grid else _xlogx(taus).sum(axis=1)
        vals = taus @ coef + ent
        if not finite.all():
            vals = np.where(taus[:, ~finite].max(axis=1) > 0.0, np.inf, vals)
        return vals

    return objective


def legendre_check(space, g, grid_steps=200, refine_rounds=6):
    """Check  log E_pi[exp(-g)] = -inf_tau { E_tau[g] + D(tau || pi) }.

    Returns the log-mean-exp left side together with the right side computed
    two ways: from the closed-form minimizing tilt, and by dense simplex grid
    search with local refinement (independent of the closed form).
    """
    pi = space.probs
    g = np.asarray(g, dtype=float)
    if g.shape != pi.shape:
        raise MeasureError(f"g has shape {g.shape}, expected {pi.shape}")
    if np.any(np.isnan(g)) or np.any(g == -math.inf):
        raise MeasureError("g must take values in (-inf, +inf]")
    finite = np.isfinite(g)
    if not finite.any():
        raise MeasureError("g is identically +inf; the identity degenerates")

    weights = np.zeros_like(pi)
    weights[finite] = pi[finite] * np.exp(-g[finite])
    z = float(weights.sum())
    lhs = math.log(z)

    tilt = weights / z
    lin = float(tilt[finite] @ g[finite])
    rhs_closed = -(lin + relative_entropy(tilt, pi))

    if space.n_atoms > 5:
        raise MeasureError("simplex grid oracle supports at most 5 atoms")
    grid = simplex_grid(space.n_atoms, grid_steps)
    objective = _finite_objective(pi, g, grid, _grid_entropy(space.n_atoms, grid_steps))
    value, _ = simplex_minimize(
        objective, space.n_atoms, steps=grid_steps, refine_rounds=refine_rounds,
    )
    return LegendreReport(lhs=lhs, rhs_closed=rhs_closed, rhs_grid=-value, tilt=tilt)


# -- bounded-Lipschitz surrogate distance -------------------------------------


class _Dictionary:
    def __init__(self, space, functions):
        self.space = space
        self.functions = functions
        self.node_values = np.stack([fn(space.nodes) for fn in functions], axis=0)


_DICT_CACHE = {}


def _bl_dictionary(space, n_anchors=64):
    key = id(space)
    if key in _DICT_CACHE:
        return _DICT_CACHE[key]
    functions = []
    if space.has_basis:
        sups = np.abs(space.basis_values).max(axis=0)
        scales = sups * np.maximum(1.0, np.sqrt(space.eigenvalues))
        for k in range(1, space.n_basis):
            functions.append(_scaled_basis(space, k, scales[k]))
    else:
        bounds = np.asarray(space.params["bounds"], float)
        for axis in range(space.dim):
            functions.append(_scaled_coordinate(axis, bounds[axis]))
    stride = max(1, space.n_nodes // n_anchors)
    for anchor in space.nodes[::stride]:
        functions.append(_capped_distance(space, anchor.copy()))
    dictionary = _Dictionary(space, functions)
    if len(_DICT_CACHE) > 4:
        _DICT_CACHE.clear()
    _DICT_CACHE[key] = dictionary
    return dictionary


def _scaled_basis(space, index, scale):
    def fn(points):
        return space.evaluate_basis(points)[:, index] / scale
    return fn


def _scaled_coordinate(axis, bounds):
    center = 0.5 * (bounds[0] + bounds[1])
    scale = max(1.0, 0.5 * (bounds[1] - bounds[0]))

    def fn(points):
        return (points[:, axis] - center) / scale
    return fn


def _capped_distance(space, anchor):
    def fn(points):
        return np.minimum(space.geodesic(anchor, points)[0], 1.0)
    return fn


def _dictionary_integrals(measure, dictionary):
    if isinstance(measure, GridMeasure):
        return dictionary.node_values @ measure.node_masses
    return np.array([measure.integrate(fn) for fn in dictionary.functions])


def bounded_lipschitz_distance(mu, nu):
    """Max dictionary-function discrepancy; a surrogate for weak convergence.

    The dictionary holds the space's truncated basis, rescaled to be
    1-Lipschitz with sup-norm at most 1, plus capped distance functions to a
    fixed grid of anchor nodes.
    """
    space = mu.space
    if nu.space is not space:
        raise MeasureError("measures live on different spaces")
    dictionary = _bl_dictionary(space)
    return float(np.abs(
        _dictionary_integrals(mu, dictionary) - _dictionary_integrals(nu, dictionary)
    ).max())


# -- smoothing -----------------------------------------------------------------


def empirical_from_points(space, points):
    return EmpiricalMeasure(space, points)


def grid_projection(measure, bandwidth):
    """Geodesic Gaussian smoothing of an empirical measure onto the grid."""
    if not isinstance(measure, EmpiricalMeasure):
        raise MeasureError("grid_projection expects an EmpiricalMeasure")
    if not bandwidth > 0.0:
        raise MeasureError(f"bandwidth must be positive, got {bandwidth!r}")
    space = measure.space
    d = space.geodesic(space.nodes, measure.points)
    raw = np.exp(-0.5 * (d / bandwidth) ** 2).sum(axis=1)
    return GridMeasure.from_unnormalized(space, raw)
