"""Many-body interaction energies, microscopic and macroscopic.

The microscopic energy of a configuration x = (x_1..x_n) under an arity-k
kernel G plus one-body potentials V is

    w_n(x) = n^{-k} * sum over k-subsets G(x_{i_1},...,x_{i_k})
             + n^{-1} * sum_i V_n(x_i),

and the macroscopic energy of a density mu is

    w(mu) = (1/k!) * integral of G d(mu tensor k) + integral of V d(mu).

Singular pair kernels (log, Riesz) are integrated on the grid by excluding
the self-pair and replacing the diagonal with the kernel's cell average: a
node with cell volume v is assigned the mean kernel value over a ball of the
same volume (radius R, with mean(-log r) = -log R + 1/d and
mean(r^-s) = d/(d-s) * R^-s in dimension d).  The same corrected node matrix
is used by the free-energy minimizer, so both sides of every comparison see
one discretization.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EnergyError
from .measures import EmpiricalMeasure, FiniteSpace, GridMeasure

__all__ = [
    "BetaSchedule",
    "Kernel",
    "ConstantKernel",
    "LogChordKernel",
    "RieszKernel",
    "GreenKernel",
    "CallableKernel",
    "TiltedKernel",
    "StaticPotential",
    "EnvironmentPotential",
    "EnvironmentSequence",
    "EnergyModel",
    "EnergyReport",
    "FiniteEnergyModel",
    "TransformedEnergyModel",
    "w_n",
    "w_n_report",
    "w_macro",
    "expected_energy",
    "confining_bound_check",
    "euclidean_transform",
    "kernel_node_matrix",
]


class BetaSchedule:
    """Inverse-temperature sequence beta_n with its limit."""

    def __init__(self, fn, limit, description):
        self._fn = fn
        self.limit = limit
        self.description = description

    @classmethod
    def constant(cls, beta):
        beta = float(beta)
        if not beta > 0.0:
            raise EnergyError(f"beta must be positive, got {beta!r}")
        return cls(lambda n: beta, beta, f"constant({beta!r})")

    @classmethod
    def linear(cls, coefficient=1.0):
        coefficient = float(coefficient)
        if not coefficient > 0.0:
            raise EnergyError(f"linear beta coefficient must be positive, got {coefficient!r}")
        return cls(lambda n: coefficient * n, math.inf, f"linear({coefficient!r})")

    @classmethod
    def from_callable(cls, fn, limit):
        return cls(fn, float(limit), "custom")

    def beta_at(self, n):
        return float(self._fn(n))


# -- kernels -------------------------------------------------------------------


class Kernel:
    """Arity-k interaction kernel on a base space."""

    arity = 2
    singular = False
    differentiable = True  # smooth away from the diagonal

    def pairwise(self, space, x, y):
        raise NotImplementedError

    def tuple_values(self, space, arrays):
        """Values on aligned k-tuples; arrays is a k-tuple of point arrays."""
        if self.arity != 2:
            raise EnergyError(f"{type(self).__name__} does not evaluate arity {self.arity}")
        a, b = arrays
        n = a.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = self.pairwise(space, a[i : i + 1], b[i : i + 1])[0, 0]
        return out

    def diagonal_values(self, space):
        """Corrected self-pair values at the grid nodes (singular kernels)."""
        raise EnergyError(f"{type(self).__name__} has no diagonal correction")

    def lower_bound(self, space):
        return None


class ConstantKernel(Kernel):
    def __init__(self, value, arity=2):
        if arity < 2:
            raise EnergyError(f"kernel arity must be >= 2, got {arity}")
        self.value = float(value)
        self.arity = int(arity)

    def pairwise(self, space, x, y):
        a = space._as_points(x)
        b = space._as_points(y)
        return np.full((a.shape[0], b.shape[0]), self.value)

    def tuple_values(self, space, arrays):
        return np.full(arrays[0].shape[0], self.value)

    def diagonal_values(self, space):
        return np.full(space.n_nodes, self.value)

    def lower_bound(self, space):
        return self.value


def _ball_radius(space):
    """Radius of the ball with each node cell's volume, per node."""
    if space.dim == 1:
        return space.cell_volumes / 2.0
    return np.sqrt(space.cell_volumes / np.pi)


class LogChordKernel(Kernel):
    """G(x, y) = -scale * log d(x, y), chord distance where an embedding exists."""

    singular = True

    def __init__(self, scale=1.0):
        if not scale > 0.0:
            raise EnergyError(f"log kernel scale must be positive, got {scale!r}")
        self.scale = float(scale)

    def pairwise(self, space, x, y):
        d = space.chord(x, y)
        with np.errstate(divide="ignore"):
            return -self.scale * np.log(d)

    def diagonal_values(self, space):
        radius = _ball_radius(space)
        return -self.scale * (np.log(radius) - 1.0 / space.dim)

    def lower_bound(self, space):
        if space.kind in ("circle", "sphere"):
            dmax = 2.0
        else:
            dmax = space.diameter
        return -self.scale * math.log(dmax)


class RieszKernel(Kernel):
    """G(x, y) = scale * d(x, y)^(-s), chord distance where an embedding exists."""

    singular = True

    def __init__(self, s, scale=1.0):
        if not 0.0 < s:
            raise EnergyError(f"riesz exponent must be positive, got {s!r}")
        if not scale > 0.0:
            raise EnergyError(f"riesz scale must be positive, got {scale!r}")
        self.s = float(s)
        self.scale = float(scale)

    def pairwise(self, space, x, y):
        d = space.chord(x, y)
        with np.errstate(divide="ignore"):
            return self.scale * d ** (-self.s)

    def diagonal_values(self, space):
        d = space.dim
        if self.s >= d:
            raise EnergyError(
                f"riesz exponent {self.s} >= dimension {d}: grid integral diverges"
            )
        radius = _ball_radius(space)
        return self.scale * (d / (d - self.s)) * radius ** (-self.s)

    def lower_bound(self, space):
        return 0.0


class GreenKernel(Kernel):
    """The truncated spectral Green kernel; bounded, finite on the diagonal."""

    def __init__(self, model):
        self.model = model

    def pairwise(self, space, x, y):
        if space is not self.model.space:
            raise EnergyError("Green kernel evaluated on a different space")
        xs = space._as_points(x)
        ys = space._as_points(y)
        bx = space.evaluate_basis(xs)[:, 1 : self.model.order + 1] * self.model._inv_sqrt_eigs
        by = space.evaluate_basis(ys)[:, 1 : self.model.order + 1] * self.model._inv_sqrt_eigs
        shift = self.model._phi(xs)[:, None] + self.model._phi(ys)[None, :]
        return (bx @ by.T - shift) + self.model.constant

    def diagonal_values(self, space):
        return np.diag(self.model.kernel_matrix()).copy()

    def lower_bound(self, space):
        return self.model.lower_bound()


class CallableKernel(Kernel):
    """User-supplied kernel; ``fn(space, *arrays)`` maps aligned point arrays
    to values (for arity 2 it receives broadcastable (n,1,d) and (1,m,d))."""

    def __init__(self, fn, arity=2, bound=None, singular=False, diagonal_fn=None,
                 differentiable=True):
        if arity < 2:
            raise EnergyError(f"kernel arity must be >= 2, got {arity}")
        self.fn = fn
        self.arity = int(arity)
        self.bound = bound
        self.singular = singular
        self.diagonal_fn = diagonal_fn
        self.differentiable = bool(differentiable)

    def pairwise(self, space, x, y):
        if self.arity != 2:
            raise EnergyError(f"arity-{self.arity} kernel has no pairwise table")
        a = space._as_points(x)
        b = space._as_points(y)
        return np.asarray(self.fn(space, a[:, None, :], b[None, :, :]), dtype=float)

    def tuple_values(self, space, arrays):
        return np.asarray(self.fn(space, *arrays), dtype=float)

    def diagonal_values(self, space):
        if self.diagonal_fn is not None:
            return np.asarray(self.diagonal_fn(space), dtype=float)
        if self.singular:
            raise EnergyError("singular callable kernel needs an explicit diagonal_fn")
        nodes = space.nodes
        return np.asarray(
            self.fn(space, nodes[:, None, :], nodes[:, None, :])[:, 0], dtype=float
        )

    def lower_bound(self, space):
        return self.bound


class TiltedKernel(Kernel):
    """G(x, y) + coefficient * (V(x) + V(y)) for a one-body tilt V."""

    def __init__(self, base, v_fn, coefficient=1.0):
        if base.arity != 2:
            raise EnergyError("tilted kernels require an arity-2 base")
        self.base = base
        self.v_fn = v_fn
        self.coefficient = float(coefficient)
        self.singular = base.singular

    def pairwise(self, space, x, y):
        a = space._as_points(x)
        b = space._as_points(y)
        tilt = self.coefficient * (self.v_fn(a)[:, None] + self.v_fn(b)[None, :])
        return self.base.pairwise(space, a, b) + tilt

    def diagonal_values(self, space):
        return self.base.diagonal_values(space) + 2.0 * self.coefficient * self.v_fn(space.nodes)

    def lower_bound(self, space):
        base = self.base.lower_bound(space)
        if base is None:
            return None
        v = self.v_fn(space.nodes)
        extreme = v.min() if self.coefficient >= 0 else v.max()
        return base + 2.0 * self.coefficient * float(extreme)


def kernel_node_matrix(kernel, space, correct_diagonal=True):
    """Node-by-node kernel table; singular diagonals replaced by cell averages."""
    if kernel.arity != 2:
        raise EnergyError("node matrices exist for arity-2 kernels only")
    matrix = kernel.pairwise(space, space.nodes, space.nodes)
    if correct_diagonal:
        np.fill_diagonal(matrix, kernel.diagonal_values(space))
    return matrix


# -- one-body potentials ---------------------------------------------------------


class StaticPotential:
    """Fixed one-body potential V, identical at every stage n."""

    def __init__(self, fn, description="potential"):
        self.fn = fn
        self.description = description

    @classmethod
    def from_expression(cls, space, expr):
        from .expressions import compile_expression
        from .spaces import _coordinate_names

        compiled = compile_expression(expr, _coordinate_names(space))

        def fn(points):
            return compiled(*[points[:, i] for i in range(points.shape[1])])

        return cls(fn, description=expr)

    def stage_values(self, n, points):
        return np.broadcast_to(
            np.asarray(self.fn(points), dtype=float), (points.shape[0],)
        )

    def limit_values(self, points):
        return self.stage_values(None, points)


class EnvironmentSequence:
    """Environment measures nu_n with their weak limit nu."""

    def __init__(self, stage_fn, limit):
        self._stage_fn = stage_fn
        self.limit = limit

    @classmethod
    def fixed(cls, measure):
        return cls(lambda n: measure, measure)

    @classmethod
    def point_stream(cls, space, stream_points, limit):
        stream_points = space._as_points(stream_points)

        def stage(n):
            if n > stream_points.shape[0]:
                raise EnergyError(
                    f"environment stream holds {stream_points.shape[0]} points, stage {n} requested"
                )
            return EmpiricalMeasure(space, stream_points[:n])

        return cls(stage, limit)

    def measure_at(self, n):
        return self._stage_fn(n)


class EnvironmentPotential:
    """V_n(x) = integral of an external pair kernel against nu_n."""

    def __init__(self, kernel, environment):
        if kernel.arity != 2:
            raise EnergyError("environment coupling requires an arity-2 external kernel")
        self.kernel = kernel
        self.environment = environment

    def _against(self, measure, points):
        space = measure.space
        if isinstance(measure, GridMeasure):
            rows = self.kernel.pairwise(space, points, space.nodes)
            return rows @ measure.node_masses
        rows = self.kernel.pairwise(space, points, measure.points)
        return rows.mean(axis=1)

    def stage_values(self, n, points):
        return self._against(self.environment.measure_at(n), points)

    def limit_values(self, points):
        return self._against(self.environment.limit, points)


# -- energy models ---------------------------------------------------------------


@dataclass
class EnergyReport:
    """Decomposed microscopic energy of one configuration."""

    value: float
    internal: float
    external: float
    n: int
    infinite: bool
    pair_values: np.ndarray | None = None


class EnergyModel:
    """Base space + interaction kernel + beta schedule + one-body potentials."""

    def __init__(self, space, kernel, beta, potentials=()):
        if kernel.arity < 2:
            raise EnergyError(f"kernel arity must be >= 2, got {kernel.arity}")
        self.space = space
        self.kernel = kernel
        self.beta = beta
        self.potentials = tuple(potentials)
        self._node_matrix = None

    def node_matrix(self):
        """Corrected kernel table on the grid (cached)."""
        if self._node_matrix is None:
            self._node_matrix = kernel_node_matrix(self.kernel, self.space)
        return self._node_matrix

    def potential_stage_values(self, n, points):
        if not self.potentials:
            return np.zeros(points.shape[0])
        return sum(p.stage_values(n, points) for p in self.potentials)

    def potential_limit_values(self, points):
        if not self.potentials:
            return np.zeros(points.shape[0])
        return sum(p.limit_values(points) for p in self.potentials)

    def kernel_floor(self):
        return self.kernel.lower_bound(self.space)


def _sorted_sum(values):
    """Sum in a canonical (sorted) order so permuting inputs changes nothing."""
    flat = np.asarray(values, dtype=float).ravel()
    return float(np.sort(flat).sum())


def _internal_pair_values(model, config):
    matrix = model.kernel.pairwise(model.space, config, config)
    iu = np.triu_indices(config.shape[0], k=1)
    return matrix[iu]


def _internal_tuple_sum(model, config):
    from itertools import combinations

    n = config.shape[0]
    k = model.kernel.arity
    idx = np.array(list(combinations(range(n), k)), dtype=np.intp)
    if idx.size == 0:
        return 0.0, np.empty(0)
    # Kernels are symmetric in their arguments; evaluating each tuple with its
    # points in lexicographic order keeps w_n bitwise permutation invariant.
    stacked = config[idx]  # (tuples, k, point_dim)
    keys = tuple(stacked[:, :, c] for c in range(stacked.shape[2] - 1, -1, -1))
    order = np.lexsort(keys, axis=1)
    stacked = np.take_along_axis(stacked, order[:, :, None], axis=1)
    arrays = tuple(stacked[:, j, :] for j in range(k))
    values = model.kernel.tuple_values(model.space, arrays)
    return _sorted_sum(values), values


def w_n_report(model, config):
    """Microscopic energy with its internal/external decomposition."""
    config = model.space._as_points(config)
    n = config.shape[0]
    if n < 1:
        raise EnergyError("configuration must hold at least one point")
    k = model.kernel.arity
    if n < k:
        internal, pair_values = 0.0, np.empty(0)
    elif k == 2:
        pair_values = _internal_pair_values(model, config)
        internal = _sorted_sum(pair_values)
    else:
        internal, pair_values = _internal_tuple_sum(model, config)
    internal /= float(n) ** k
    external = _sorted_sum(model.potential_stage_values(n, config)) / n
    value = internal + external
    return EnergyReport(
        value=value,
        internal=internal,
        external=external,
        n=n,
        infinite=not math.isfinite(value),
        pair_values=pair_values,
    )


def w_n(model, config):
    """Microscopic energy of one configuration (extended real)."""
    return w_n_report(model, config).value


def _macro_internal_integral(model, mu, clip=None):
    """integral of G d(mu tensor k) with the corrected diagonal, times 1."""
    masses = mu.node_masses
    k = model.kernel.arity
    if k == 2:
        matrix = model.node_matrix()
        if clip is not None:
            matrix = np.minimum(matrix, clip)
        return float(masses @ matrix @ masses)
    if k == 3:
        if model.kernel.singular:
            raise EnergyError("arity-3 macroscopic energy needs a bounded kernel")
        if clip is not None:
            raise EnergyError("clipping is implemented for arity-2 kernels only")
        space = model.space
        nodes = space.nodes
        total = 0.0
        for i in range(space.n_nodes):
            block = np.empty((space.n_nodes, space.n_nodes))
            for j in range(space.n_nodes):
                arrays = (
                    np.repeat(nodes[i : i + 1], space.n_nodes, axis=0),
                    np.repeat(nodes[j : j + 1], space.n_nodes, axis=0),
                    nodes,
                )
                block[j] = model.kernel.tuple_values(space, arrays)
            total += masses[i] * float(masses @ block @ masses)
        return total
    raise EnergyError(f"macroscopic energy supports arity <= 3, got {k}")


def w_macro(model, mu, clip=None):
    """Macroscopic energy of a grid density: (1/k!) k-fold integral + potentials.

    ``clip`` truncates the pair kernel at G ∧ clip (monotone approximation)."""
    if not isinstance(mu, GridMeasure):
        raise EnergyError("macroscopic energy expects a GridMeasure")
    if mu.space is not model.space:
        raise EnergyError("measure lives on a different space")
    k = model.kernel.arity
    internal = _macro_internal_integral(model, mu, clip=clip) / math.factorial(k)
    external = float((mu.node_masses * model.potential_limit_values(model.space.nodes)).sum())
    return internal + external


def expected_energy(model, mu, n):
    """E[w_n] under mu^(tensor n):  n^{-k} C(n,k) integral G d(mu tensor k)
    plus the stage-n one-body terms."""
    if n < 1:
        raise EnergyError(f"need n >= 1, got {n}")
    k = model.kernel.arity
    integral = _macro_internal_integral(model, mu)
    coefficient = math.comb(n, k) / float(n) ** k
    external = float(
        (mu.node_masses * model.potential_stage_values(n, model.space.nodes)).sum()
    )
    return coefficient * integral + external


def confining_bound_check(model, config, inside_fn, kernel_floor, energy_bound=None):
    """Outside-mass bound for confining kernels.

    Hypotheses checked: the kernel is nonnegative, ``kernel_floor`` is a
    positive lower bound for G on tuples outside the compact set, and the
    configuration's energy is at most ``energy_bound`` (defaults to the
    realized energy).  Returns ``(mass_outside, bound)`` with

        bound = (energy_bound * k! / kernel_floor)^(1/k) + k/n.
    """
    config = model.space._as_points(config)
    k = model.kernel.arity
    floor = model.kernel_floor()
    if floor is None or floor < 0.0:
        raise EnergyError("confining bound requires a nonnegative kernel")
    if not kernel_floor > 0.0:
        raise EnergyError(f"kernel floor must be positive, got {kernel_floor!r}")
    inside = np.asarray(inside_fn(config), dtype=bool)
    outside = ~inside
    if outside.sum() >= k:
        pts = config[outside]
        probe = EnergyModel(model.space, model.kernel, model.beta)
        if k == 2:
            values = _internal_pair_values(probe, pts)
        else:
            _, values = _internal_tuple_sum(probe, pts)
        if values.size and values.min() < kernel_floor - 1e-12:
            raise EnergyError(
                f"kernel drops to {values.min()!r} < floor {kernel_floor!r} outside the set"
            )
    energy = w_n(model, config)
    if energy_bound is None:
        energy_bound = energy
    if not math.isfinite(energy) or energy > energy_bound + 1e-12:
        raise EnergyError(
            f"configuration energy {energy!r} exceeds the hypothesized bound {energy_bound!r}"
        )
    n = config.shape[0]
    mass_outside = float(outside.sum()) / n
    bound = (energy_bound * math.factorial(k) / kernel_floor) ** (1.0 / k) + k / n
    return mass_outside, bound


# -- transforms of Euclidean models ----------------------------------------------


class TransformedEnergyModel:
    """Result of a weak/strong transform: reference space plus an n-dependent
    kernel family with its limit."""

    def __init__(self, space, base_kernel, v_fn, beta, mode, xi=None, eps=None):
        self.space = space
        self.base_kernel = base_kernel
        self.v_fn = v_fn
        self.beta = beta
        self.mode = mode
        self.xi = xi
        self.eps = eps

    def coefficient_at(self, n):
        if self.mode == "weak":
            return 1.0
        beta_n = self.beta.beta_at(n)
        return (n - (n / beta_n) * self.xi) / (n - 1.0)

    def a_coefficient(self, n):
        """Normalizing coefficient a_n -> 1 in the strong regime."""
        if self.mode == "weak":
            return 1.0
        return (self.coefficient_at(n) - self.eps) / (1.0 - self.eps)

    def kernel_at(self, n):
        return TiltedKernel(self.base_kernel, self.v_fn, self.coefficient_at(n))

    @property
    def limit_kernel(self):
        return TiltedKernel(self.base_kernel, self.v_fn, 1.0)

    def model_at(self, n):
        return EnergyModel(self.space, self.kernel_at(n), self.beta)

    def limit_model(self):
        return EnergyModel(self.space, self.limit_kernel, self.beta)


def _reweighted_box(space, v_fn, factor):
    """Copy of a box space with reference density multiplied by exp(-factor*V)."""
    from .spaces import Space

    base_density = space.density_values if space.density_values is not None else (
        np.ones(space.n_nodes) / space.volume
    )
    raw = base_density * np.exp(-factor * v_fn(space.nodes))
    total = float((raw * space.cell_volumes).sum())
    if not math.isfinite(total) or total <= 0.0:
        raise EnergyError("tilted reference measure is not normalizable on the grid")
    weights = raw * space.cell_volumes / total
    params = {k: v for k, v in space.params.items()}
    params["tilt_factor"] = factor
    base_fn = space.params.get("_density_fn")
    base_norm = space.params.get("_density_norm", 1.0 / space.volume)

    def density_fn(pts):
        base = base_norm if base_fn is None else base_fn(pts) * base_norm
        return base * np.exp(-factor * v_fn(pts)) / total

    params["_density_fn"] = density_fn
    params["_density_norm"] = 1.0
    return Space(space.kind, space.dim, space.nodes.copy(), weights,
                 space.cell_volumes.copy(), params, density_values=raw / total)


def euclidean_transform(model, mode, xi=None, eps=None, potential=None):
    """Fold a confining potential into the kernel and reference measure.

    ``weak``:   reference exp(-V) l, kernel G + V(x) + V(y).
    ``strong``: reference exp(-xi V) l, kernel family
                G + (n - (n/beta_n) xi)/(n-1) (V(x) + V(y)) with
                a_n = (coefficient - eps)/(1 - eps) -> 1; needs eps in [0,1).
    """
    space = model.space
    if space.kind != "box":
        raise EnergyError("euclidean transforms apply to box spaces")
    if model.kernel.arity != 2:
        raise EnergyError("euclidean transforms require an arity-2 kernel")
    pots = [p for p in model.potentials if isinstance(p, StaticPotential)]
    if potential is None:
        if len(pots) != 1:
            raise EnergyError("model needs exactly one static potential V to transform")
        potential = pots[0]
    v_fn = lambda pts: np.asarray(potential.fn(pts), dtype=float)
    v_nodes = v_fn(space.nodes)
    if not np.all(np.isfinite(v_nodes)):
        raise EnergyError("potential V must be finite on the grid")
    if mode == "weak":
        factor = 1.0
    elif mode == "strong":
        if xi is None or eps is None:
            raise EnergyError("strong mode needs xi and eps")
        if not 0.0 <= eps < 1.0:
            raise EnergyError(f"eps must lie in [0, 1), got {eps!r}")
        base_floor = model.kernel.lower_bound(space)
        probe = TiltedKernel(model.kernel, v_fn, eps)
        if base_floor is not None:
            floor = probe.lower_bound(space)
            if floor is None or not math.isfinite(floor):
                raise EnergyError("G + eps(V + V) is not bounded below on the grid")
        factor = float(xi)
    else:
        raise EnergyError(f"unknown transform mode {mode!r}")
    new_space = _reweighted_box(space, v_fn, factor)
    if mode == "weak":
        tilted = TiltedKernel(model.kernel, v_fn, 1.0)
        floor = tilted.lower_bound(space)
        if floor is not None and not math.isfinite(floor):
            raise EnergyError("transformed kernel is not bounded below")
        return EnergyModel(new_space, tilted, model.beta)
    return TransformedEnergyModel(new_space, model.kernel, v_fn, model.beta,
                                  "strong", xi=float(xi), eps=float(eps))


# -- finite atom spaces ------------------------------------------------------------


class FiniteEnergyModel:
    """Energy model on a finite atom space.

    Either an explicit symmetric pair matrix (arity 2) or a direct
    ``w_fn(counts, n)`` override defines the microscopic energy of the
    type class with the given atom counts.
    """

    def __init__(self, space, beta, pair_matrix=None, w_fn=None):
        if not isinstance(space, FiniteSpace):
            raise EnergyError("FiniteEnergyModel needs a FiniteSpace")
        if (pair_matrix is None) == (w_fn is None):
            raise EnergyError("give exactly one of pair_matrix or w_fn")
        self.space = space
        self.beta = beta
        self.w_fn = w_fn
        if pair_matrix is not None:
            pair_matrix = np.asarray(pair_matrix, dtype=float)
            m = space.n_atoms
            if pair_matrix.shape != (m, m):
                raise EnergyError(f"pair matrix must be {m}x{m}")
            if not np.array_equal(pair_matrix, pair_matrix.T):
                raise EnergyError("pair matrix must be symmetric")
        self.pair_matrix = pair_matrix

    def w_counts(self, counts, n=None):
        """Microscopic energy of a configuration with the given atom counts."""
        counts = np.asarray(counts)
        if n is None:
            n = int(counts.sum())
        if self.w_fn is not None:
            return float(self.w_fn(counts, n))
        c = counts.astype(float)
        # sum over unordered distinct index pairs:
        #   cross pairs c_a c_b G_ab (a<b) plus within-atom pairs C(c_a,2) G_aa
        diag = np.diag(self.pair_matrix)
        cross = 0.5 * (c @ self.pair_matrix @ c - (c ** 2 * diag).sum())
        within = (c * (c - 1.0) / 2.0 * diag).sum()
        return float((cross + within) / float(n) ** 2)

    def w_mean(self, mu):
        """Macroscopic energy (1/2) mu^T G mu of a distribution vector."""
        if self.pair_matrix is None:
            raise EnergyError("macroscopic energy needs an explicit pair matrix")
        mu = np.asarray(mu, dtype=float)
        return float(0.5 * mu @ self.pair_matrix @ mu)
