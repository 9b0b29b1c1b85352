"""Zero-temperature configuration optimization.

Finds n-point configurations minimizing the microscopic energy w_n,
optionally tilted by a functional f of the empirical measure, and compares
the resulting minima against the macroscopic infimum inf w (resp.
inf {w + f}) computed on the node grid.

The continuous optimizer is a multi-start local search: particles are drawn
from the reference distribution, descended by geodesic gradient steps with
Armijo backtracking (kernels differentiable off the diagonal) or refined by
coordinate-wise pattern search (non-smooth kernels), then polished by
single-particle relocation sweeps that may exchange a particle's position
for a better fresh draw.  Finite atom spaces are solved exactly by
enumerating occupation-count classes.  Results are best-found local minima,
not certified global optima; the circle log-gas, whose global minimum is
known in closed form, serves as the regression anchor for the optimizer.

Functionals of the empirical measure come in three representable classes:
plain integrals ``f(mu) = integral of g dmu`` (evaluated directly on the
atoms), scalar compositions of several such integrals, and functionals of a
density (evaluated through the fixed-bandwidth grid smoothing of
`measures`).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    BetaSchedule,
    EnergyModel,
    FiniteEnergyModel,
    LogChordKernel,
    StaticPotential,
    w_n,
)
from .equilibrium import minimize_free_energy
from .errors import CollisionError, EnergyError, EnumerationCapError
from .measures import EmpiricalMeasure, GridMeasure, _fmt, grid_projection
from .rng import derive_rng
from .sampler import _continuous_delta
from .simplex import _compositions, simplex_minimize
from .spaces import _coordinate_names

__all__ = [
    "SMOOTHING_BANDWIDTH",
    "MeasureFunctional",
    "IntegralFunctional",
    "ComposedFunctional",
    "DensityFunctional",
    "FeketeResult",
    "fekete_minimize",
    "macro_infimum",
    "InfimaTable",
    "infima_convergence_table",
]

_COLLISION_TOL = 1e-12
_ENUMERATION_CAP = 10_000_000
SMOOTHING_BANDWIDTH = 0.25


# -- functionals of the empirical measure --------------------------------------------


class MeasureFunctional:
    """Functional of a probability measure, evaluated on particle
    configurations (through their empirical measure), on grid densities,
    or on rows of atom-mass vectors over a finite space."""

    def configuration_value(self, space, config):
        raise NotImplementedError

    def grid_value(self, mu):
        raise NotImplementedError

    def simplex_values(self, space, taus):
        raise NotImplementedError


class IntegralFunctional(MeasureFunctional):
    """f(mu) = integral of g dmu.

    ``g`` is a callable on (r, d) point arrays for continuous spaces, or a
    length-m vector of per-atom values for finite spaces."""

    def __init__(self, g):
        self.g = g

    def point_values(self, space, points):
        if callable(self.g):
            return np.asarray(self.g(points), dtype=float)
        values = np.asarray(self.g, dtype=float)
        return values[np.asarray(points, dtype=np.int64)]

    def configuration_value(self, space, config):
        return float(self.point_values(space, config).mean())

    def grid_value(self, mu):
        values = self.point_values(mu.space, mu.space.nodes)
        return float((mu.node_masses * values).sum())

    def simplex_values(self, space, taus):
        if callable(self.g):
            raise EnergyError("finite-space functionals need a per-atom value vector")
        values = np.asarray(self.g, dtype=float)
        if values.shape != (space.n_atoms,):
            raise EnergyError(
                f"per-atom vector has shape {values.shape}, expected ({space.n_atoms},)"
            )
        return np.asarray(taus, dtype=float) @ values


class ComposedFunctional(MeasureFunctional):
    """f(mu) = phi(I_1(mu), ..., I_k(mu)) for integral parts I_j."""

    def __init__(self, phi, parts):
        self.phi = phi
        self.parts = tuple(parts)
        if not self.parts:
            raise EnergyError("composition needs at least one integral part")

    def configuration_value(self, space, config):
        return float(self.phi(*[p.configuration_value(space, config) for p in self.parts]))

    def grid_value(self, mu):
        return float(self.phi(*[p.grid_value(mu) for p in self.parts]))

    def simplex_values(self, space, taus):
        columns = [p.simplex_values(space, taus) for p in self.parts]
        return np.array([float(self.phi(*vals)) for vals in zip(*columns)])


class DensityFunctional(MeasureFunctional):
    """f(mu) = fn(mu) for fn defined on grid densities; configurations are
    smoothed onto the grid with a fixed bandwidth first."""

    def __init__(self, fn, bandwidth=SMOOTHING_BANDWIDTH):
        self.fn = fn
        self.bandwidth = float(bandwidth)

    def configuration_value(self, space, config):
        smoothed = grid_projection(EmpiricalMeasure(space, config), self.bandwidth)
        return float(self.fn(smoothed))

    def grid_value(self, mu):
        return float(self.fn(mu))

    def simplex_values(self, space, taus):
        raise EnergyError("density functionals are not defined on finite atom spaces")


# -- results -------------------------------------------------------------------------


@dataclass
class FeketeResult:
    """Best configuration found over all restarts.

    ``points`` is the canonicalized configuration: rows sorted by coordinate
    key for continuous spaces, sorted atom labels for finite spaces.
    ``restart_values`` holds one final objective value per restart
    (``+inf`` for restarts abandoned after a particle collision), so
    ``value == min(restart_values)`` always holds.
    """

    points: np.ndarray
    value: float
    restarts: int
    restart_values: np.ndarray
    gradient_norm: float | None
    iterations: int
    collisions: int = 0
    trace: np.ndarray | None = None
    space: object = field(default=None, repr=False)

    def to_csv_rows(self):
        if self.points.ndim == 1:
            header = ["index", "atom"]
            rows = [[str(i), str(int(a))] for i, a in enumerate(self.points)]
        else:
            names = (_coordinate_names(self.space) if self.space is not None
                     else [f"coord{i}" for i in range(self.points.shape[1])])
            header = ["index"] + names
            rows = [[str(i)] + [_fmt(c) for c in p] for i, p in enumerate(self.points)]
        return [header] + rows

    def to_json_dict(self):
        return {
            "value": self.value,
            "restarts": self.restarts,
            "restart_values": [float(v) for v in self.restart_values],
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "collisions": self.collisions,
            "points": self.points.tolist(),
        }


# -- geometry helpers ----------------------------------------------------------------


def _retract(space, config):
    """Map an ambient/coordinate perturbation back onto the space."""
    kind = space.kind
    if kind == "circle":
        return config % (2.0 * np.pi)
    if kind == "torus":
        return config % 1.0
    if kind == "sphere":
        return config / np.linalg.norm(config, axis=1, keepdims=True)
    bounds = np.asarray(space.params["bounds"], dtype=float)
    return np.clip(config, bounds[:, 0], bounds[:, 1])


def _closest_pair(space, config):
    n = config.shape[0]
    if n < 2:
        return math.inf, None
    dists = space.geodesic(config, config) + np.diag(np.full(n, np.inf))
    i, j = np.unravel_index(int(np.argmin(dists)), dists.shape)
    return float(dists[i, j]), (int(i), int(j))


def _canonical(config):
    """Sort configuration rows lexicographically by coordinates."""
    keys = tuple(config[:, c] for c in range(config.shape[1] - 1, -1, -1))
    return config[np.lexsort(keys)]


def _objective(model, config, f):
    value = w_n(model, config)
    if f is not None:
        value += f.configuration_value(model.space, config)
    return value


# -- gradients -------------------------------------------------------------------------


def _analytic_pair_gradient(model, config):
    """Closed-form pair-energy gradient where available (circle log kernel)."""
    kernel, space = model.kernel, model.space
    if isinstance(kernel, LogChordKernel) and space.kind == "circle":
        theta = config[:, 0]
        delta = theta[:, None] - theta[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = 1.0 / np.tan(0.5 * delta)
        np.fill_diagonal(cot, 0.0)
        n = config.shape[0]
        return (-kernel.scale * 0.5 * cot.sum(axis=1) / n ** 2)[:, None]
    return None


def _fd_pair_gradient(model, config, h):
    """Central-difference pair-energy gradient, one coordinate at a time.
    On the sphere the shifted points are renormalized, so the difference
    quotient is automatically the tangential derivative."""
    space, kernel = model.space, model.kernel
    n, dim = config.shape
    grad = np.empty_like(config)
    for c in range(dim):
        shift = np.zeros((1, dim))
        shift[0, c] = h
        plus = _retract(space, config + shift)
        minus = _retract(space, config - shift)
        with np.errstate(divide="ignore", invalid="ignore"):
            diff = kernel.pairwise(space, plus, config) - kernel.pairwise(space, minus, config)
        np.fill_diagonal(diff, 0.0)
        grad[:, c] = diff.sum(axis=1) / (2.0 * h) / n ** 2
    return grad


def _gradient(model, config, f, h=1e-6):
    grad = _analytic_pair_gradient(model, config)
    if grad is None:
        grad = _fd_pair_gradient(model, config, h)
    if model.potentials or isinstance(f, IntegralFunctional):
        space = model.space
        n, dim = config.shape
        for c in range(dim):
            shift = np.zeros((1, dim))
            shift[0, c] = h
            plus = _retract(space, config + shift)
            minus = _retract(space, config - shift)
            if model.potentials:
                dv = model.potential_stage_values(n, plus) - model.potential_stage_values(n, minus)
                grad[:, c] += dv / (2.0 * h) / n
            if isinstance(f, IntegralFunctional):
                dg = f.point_values(space, plus) - f.point_values(space, minus)
                grad[:, c] += dg / (2.0 * h) / n
    return grad


# -- local searches -------------------------------------------------------------------


def _gradient_descent(model, config, f, max_iters, grad_tol):
    """Geodesic descent with Barzilai-Borwein trial steps and Armijo
    backtracking; accepted values are strictly decreasing."""
    space = model.space
    value = _objective(model, config, f)
    if not math.isfinite(value):
        raise CollisionError("initial configuration has infinite energy",
                             pair=_closest_pair(space, config)[1])
    trace = [value]
    eta = 0.1
    prev_config = prev_grad = None
    iterations = 0
    for iterations in range(1, max_iters + 1):
        grad = _gradient(model, config, f)
        if not np.isfinite(grad).all():
            raise CollisionError("gradient blew up near the diagonal",
                                 pair=_closest_pair(space, config)[1])
        gnorm2 = float((grad * grad).sum())
        if math.sqrt(gnorm2) <= grad_tol:
            break
        if prev_grad is not None:
            dx = (config - prev_config).ravel()
            dg = (grad - prev_grad).ravel()
            dgg = float(dg @ dg)
            if dgg > 0.0:
                bb = abs(float(dx @ dg)) / dgg
                if math.isfinite(bb) and bb > 0.0:
                    eta = min(max(bb, 1e-10), 1e3)
        prev_config, prev_grad = config, grad
        accepted = False
        while eta >= 1e-18:
            cand = _retract(space, config - eta * grad)
            dist, _ = _closest_pair(space, cand)
            cand_value = math.inf if dist < _COLLISION_TOL else _objective(model, cand, f)
            if cand_value <= value - 1e-6 * eta * gnorm2:
                config, value = cand, cand_value
                trace.append(value)
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
    return config, value, iterations, trace


def _pattern_step(space):
    return {"circle": 0.5, "torus": 0.2, "sphere": 0.4}.get(space.kind, 0.25)


def _pattern_search(model, config, f, max_iters):
    """Coordinate-wise pattern search for non-smooth kernels."""
    space = model.space
    n, dim = config.shape
    value = _objective(model, config, f)
    if not math.isfinite(value):
        raise CollisionError("initial configuration has infinite energy",
                             pair=_closest_pair(space, config)[1])
    trace = [value]
    step = _pattern_step(space)
    iterations = 0
    while iterations < max_iters and step > 1e-10:
        iterations += 1
        improved = False
        for i in range(n):
            for c in range(dim):
                for sign in (1.0, -1.0):
                    cand = config.copy()
                    cand[i, c] += sign * step
                    cand = _retract(space, cand)
                    if _closest_pair(space, cand)[0] < _COLLISION_TOL:
                        continue
                    cand_value = _objective(model, cand, f)
                    if cand_value < value - 1e-15:
                        config, value = cand, cand_value
                        trace.append(value)
                        improved = True
        if not improved:
            step *= 0.5
    return config, value, iterations, trace


def _relocation_polish(model, config, f, rng, value, rounds, candidates):
    """Single-particle exchange sweeps: each particle may trade its position
    for the best of a batch of fresh reference draws when that strictly
    lowers the objective."""
    space = model.space
    n = config.shape[0]
    improved_any = False
    for _ in range(rounds):
        improved = False
        for i in range(n):
            draws = space.sample_points(rng, candidates)
            best_delta, best_point = 0.0, None
            for cand in draws:
                gaps = space.geodesic(cand[None, :], config)[0]
                gaps[i] = np.inf
                if float(gaps.min()) < _COLLISION_TOL:
                    continue
                if f is None or isinstance(f, IntegralFunctional):
                    delta = _continuous_delta(model, config, i, cand)
                    if isinstance(f, IntegralFunctional):
                        old = f.point_values(space, config[i][None, :])[0]
                        new = f.point_values(space, cand[None, :])[0]
                        delta += (new - old) / n
                else:
                    moved = config.copy()
                    moved[i] = cand
                    delta = _objective(model, moved, f) - value
                if delta < best_delta:
                    best_delta, best_point = delta, cand
            if best_point is not None and best_delta < -1e-13 * max(1.0, abs(value)):
                config = config.copy()
                config[i] = best_point
                value += best_delta
                improved = improved_any = True
        if not improved:
            break
    if improved_any:
        value = _objective(model, config, f)
    return config, value, improved_any


def _collision_free_init(space, rng, n):
    for _ in range(50):
        config = space.sample_points(rng, n)
        if _closest_pair(space, config)[0] >= _COLLISION_TOL:
            return config
    raise CollisionError("could not draw a collision-free initial configuration")


# -- main entry points ------------------------------------------------------------------


def _finite_fekete(model, n, f):
    m = model.space.n_atoms
    total = math.comb(n + m - 1, m - 1)
    if total > _ENUMERATION_CAP:
        raise EnumerationCapError(
            f"{total} occupation classes exceed the cap {_ENUMERATION_CAP}"
        )
    counts = _compositions(n, m)
    if model.pair_matrix is not None:
        g = model.pair_matrix
        diag = np.diag(g)
        c = counts.astype(float)
        cross = 0.5 * ((c @ g * c).sum(axis=1) - c ** 2 @ diag)
        within = (c * (c - 1.0) / 2.0) @ diag
        values = (cross + within) / float(n) ** 2
    else:
        values = np.array([model.w_counts(row, n) for row in counts])
    if f is not None:
        values = values + f.simplex_values(model.space, counts / n)
    best = int(np.argmin(values))
    labels = np.repeat(np.arange(m), counts[best])
    value = float(values[best])
    return FeketeResult(
        points=labels,
        value=value,
        restarts=1,
        restart_values=np.array([value]),
        gradient_norm=None,
        iterations=total,
        space=model.space,
    )


def fekete_minimize(model, n, f=None, restarts=8, seed=0, max_iters=2000,
                    grad_tol=1e-9, polish_rounds=2, polish_candidates=8):
    """Minimize w_n (plus an optional empirical-measure functional) over
    n-point configurations.

    Finite atom spaces are solved exactly by enumeration.  Continuous spaces
    run ``restarts`` independent local searches (reproducible streams derived
    from ``seed``); restarts that collide are recorded as ``+inf`` and the
    best survivor wins, with ties broken by the canonical coordinate key.
    """
    if isinstance(model, FiniteEnergyModel):
        return _finite_fekete(model, n, f)
    if not isinstance(model, EnergyModel):
        raise EnergyError(f"cannot optimize a {type(model).__name__}")
    k = model.kernel.arity
    if n < k:
        raise EnergyError(f"need at least k={k} particles, got {n}")
    if restarts < 1:
        raise EnergyError(f"restarts must be >= 1, got {restarts}")
    use_gradient = (model.kernel.differentiable and k == 2
                    and (f is None or isinstance(f, IntegralFunctional)))
    values, configs, iter_counts, traces = [], [], [], []
    collisions = 0
    for r in range(restarts):
        rng = derive_rng(seed, "fekete", f"restart{r}")
        try:
            config = _collision_free_init(model.space, rng, n)
            if use_gradient:
                config, value, iters, trace = _gradient_descent(
                    model, config, f, max_iters, grad_tol)
            else:
                config, value, iters, trace = _pattern_search(model, config, f, max_iters)
            config, value, moved = _relocation_polish(
                model, config, f, rng, value, polish_rounds, polish_candidates)
            if moved:
                trace.append(value)
                if use_gradient:
                    config, value, extra, tail = _gradient_descent(
                        model, config, f, max_iters, grad_tol)
                    iters += extra
                    trace.extend(tail[1:])
        except CollisionError:
            collisions += 1
            values.append(math.inf)
            configs.append(None)
            iter_counts.append(0)
            traces.append(None)
            continue
        values.append(value)
        configs.append(_canonical(config))
        iter_counts.append(iters)
        traces.append(trace)
    # deterministic merge: order restarts by (value, canonical byte key)
    order = sorted(range(restarts),
                   key=lambda i: (values[i],
                                  b"" if configs[i] is None else configs[i].tobytes()))
    best = order[0]
    if configs[best] is None:
        raise CollisionError("every restart ended in a particle collision")
    points = configs[best]
    gradient_norm = None
    if use_gradient:
        gradient_norm = float(np.abs(_gradient(model, points, f)).max())
    return FeketeResult(
        points=points,
        value=values[best],
        restarts=restarts,
        restart_values=np.asarray(values),
        gradient_norm=gradient_norm,
        iterations=iter_counts[best],
        collisions=collisions,
        trace=np.asarray(traces[best]),
        space=model.space,
    )


def macro_infimum(model, f=None, grid_steps=200):
    """Macroscopic infimum inf {w + f} over probability measures.

    Finite spaces use a refining simplex grid search; continuous arity-2
    models run the entropy-free mirror descent on the node grid (exact for
    convex kernels, best-found otherwise).  Returns (value, witness).
    """
    if isinstance(model, FiniteEnergyModel):
        m = model.space.n_atoms

        def objective(taus):
            taus = np.asarray(taus, dtype=float)
            values = np.array([model.w_mean(row) for row in taus])
            if f is not None:
                values = values + f.simplex_values(model.space, taus)
            return values

        value, tau = simplex_minimize(objective, m, steps=grid_steps)
        return value, tau
    if not isinstance(model, EnergyModel):
        raise EnergyError(f"cannot minimize a {type(model).__name__}")
    if model.kernel.arity != 2:
        raise EnergyError("macroscopic infimum on grids supports arity-2 kernels only")
    if f is not None and not isinstance(f, IntegralFunctional):
        raise EnergyError(
            "continuous macroscopic infima support integral functionals only")
    potentials = list(model.potentials)
    if f is not None:
        potentials.append(StaticPotential(
            lambda pts, f=f: f.point_values(model.space, pts),
            description="tilt"))
    frozen = EnergyModel(model.space, model.kernel, BetaSchedule.linear(1.0),
                         potentials=potentials)
    result = minimize_free_energy(frozen)
    return result.value, result.measure


@dataclass
class InfimaTable:
    """Discrete minima against the macroscopic infimum, per particle count."""

    n_values: list
    inf_values: np.ndarray
    macro_inf: float
    gaps: np.ndarray
    slope: float
    final_gap: float
    threshold: float
    passed: bool
    results: list
    witness: object = field(default=None, repr=False)

    def to_csv_rows(self):
        rows = [["n", "inf_n", "inf_macro", "gap"]]
        for n, v, g in zip(self.n_values, self.inf_values, self.gaps):
            rows.append([str(n), _fmt(v), _fmt(self.macro_inf), _fmt(g)])
        return rows

    def to_json_dict(self):
        return {
            "n_values": [int(n) for n in self.n_values],
            "inf_values": [float(v) for v in self.inf_values],
            "macro_inf": self.macro_inf,
            "gaps": [float(g) for g in self.gaps],
            "slope": self.slope,
            "final_gap": self.final_gap,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def infima_convergence_table(model, n_values, f=None, threshold=0.05,
                             restarts=4, seed=0, max_iters=2000, grid_steps=200):
    """Tabulate the best-found discrete minima inf w_n (+ f) against the
    macroscopic infimum; the table passes when the gap trend slopes down
    (least-squares slope < 0) and the final gap beats ``threshold``."""
    n_values = [int(n) for n in n_values]
    if len(n_values) < 2 or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise EnergyError("need at least two strictly increasing particle counts")
    macro_inf, witness = macro_infimum(model, f=f, grid_steps=grid_steps)
    results = [fekete_minimize(model, n, f=f, restarts=restarts, seed=seed,
                               max_iters=max_iters) for n in n_values]
    inf_values = np.array([r.value for r in results])
    gaps = np.abs(inf_values - macro_inf)
    slope = float(np.polyfit(n_values, gaps, 1)[0])
    final_gap = float(gaps[-1])
    passed = bool(slope < 0.0 and final_gap < threshold)
    return InfimaTable(
        n_values=n_values,
        inf_values=inf_values,
        macro_inf=float(macro_inf),
        gaps=gaps,
        slope=slope,
        final_gap=final_gap,
        threshold=float(threshold),
        passed=passed,
        results=results,
        witness=witness,
    )
