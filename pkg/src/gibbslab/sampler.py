"""Metropolis sampling of interacting-particle ensembles.

The chains target the tilted product measure with density proportional to

    exp(-n beta_n w_n(x)) d(reference)^n,

using single-particle moves: geodesic random-walk proposals on circle,
torus, sphere and box spaces, and per-particle independence proposals
(fresh atom from the reference distribution) on finite atom spaces, which
cancel the reference factor out of the acceptance ratio.

Energies are cached and updated incrementally; every 1000 steps the cache
is recomputed from scratch and must agree to 1e-9, so a drifting update
rule cannot silently corrupt a run.  All randomness flows through one
generator derived from (seed, name), making equal-seed runs byte-identical.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyModel, FiniteEnergyModel, w_n
from .errors import EnergyError, EnumerationCapError, TrappedChainError
from .measures import EmpiricalMeasure
from .rng import derive_rng
from .simplex import _compositions

__all__ = [
    "ChainState",
    "SampleResult",
    "GibbsEnumeration",
    "mcmc_run",
    "enumerate_gibbs",
]

_COHERENCE_EVERY = 1000
_COHERENCE_TOL = 1e-9
_TRAP_LIMIT = 100_000
_ENUMERATION_CAP = 10_000_000


@dataclass
class ChainState:
    """One walker: particle state plus its cached energy."""

    positions: np.ndarray  # (n, d) points or (n,) labels
    energy: float
    steps: int = 0
    accepts: int = 0
    consecutive_rejects: int = 0
    proposal_scale: float = 0.5


@dataclass
class SampleResult:
    """Thinned post-burn-in draws of an interacting-particle chain."""

    kind: str
    samples: np.ndarray
    energies: np.ndarray
    acceptance_rate: float
    proposal_scale: float
    steps: int
    burn_in_steps: int
    thin: int
    seed: int
    n: int
    coupling: float
    final_state: ChainState
    swap_rates: list | None = None
    ladder_energies: dict | None = None

    def empirical(self, space, index):
        """Empirical measure of one stored continuous sample."""
        return EmpiricalMeasure(space, self.samples[index])

    def counts(self, n_atoms, index):
        """Atom counts of one stored finite-space sample."""
        return np.bincount(self.samples[index], minlength=n_atoms)

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "steps": self.steps,
            "burn_in_steps": self.burn_in_steps,
            "thin": self.thin,
            "seed": self.seed,
            "coupling": self.coupling,
            "acceptance_rate": self.acceptance_rate,
            "proposal_scale": self.proposal_scale,
            "n_samples": int(self.samples.shape[0]),
            "mean_energy": float(self.energies.mean()) if self.energies.size else None,
            "swap_rates": self.swap_rates,
        }


# -- proposals -----------------------------------------------------------------


def _propose_point(space, rng, point, scale):
    """Symmetric geodesic random-walk proposal; returns the new point or None
    when the move leaves the chart (box spaces)."""
    kind = space.kind
    if kind == "circle":
        return np.array([(point[0] + scale * rng.standard_normal()) % (2.0 * np.pi)])
    if kind == "torus":
        return (point + scale * rng.standard_normal(2)) % 1.0
    if kind == "sphere":
        raw = rng.standard_normal(3)
        tangent = raw - (raw @ point) * point
        norm = float(np.linalg.norm(tangent))
        if norm < 1e-12:
            return point.copy()
        angle = scale * norm
        moved = math.cos(angle) * point + math.sin(angle) * (tangent / norm)
        return moved / np.linalg.norm(moved)
    moved = point + scale * rng.standard_normal(point.shape[0])
    if not bool(space.contains(moved[None, :])[0]):
        return None
    return moved


def _pair_row_sum(model, positions, i, point):
    """Sum over j != i of G(point, x_j) plus the one-body stage term."""
    n = positions.shape[0]
    row = model.kernel.pairwise(model.space, point[None, :], positions)[0]
    row[i] = 0.0
    internal = float(row.sum())
    external = float(model.potential_stage_values(n, point[None, :])[0])
    return internal, external


def _continuous_delta(model, positions, i, new_point):
    n = positions.shape[0]
    if model.kernel.arity == 2:
        with np.errstate(invalid="ignore"):
            new_int, new_ext = _pair_row_sum(model, positions, i, new_point)
            old_int, old_ext = _pair_row_sum(model, positions, i, positions[i])
        if math.isnan(new_int):
            return math.inf
        return (new_int - old_int) / n ** 2 + (new_ext - old_ext) / n
    moved = positions.copy()
    moved[i] = new_point
    return w_n(model, moved) - w_n(model, positions)


def _finite_delta(model, counts, n, a, b):
    if model.pair_matrix is not None:
        g = model.pair_matrix
        change = float(counts @ (g[b] - g[a])) - (g[b, a] - g[a, a])
        return change / n ** 2
    moved = counts.copy()
    moved[a] -= 1
    moved[b] += 1
    return model.w_counts(moved, n) - model.w_counts(counts, n)


# -- single-chain kernels ----------------------------------------------------------


class _ContinuousChain:
    def __init__(self, model, n, rng, initial, scale):
        self.model = model
        self.space = model.space
        self.n = n
        if initial is None:
            positions = self.space.sample_points(rng, n)
        else:
            positions = self.space._as_points(initial).copy()
            if positions.shape[0] != n:
                raise EnergyError(f"initial configuration has {positions.shape[0]} points, expected {n}")
        energy = w_n(model, positions)
        if not math.isfinite(energy):
            raise EnergyError("initial configuration has infinite energy")
        self.state = ChainState(positions=positions, energy=energy, proposal_scale=scale)
        self.is_box = self.space.kind == "box"

    def step(self, rng, coupling):
        state = self.state
        state.steps += 1
        i = int(rng.integers(self.n))
        new_point = _propose_point(self.space, rng, state.positions[i], state.proposal_scale)
        accept = False
        if new_point is not None:
            delta = _continuous_delta(self.model, state.positions, i, new_point)
            if math.isfinite(delta):
                log_alpha = -coupling * delta
                if self.is_box:
                    old_d = float(self.space.reference_density(state.positions[i][None, :])[0])
                    new_d = float(self.space.reference_density(new_point[None, :])[0])
                    if new_d <= 0.0:
                        log_alpha = -math.inf
                    else:
                        log_alpha += math.log(new_d) - math.log(old_d)
                if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
                    state.positions[i] = new_point
                    state.energy += delta
                    accept = True
        self._book(accept)

    def _book(self, accept):
        state = self.state
        if accept:
            state.accepts += 1
            state.consecutive_rejects = 0
        else:
            state.consecutive_rejects += 1
            if state.consecutive_rejects >= _TRAP_LIMIT:
                raise TrappedChainError(
                    f"chain rejected {state.consecutive_rejects} consecutive proposals"
                )
        if state.steps % _COHERENCE_EVERY == 0:
            fresh = self.fresh_energy()
            if abs(state.energy - fresh) > _COHERENCE_TOL * max(1.0, abs(fresh)):
                raise EnergyError(
                    f"cached energy {state.energy!r} drifted from recomputed {fresh!r}"
                )
            state.energy = fresh

    def fresh_energy(self):
        return w_n(self.model, self.state.positions)

    def snapshot(self):
        return self.state.positions.copy()


class _FiniteChain:
    def __init__(self, model, n, rng, initial, scale):
        self.model = model
        self.n = n
        self.m = model.space.n_atoms
        self.probs = model.space.probs
        if initial is None:
            labels = rng.choice(self.m, size=n, p=self.probs)
        else:
            labels = np.asarray(initial, dtype=np.int64).copy()
            if labels.shape != (n,) or labels.min() < 0 or labels.max() >= self.m:
                raise EnergyError("initial labels must be n atom indices")
        self.labels = labels
        self.counts = np.bincount(labels, minlength=self.m)
        energy = model.w_counts(self.counts, n)
        if not math.isfinite(energy):
            raise EnergyError("initial configuration has infinite energy")
        self.state = ChainState(positions=labels, energy=energy, proposal_scale=scale)

    def step(self, rng, coupling):
        state = self.state
        state.steps += 1
        i = int(rng.integers(self.n))
        a = int(self.labels[i])
        b = int(rng.choice(self.m, p=self.probs))
        accept = False
        if a == b:
            accept = True
        else:
            delta = _finite_delta(self.model, self.counts, self.n, a, b)
            if math.isfinite(delta):
                log_alpha = -coupling * delta
                if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
                    self.labels[i] = b
                    self.counts[a] -= 1
                    self.counts[b] += 1
                    state.energy += delta
                    accept = True
        self._book(accept)

    def _book(self, accept):
        state = self.state
        if accept:
            state.accepts += 1
            state.consecutive_rejects = 0
        else:
            state.consecutive_rejects += 1
            if state.consecutive_rejects >= _TRAP_LIMIT:
                raise TrappedChainError(
                    f"chain rejected {state.consecutive_rejects} consecutive proposals"
                )
        if state.steps % _COHERENCE_EVERY == 0:
            fresh = self.fresh_energy()
            if abs(state.energy - fresh) > _COHERENCE_TOL * max(1.0, abs(fresh)):
                raise EnergyError(
                    f"cached energy {state.energy!r} drifted from recomputed {fresh!r}"
                )
            state.energy = fresh

    def fresh_energy(self):
        return self.model.w_counts(self.counts, self.n)

    def snapshot(self):
        return self.labels.copy()


def _make_chain(model, n, rng, initial, scale):
    if isinstance(model, FiniteEnergyModel):
        return _FiniteChain(model, n, rng, initial, scale), "finite"
    if isinstance(model, EnergyModel):
        return _ContinuousChain(model, n, rng, initial, scale), "continuous"
    raise EnergyError(f"cannot sample from {type(model).__name__}")


# -- driver --------------------------------------------------------------------


def mcmc_run(model, n, steps, seed, initial=None, proposal_scale=0.5,
             burn_in=0.2, thin=None, ladder=None, swap_every=50, name="chain"):
    """Run a Metropolis chain for the n-particle Gibbs measure of ``model``.

    The first ``burn_in`` fraction of steps adapts the proposal scale toward
    30-50% acceptance (continuous chains) and is discarded; afterwards the
    scale is frozen and every ``thin``-th configuration is stored.  With a
    ``ladder`` of coupling fractions (ascending, ending at 1.0), parallel
    tempering chains run side by side with state swaps every ``swap_every``
    steps; samples come from the full-coupling rung.
    """
    if steps < 10:
        raise EnergyError(f"need at least 10 steps, got {steps}")
    if n < 1:
        raise EnergyError(f"need at least one particle, got {n}")
    if not 0.0 <= burn_in <= 0.9:
        raise EnergyError(f"burn-in fraction must lie in [0, 0.9], got {burn_in!r}")
    beta_n = model.beta.beta_at(n)
    coupling = n * beta_n
    if not math.isfinite(coupling) or coupling <= 0.0:
        raise EnergyError(f"coupling n*beta_n must be finite and positive, got {coupling!r}")

    if ladder is not None:
        scales = [float(s) for s in ladder]
        if len(scales) < 2 or sorted(scales) != scales or len(set(scales)) != len(scales):
            raise EnergyError("ladder must be strictly increasing coupling fractions")
        if not 0.0 < scales[0] or scales[-1] != 1.0:
            raise EnergyError("ladder fractions must lie in (0, 1] and end at 1.0")
    else:
        scales = [1.0]

    rng = derive_rng(seed, "sampler", name)
    chains = []
    kind = None
    for _ in scales:
        chain, kind = _make_chain(model, n, rng, initial, proposal_scale)
        chains.append(chain)

    burn_steps = int(round(steps * burn_in))
    post = steps - burn_steps
    if thin is None:
        thin = max(1, math.ceil(post / 2000))
    elif thin < 1:
        raise EnergyError(f"thinning stride must be >= 1, got {thin}")
    swap_attempts = [0] * (len(scales) - 1)
    swap_accepts = [0] * (len(scales) - 1)
    samples, energies = [], []
    ladder_energies = {s: [] for s in scales} if ladder is not None else None
    swap_round = 0

    for step_index in range(1, steps + 1):
        in_burn = step_index <= burn_steps
        for chain, fraction in zip(chains, scales):
            chain.step(rng, coupling * fraction)
        if kind == "continuous" and in_burn and step_index % 200 == 0:
            for chain in chains:
                state = chain.state
                rate = state.accepts / max(1, state.steps)
                if rate < 0.3:
                    state.proposal_scale *= 0.8
                elif rate > 0.5:
                    state.proposal_scale *= 1.25
                state.accepts = 0
                state.steps = 0
        if step_index == burn_steps:
            for chain in chains:
                chain.state.accepts = 0
                chain.state.steps = 0
        if len(chains) > 1 and step_index % swap_every == 0:
            swap_round += 1
            for pair in range(swap_round % 2, len(chains) - 1, 2):
                lo, hi = chains[pair], chains[pair + 1]
                gap = coupling * (scales[pair + 1] - scales[pair])
                log_alpha = gap * (hi.state.energy - lo.state.energy)
                swap_attempts[pair] += 1
                if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
                    swap_accepts[pair] += 1
                    # exchange particle states; tuned proposal scales and
                    # bookkeeping stay with their rung
                    lo.state.positions, hi.state.positions = (
                        hi.state.positions, lo.state.positions)
                    lo.state.energy, hi.state.energy = hi.state.energy, lo.state.energy
                    if kind == "finite":
                        lo.labels, hi.labels = hi.labels, lo.labels
                        lo.counts, hi.counts = hi.counts, lo.counts
        if not in_burn:
            offset = step_index - burn_steps
            if offset % thin == 0:
                top = chains[-1]
                samples.append(top.snapshot())
                energies.append(top.state.energy)
                if ladder_energies is not None:
                    for chain, fraction in zip(chains, scales):
                        ladder_energies[fraction].append(chain.state.energy)

    swap_rates = None
    if ladder is not None:
        swap_rates = []
        for pair in range(len(scales) - 1):
            rate = swap_accepts[pair] / max(1, swap_attempts[pair])
            swap_rates.append(rate)
            if not 0.1 <= rate <= 0.9:
                warnings.warn(
                    f"tempering swap rate {rate:.3f} between coupling fractions "
                    f"{scales[pair]} and {scales[pair + 1]} is outside [0.1, 0.9]",
                    RuntimeWarning,
                )
    top = chains[-1]
    post_rate = top.state.accepts / max(1, top.state.steps)
    result = SampleResult(
        kind=kind,
        samples=np.array(samples),
        energies=np.array(energies),
        acceptance_rate=post_rate,
        proposal_scale=top.state.proposal_scale,
        steps=steps,
        burn_in_steps=burn_steps,
        thin=thin,
        seed=seed,
        n=n,
        coupling=coupling,
        final_state=top.state,
        swap_rates=swap_rates,
        ladder_energies={s: np.array(v) for s, v in ladder_energies.items()}
        if ladder_energies is not None else None,
    )
    return result


# -- exact enumeration over type classes -----------------------------------------


@dataclass
class GibbsEnumeration:
    """Exact Gibbs distribution over atom-count type classes."""

    counts: np.ndarray  # (classes, m)
    log_probs: np.ndarray  # (classes,)
    log_partition: float
    n: int
    coupling: float

    @property
    def probs(self):
        return np.exp(self.log_probs)

    def expectation(self, fn):
        """Exact mean of a function of the count vector."""
        values = np.array([float(fn(c)) for c in self.counts])
        return float(self.probs @ values)

    def variance(self, fn):
        values = np.array([float(fn(c)) for c in self.counts])
        mean = float(self.probs @ values)
        return float(self.probs @ (values - mean) ** 2)

    def marginal(self):
        """Exact single-site occupation frequencies E[c/n]."""
        return (self.probs @ self.counts) / self.n


def _log_multinomial(counts):
    value = math.lgamma(counts.sum() + 1.0)
    for c in counts:
        value -= math.lgamma(c + 1.0)
    return value


def enumerate_gibbs(model, n, coupling=None):
    """Exact n-particle Gibbs distribution on a finite atom space.

    Sums the tilted multinomial weights over all C(n+m-1, m-1) type classes;
    raises EnumerationCapError beyond the class-count cap.
    """
    if not isinstance(model, FiniteEnergyModel):
        raise EnergyError("exact enumeration needs a FiniteEnergyModel")
    m = model.space.n_atoms
    n_classes = math.comb(n + m - 1, m - 1)
    if n_classes > _ENUMERATION_CAP:
        raise EnumerationCapError(
            f"{n_classes} type classes exceed the enumeration cap {_ENUMERATION_CAP}"
        )
    if coupling is None:
        coupling = n * model.beta.beta_at(n)
    if not math.isfinite(coupling):
        raise EnergyError(f"enumeration needs a finite coupling, got {coupling!r}")
    counts = _compositions(n, m)
    log_pi = np.log(model.space.probs)
    log_weights = np.empty(len(counts))
    for row, c in enumerate(counts):
        energy = model.w_counts(c, n)
        log_weights[row] = (
            _log_multinomial(c) + float(c @ log_pi) - coupling * energy
        )
    from scipy.special import logsumexp

    log_z = float(logsumexp(log_weights))
    return GibbsEnumeration(
        counts=counts,
        log_probs=log_weights - log_z,
        log_partition=log_z,
        n=n,
        coupling=float(coupling),
    )
