"""Modular PSO core: the generalized velocity update rule and its module options.

A variant is a choice of one option per module; every particle velocity is
updated as

    v' = w1 * v + dnpp_term + random_perturbation

with the displacement term (dnpp) built from informants selected by the
topology and model-of-influence modules, optionally transformed by a random
matrix and an informed perturbation. w2 = w3 = 1 throughout; swarm size is
fixed at 20.

The single-particle operations double as the frozen formula contract; the
swarm loop applies the same formulas batched over all particles.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import benchmark

__all__ = [
    "MODULES",
    "OPTIONS",
    "SWARM_SIZE",
    "ModuleConfiguration",
    "ConfigurationError",
    "canonical_config",
    "PMState",
    "SwarmState",
    "RunResult",
    "neighborhood",
    "informants",
    "inertia_weight",
    "accel_coefficients",
    "random_matrix",
    "dnpp_term",
    "informed_perturbation",
    "random_perturbation",
    "update_pm",
    "init_state",
    "step",
    "run",
    "stable_seed",
]

SWARM_SIZE = 20

MODULES = ("dnpp", "ac", "top", "moi", "mtx", "iw", "p1", "p2")

OPTIONS = {
    "dnpp": ("rect", "sph", "add"),
    "ac": ("const", "sched"),
    "top": ("ring", "fc"),
    "moi": ("bon", "fim"),
    "mtx": ("id", "diag", "eucrot", "groups", "none"),
    "iw": ("c0.0", "c0.75", "adaptvel", "rank", "success"),
    "p1": ("none", "gauss"),
    "p2": ("none", "rect"),
}

# module option parameters
_ADD_R = 0.5
_AC_CONST = (1.4, 1.4)
_AC_SCHED = ((2.4, 0.5), (0.5, 2.4))  # (phi1 start/end), (phi2 start/end)
_IW_LOW, _IW_HIGH = 0.15, 0.95
_IW_STEP = 0.1
_ADAPTVEL_LAMBDA = 0.5
_EUCROT_ALPHA = 30.0
_EUCROT_BETA = 0.01
_PM_INITIAL = 0.5
_PM_SUCCESS = 40
_PM_FAILURE = 20
_PM_FLOOR = 1e-6
_PERT_EPS = 1e-12


class ConfigurationError(ValueError):
    """Unknown option label or violated structural constraint."""


@dataclass(frozen=True)
class ModuleConfiguration:
    """One point in the 8-module design space."""

    dnpp: str = "rect"
    ac: str = "const"
    top: str = "ring"
    moi: str = "bon"
    mtx: str = "id"
    iw: str = "c0.75"
    p1: str = "none"
    p2: str = "none"

    def __post_init__(self):
        for module in MODULES:
            value = getattr(self, module)
            if value not in OPTIONS[module]:
                raise ConfigurationError(f"unknown {module} option {value!r}")
        # the random-matrix module is only available inside rect/sph displacements
        if self.dnpp == "add" and self.mtx != "none":
            raise ConfigurationError("dnpp=add requires mtx=none")

    def token(self) -> str:
        return ";".join(f"{m}={getattr(self, m)}" for m in MODULES)

    @classmethod
    def from_token(cls, token: str) -> "ModuleConfiguration":
        parts = token.strip().split(";")
        if len(parts) != len(MODULES):
            raise ConfigurationError(f"bad configuration token {token!r}")
        kwargs = {}
        for part, module in zip(parts, MODULES):
            key, _, value = part.partition("=")
            if key != module or not value:
                raise ConfigurationError(f"bad configuration token {token!r}")
            kwargs[module] = value
        return cls(**kwargs)


def canonical_config() -> ModuleConfiguration:
    """The plain reference variant: rect/const/ring/bon/id/c0.75, no perturbations."""
    return ModuleConfiguration()


def stable_seed(*parts) -> int:
    """Platform-independent 128-bit seed from arbitrary string-able parts."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


# ---------------------------------------------------------------------------
# per-particle state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PMState:
    """Perturbation magnitude under the success-rate schedule."""

    pm: float = _PM_INITIAL
    successes: int = 0
    failures: int = 0


def update_pm(state: PMState, improved: bool) -> PMState:
    successes, failures = state.successes, state.failures
    if improved:
        successes += 1
    else:
        failures += 1
    if successes >= _PM_SUCCESS:
        return PMState(min(state.pm * 2.0, 1.0), 0, 0)
    if failures >= _PM_FAILURE:
        return PMState(max(state.pm / 2.0, _PM_FLOOR), 0, 0)
    return PMState(state.pm, successes, failures)


def _update_pm_arrays(pm, successes, failures, improved):
    """Vectorized form of update_pm over the whole swarm (in place)."""
    successes += improved
    failures += ~improved
    double = successes >= _PM_SUCCESS
    halve = (failures >= _PM_FAILURE) & ~double
    pm[double] = np.minimum(pm[double] * 2.0, 1.0)
    pm[halve] = np.maximum(pm[halve] / 2.0, _PM_FLOOR)
    reset = double | halve
    successes[reset] = 0
    failures[reset] = 0


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    personal_bests: np.ndarray
    personal_best_values: np.ndarray
    t: int
    t_max: int
    global_best_value: float
    global_best_index: int
    # success-rate PM state per particle, one triple per perturbation module
    pm1: np.ndarray
    pm1_successes: np.ndarray
    pm1_failures: np.ndarray
    pm2: np.ndarray
    pm2_successes: np.ndarray
    pm2_failures: np.ndarray
    improved: np.ndarray            # per-particle success flags from iteration t
    success_fraction: float         # swarm success fraction at t-1
    adaptive_omega: float = _IW_HIGH
    evaluations: int = 0

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def pm_state(self, module: str, i: int) -> PMState:
        if module == "p1":
            return PMState(float(self.pm1[i]), int(self.pm1_successes[i]), int(self.pm1_failures[i]))
        return PMState(float(self.pm2[i]), int(self.pm2_successes[i]), int(self.pm2_failures[i]))


@dataclass(frozen=True)
class RunResult:
    final_error: float
    trajectory: tuple[tuple[int, float], ...]  # (evaluations, best error)


# ---------------------------------------------------------------------------
# module operations (single-particle contract)
# ---------------------------------------------------------------------------

def neighborhood(top: str, swarm_size: int, i: int):
    """Indices informing particle i (always includes i), ascending."""
    if not 0 <= i < swarm_size:
        raise IndexError(f"particle {i} outside swarm of {swarm_size}")
    if top == "ring":
        return tuple(sorted({(i - 1) % swarm_size, i, (i + 1) % swarm_size}))
    if top == "fc":
        return tuple(range(swarm_size))
    raise ConfigurationError(f"unknown topology {top!r}")


def informants(moi: str, nbhd, personal_best_values, i: int):
    """Weighted informant list [(index, weight)].

    bon: cognitive (own best) and social (best of neighborhood) with unit
    weights; fim: every neighbor equally weighted, weights summing to 1.
    Ties resolve to the lowest index.
    """
    if moi == "bon":
        best = min(nbhd, key=lambda j: (personal_best_values[j], j))
        return [(i, 1.0), (best, 1.0)]
    if moi == "fim":
        w = 1.0 / len(nbhd)
        return [(j, w) for j in nbhd]
    raise ConfigurationError(f"unknown model of influence {moi!r}")


def accel_coefficients(ac: str, t: int, t_max: int):
    if ac == "const":
        return _AC_CONST
    if ac == "sched":
        frac = 0.0 if t_max <= 0 else min(max(t / t_max, 0.0), 1.0)
        (p1a, p1b), (p2a, p2b) = _AC_SCHED
        return (p1a + (p1b - p1a) * frac, p2a + (p2b - p2a) * frac)
    raise ConfigurationError(f"unknown acceleration schedule {ac!r}")


def inertia_weight(iw: str, state: SwarmState, i: int) -> float:
    """Inertia w1 for particle i under the configured strategy."""
    if iw == "c0.0":
        return 0.0
    if iw == "c0.75":
        return 0.75
    if iw == "adaptvel":
        return state.adaptive_omega
    if iw == "rank":
        return float(_rank_omegas(state.personal_best_values)[i])
    if iw == "success":
        return _IW_LOW + (_IW_HIGH - _IW_LOW) * state.success_fraction
    raise ConfigurationError(f"unknown inertia strategy {iw!r}")


def _rank_omegas(pb_values):
    """Affine map of personal-best ranks onto [0.15, 0.95]; rank 0 = best."""
    size = pb_values.size
    order = np.lexsort((np.arange(size), pb_values))
    ranks = np.empty(size, dtype=int)
    ranks[order] = np.arange(size)
    return _IW_LOW + (_IW_HIGH - _IW_LOW) * ranks / (size - 1)


def _update_adaptive_omega(state: SwarmState, domain_low, domain_high):
    """Step the shared omega so mean speed tracks a decaying ideal speed."""
    diag = float(np.linalg.norm(domain_high - domain_low))
    frac = 0.0 if state.t_max <= 0 else min(state.t / state.t_max, 1.0)
    ideal = _ADAPTVEL_LAMBDA * diag * (1.0 - frac)
    mean_speed = float(np.mean(np.linalg.norm(state.velocities, axis=1)))
    omega = state.adaptive_omega + (_IW_STEP if mean_speed < ideal else -_IW_STEP)
    state.adaptive_omega = min(max(omega, _IW_LOW), _IW_HIGH)


def _random_matrix_batch(kind: str, rng, dim: int, t: int, t_max: int, count: int):
    """Random linear operators for `count` particles.

    Returns None (identity), (count, dim) diagonals, or (count, dim, dim)
    orthogonal matrices.
    """
    if kind in ("id", "none"):
        return None
    if kind == "diag":
        return rng.random((count, dim))
    if kind == "eucrot":
        # rotations in floor(dim/2) disjoint random 2-planes; angle spread
        # shrinks as sigma = alpha * exp(-beta * t) degrees
        sigma = _EUCROT_ALPHA * math.exp(-_EUCROT_BETA * t)
        orders = rng.permuted(np.tile(np.arange(dim), (count, 1)), axis=1)
        angles = np.radians(rng.normal(0.0, sigma, (count, dim // 2)))
        mats = np.broadcast_to(np.eye(dim), (count, dim, dim)).copy()
        rows = np.arange(count)
        for p in range(dim // 2):
            a, b = orders[:, 2 * p], orders[:, 2 * p + 1]
            c, s = np.cos(angles[:, p])[:, None], np.sin(angles[:, p])[:, None]
            row_a = mats[rows, a].copy()
            row_b = mats[rows, b]
            mats[rows, a] = c * row_a - s * row_b
            mats[rows, b] = s * row_a + c * row_b
        return mats
    if kind == "groups":
        # block-diagonal random rotations; the block count grows linearly in t
        # from 1 to dim/2, progressively diagonalizing the operator
        max_blocks = max(dim // 2, 1)
        frac = 0.0 if t_max <= 0 else min(t / t_max, 1.0)
        n_blocks = 1 + int(round(frac * (max_blocks - 1)))
        orders = rng.permuted(np.tile(np.arange(dim), (count, 1)), axis=1)
        bounds = np.linspace(0, dim, n_blocks + 1).astype(int)
        mats = np.zeros((count, dim, dim))
        for b in range(n_blocks):
            k = int(bounds[b + 1] - bounds[b])
            if k == 0:
                continue
            q, r = np.linalg.qr(rng.standard_normal((count, k, k)))
            q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
            idx = orders[:, bounds[b]:bounds[b + 1]]
            for s in range(count):
                mats[s][np.ix_(idx[s], idx[s])] = q[s]
        return mats
    raise ConfigurationError(f"unknown random matrix kind {kind!r}")


def random_matrix(kind: str, rng, dim: int, t: int = 0, t_max: int = 1):
    """Single linear operator: None, a diagonal vector, or a dense matrix."""
    batch = _random_matrix_batch(kind, rng, dim, t, t_max, 1)
    return None if batch is None else batch[0]


def _apply_matrix(matrix, v):
    if matrix is None:
        return v
    if matrix.ndim == 1:
        return matrix * v
    return matrix @ v


def informed_perturbation(target, pm: float, rng):
    """Additive Gaussian offset around an informant target, per dimension."""
    sigma = pm * np.abs(target) + _PERT_EPS
    return rng.normal(0.0, 1.0, target.size) * sigma


def random_perturbation(pm: float, domain_width, rng):
    """Uniform noise in [-pm, pm] scaled by the domain width, per dimension."""
    return rng.uniform(-pm, pm, domain_width.size) * domain_width


def dnpp_term(dnpp: str, x_i, targets, phis, weights, matrix, rng):
    """Displacement toward the informant targets for one particle.

    targets: (k, D) informant positions (already perturbed if p1 is active);
    phis: per-informant acceleration factors (rect/sph); weights: informant
    weights summing to 1 (used by add).
    """
    x_i = np.asarray(x_i, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    phis = np.asarray(phis, dtype=float)
    if dnpp == "rect":
        term = np.zeros_like(x_i)
        for k in range(targets.shape[0]):
            u = rng.random(x_i.size)
            term += phis[k] * _apply_matrix(matrix, u * (targets[k] - x_i))
        return term
    if dnpp == "sph":
        points = x_i + phis[:, None] * (targets - x_i)
        center = (x_i + points.sum(axis=0)) / (1.0 + points.shape[0])
        radius = float(np.linalg.norm(center - x_i))
        if radius == 0.0:
            return np.zeros_like(x_i)
        direction = rng.normal(0.0, 1.0, x_i.size)
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:
            return np.zeros_like(x_i)
        r = radius * rng.random() ** (1.0 / x_i.size)
        sample = center + direction * (r / norm)
        return _apply_matrix(matrix, sample - x_i)
    if dnpp == "add":
        mean = np.asarray(weights, dtype=float) @ targets
        residual = mean - x_i
        noise = rng.normal(0.0, 1.0, x_i.size)
        return _ADD_R * residual + (1.0 - _ADD_R) * noise * np.abs(residual)
    raise ConfigurationError(f"unknown dnpp kind {dnpp!r}")


# ---------------------------------------------------------------------------
# swarm loop (batched over particles)
# ---------------------------------------------------------------------------

_NBHD_CACHE: dict = {}


def _nbhd_matrix(top: str, swarm_size: int) -> np.ndarray:
    key = (top, swarm_size)
    if key not in _NBHD_CACHE:
        _NBHD_CACHE[key] = np.array(
            [neighborhood(top, swarm_size, i) for i in range(swarm_size)]
        )
    return _NBHD_CACHE[key]


def init_state(problem, rng, t_max: int) -> SwarmState:
    """Uniform positions in the domain, zero velocities, bests evaluated."""
    d = problem.dimension
    positions = rng.uniform(problem.domain_low, problem.domain_high, (SWARM_SIZE, d))
    noise_rng = rng if problem.noisy else None
    values = np.array(
        [benchmark.evaluate(problem, positions[i], noise_rng) for i in range(SWARM_SIZE)]
    )
    best = int(np.argmin(values))
    return SwarmState(
        positions=positions,
        velocities=np.zeros((SWARM_SIZE, d)),
        personal_bests=positions.copy(),
        personal_best_values=values,
        t=0,
        t_max=t_max,
        global_best_value=float(values[best]),
        global_best_index=best,
        pm1=np.full(SWARM_SIZE, _PM_INITIAL),
        pm1_successes=np.zeros(SWARM_SIZE, dtype=np.int64),
        pm1_failures=np.zeros(SWARM_SIZE, dtype=np.int64),
        pm2=np.full(SWARM_SIZE, _PM_INITIAL),
        pm2_successes=np.zeros(SWARM_SIZE, dtype=np.int64),
        pm2_failures=np.zeros(SWARM_SIZE, dtype=np.int64),
        improved=np.zeros(SWARM_SIZE, dtype=bool),
        success_fraction=0.0,
        evaluations=SWARM_SIZE,
    )


def _informant_arrays(config, state, size):
    """Informant index matrix (size, k), acceleration factors, and weights."""
    nbhd = _nbhd_matrix(config.top, size)
    phi1, phi2 = accel_coefficients(config.ac, state.t, state.t_max)
    if config.moi == "bon":
        nb_values = state.personal_best_values[nbhd]
        social = nbhd[np.arange(size), np.argmin(nb_values, axis=1)]
        idx = np.column_stack([np.arange(size), social])
        phis = np.tile([phi1, phi2], (size, 1))
        weights = np.full((size, 2), 0.5)
    else:
        idx = nbhd
        weights = np.full(nbhd.shape, 1.0 / nbhd.shape[1])
        phis = (phi1 + phi2) * weights
    return idx, phis, weights


def _dnpp_batch(config, state, targets, phis, weights, mats, rng):
    x = state.positions
    size, d = x.shape
    if config.dnpp == "rect":
        u = rng.random(targets.shape)
        scaled = u * (targets - x[:, None, :])
        if mats is None:
            moved = scaled
        elif mats.ndim == 2:
            moved = mats[:, None, :] * scaled
        else:
            moved = np.einsum("sij,skj->ski", mats, scaled)
        return np.einsum("sk,ski->si", phis, moved)
    if config.dnpp == "sph":
        points = x[:, None, :] + phis[:, :, None] * (targets - x[:, None, :])
        center = (x + points.sum(axis=1)) / (1.0 + points.shape[1])
        offset = center - x
        radius = np.linalg.norm(offset, axis=1)
        direction = rng.normal(0.0, 1.0, (size, d))
        norms = np.linalg.norm(direction, axis=1)
        safe = np.where(norms == 0.0, 1.0, norms)
        rr = radius * rng.random(size) ** (1.0 / d)
        sample = center + direction * (rr / safe)[:, None]
        term = np.where((radius == 0.0)[:, None], 0.0, sample - x)
        if mats is None:
            return term
        if mats.ndim == 2:
            return mats * term
        return np.einsum("sij,sj->si", mats, term)
    # add
    mean = np.einsum("sk,skd->sd", weights, targets)
    residual = mean - x
    noise = rng.normal(0.0, 1.0, (size, d))
    return _ADD_R * residual + (1.0 - _ADD_R) * noise * np.abs(residual)


def step(state: SwarmState, config: ModuleConfiguration, problem, rng) -> SwarmState:
    """Advance the swarm one iteration (one evaluation per particle)."""
    size, d = state.positions.shape
    state.t += 1
    state.success_fraction = float(np.mean(state.improved))

    if config.iw == "adaptvel":
        _update_adaptive_omega(state, problem.domain_low, problem.domain_high)

    idx, phis, weights = _informant_arrays(config, state, size)
    targets = state.personal_bests[idx]
    if config.p1 == "gauss":
        sigma = state.pm1[:, None, None] * np.abs(targets) + _PERT_EPS
        targets = targets + rng.normal(0.0, 1.0, targets.shape) * sigma

    mats = _random_matrix_batch(config.mtx, rng, d, state.t, state.t_max, size)
    term = _dnpp_batch(config, state, targets, phis, weights, mats, rng)

    if config.iw == "c0.0":
        omega = 0.0
    elif config.iw == "c0.75":
        omega = 0.75
    elif config.iw == "adaptvel":
        omega = state.adaptive_omega
    elif config.iw == "rank":
        omega = _rank_omegas(state.personal_best_values)[:, None]
    else:
        omega = _IW_LOW + (_IW_HIGH - _IW_LOW) * state.success_fraction

    velocities = omega * state.velocities + term
    if config.p2 == "rect":
        width = problem.domain_high - problem.domain_low
        pert = rng.uniform(-state.pm2[:, None], state.pm2[:, None], (size, d)) * width
        velocities = velocities + pert

    state.positions = state.positions + velocities
    if problem.bounded_search:
        low, high = problem.domain_low, problem.domain_high
        out = (state.positions < low) | (state.positions > high)
        np.clip(state.positions, low, high, out=state.positions)
        velocities[out] = 0.0
    state.velocities = velocities

    noise_rng = rng if problem.noisy else None
    values = np.array(
        [benchmark.evaluate(problem, state.positions[i], noise_rng) for i in range(size)]
    )
    improved = values < state.personal_best_values
    state.improved = improved
    state.personal_best_values[improved] = values[improved]
    state.personal_bests[improved] = state.positions[improved]
    best = int(np.argmin(state.personal_best_values))
    state.global_best_value = float(state.personal_best_values[best])
    state.global_best_index = best

    if config.p1 == "gauss":
        _update_pm_arrays(state.pm1, state.pm1_successes, state.pm1_failures, improved)
    if config.p2 == "rect":
        _update_pm_arrays(state.pm2, state.pm2_successes, state.pm2_failures, improved)
    state.evaluations += size
    return state


def run(config: ModuleConfiguration, problem, budget: int, seed: int) -> RunResult:
    """Fixed-budget run; deterministic in (config, problem, seed).

    The budget is consumed in swarm-size blocks: initialization takes the
    first block, every iteration one more, so budget=20 yields the best
    initial sample with zero iterations.
    """
    if budget < SWARM_SIZE:
        raise ValueError(f"budget {budget} is below the swarm size {SWARM_SIZE}")
    iterations = budget // SWARM_SIZE - 1
    rng = np.random.Generator(np.random.Philox(key=seed & (2**128 - 1)))
    state = init_state(problem, rng, t_max=max(iterations, 1))

    trajectory = []
    next_mark = 1000
    while state.evaluations >= next_mark:
        trajectory.append((next_mark, benchmark.error_of(problem, state.global_best_value)))
        next_mark += 1000
    for _ in range(iterations):
        step(state, config, problem, rng)
        while state.evaluations >= next_mark:
            trajectory.append((next_mark, benchmark.error_of(problem, state.global_best_value)))
            next_mark += 1000
    final_error = benchmark.error_of(problem, state.global_best_value)
    if not trajectory or trajectory[-1][0] != state.evaluations:
        trajectory.append((state.evaluations, final_error))
    return RunResult(final_error=final_error, trajectory=tuple(trajectory))
