"""Benchmark problem classes f1..f25 with shift/rotation/noise/composition transforms.

Each problem is built deterministically from a (function id, dimension, seed)
spec. Transforms are synthetic by default: rotations come from orthonormalizing
a seeded Gaussian matrix, shifts are drawn uniformly from the central 80% of
the domain (special rows place them on or outside the bounds instead). A
whitespace-separated data file can override shift and rotation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FUNCTION_IDS",
    "ProblemSpec",
    "ProblemInstance",
    "BenchmarkError",
    "EvaluatorDefectError",
    "make_problem",
    "evaluate",
    "error_of",
    "instance_to_json",
    "instance_from_json",
    "load_transform_file",
]


class BenchmarkError(ValueError):
    """Invalid problem spec, transform file, or evaluation input."""


class EvaluatorDefectError(RuntimeError):
    """A best-found value fell below the known optimum beyond tolerance."""


FUNCTION_IDS = tuple(f"f{i}" for i in range(1, 26))

# Optimum guard used by error_of.
_OPTIMUM_GUARD = 1e-6

# function_id -> (name, type, properties, domain half-width or (low, high), optimum,
#                 bounded, rotated, noisy)
_ROWS = {
    "f1": ("Shifted Sphere", "Unimodal", "Separable, shifted", 100.0, 0.0, True, False, False),
    "f2": ("Shifted Schwefel 1.2", "Unimodal", "Non-separable, shifted", 100.0, 0.0, True, False, False),
    "f3": ("Shifted Rotated High Conditioned Elliptic", "Unimodal", "Non-separable, rotated, shifted", 100.0, 0.0, True, True, False),
    "f4": ("Shifted Schwefel 1.2 with Noise", "Unimodal", "Non-separable, noisy", 100.0, 0.0, True, False, True),
    "f5": ("Schwefel 2.6 with Optimum on Bounds", "Unimodal", "Non-separable, optimum on bounds", 100.0, 0.0, True, False, False),
    "f6": ("Shifted Rosenbrock", "Multimodal", "Non-separable, narrow valley", 100.0, 0.0, True, False, False),
    "f7": ("Shifted Rotated Griewank without Bounds", "Multimodal", "Non-separable, rotated", 600.0, 0.0, False, True, False),
    "f8": ("Shifted Rotated Ackley with Optimum on Bounds", "Multimodal", "Non-separable, rotated, bounds", 32.0, 0.0, True, True, False),
    "f9": ("Shifted Rastrigin", "Multimodal", "Separable, many local optima", 5.0, 0.0, True, False, False),
    "f10": ("Shifted Rotated Rastrigin", "Multimodal", "Non-separable, rotated, many optima", 5.0, 0.0, True, True, False),
    "f11": ("Shifted Rotated Weierstrass", "Multimodal", "Non-separable, fractal landscape", 0.5, 0.0, True, True, False),
    "f12": ("Schwefel 2.13", "Multimodal", "Non-separable, shifted", math.pi, 0.0, True, False, False),
    "f13": ("Expanded Griewank plus Rosenbrock", "Multimodal", "Non-separable, expanded hybrid", (-3.0, 1.0), 0.0, True, False, False),
    "f14": ("Shifted Rotated Expanded Schaffer F6", "Multimodal", "Non-separable, rotated", 100.0, 0.0, True, True, False),
    "f15": ("Composition 1", "Hybrid", "Mixed, partly separable", 5.0, 0.0, True, False, False),
    "f16": ("Rotated Composition 1", "Hybrid", "Non-separable, rotated", 5.0, 0.0, True, True, False),
    "f17": ("Rotated Composition 1 with Noise", "Hybrid", "Non-separable, noisy", 5.0, 0.0, True, True, True),
    "f18": ("Rotated Composition 2", "Hybrid", "Non-separable, traps, flat regions", 5.0, 0.0, True, True, False),
    "f19": ("Rotated Composition 2 with Narrow Basin", "Hybrid", "Non-separable, narrow basin", 5.0, 100.0, True, True, False),
    "f20": ("Rotated Composition 2 with Optimum on Bounds", "Hybrid", "Non-separable, optimum on bounds", 5.0, 0.0, True, True, False),
    "f21": ("Rotated Composition 3", "Hybrid", "Non-separable, rotated", 5.0, 200.0, True, True, False),
    "f22": ("Rotated Composition 3 Ill-Conditioned", "Hybrid", "Non-separable, ill-conditioned", 5.0, 300.0, True, True, False),
    "f23": ("Non-Continuous Rotated Composition", "Hybrid", "Non-separable, non-continuous", 5.0, 300.0, True, True, False),
    "f24": ("Rotated Composition 4", "Hybrid", "Non-separable, rotated, complex", 5.0, 200.0, True, True, False),
    "f25": ("Rotated Composition 4 without Bounds", "Hybrid", "Non-separable, opt outside init", 5.0, 200.0, False, True, False),
}

# f13/f14 carry both the table label and the prose label.
_EXPANDED = {"f13", "f14"}

# Composition rows: (component base names, component rotated?, sigma per component)
_COMPOSITIONS = {
    "f15": (("rastrigin", "weierstrass", "griewank"), False, (1.0, 1.0, 1.0)),
    "f16": (("rastrigin", "weierstrass", "griewank"), True, (1.0, 1.0, 1.0)),
    "f17": (("rastrigin", "weierstrass", "griewank"), True, (1.0, 1.0, 1.0)),
    "f18": (("ackley", "rastrigin", "sphere"), True, (1.0, 1.0, 1.0)),
    "f19": (("ackley", "rastrigin", "sphere"), True, (0.1, 1.0, 1.0)),
    "f20": (("ackley", "rastrigin", "sphere"), True, (1.0, 1.0, 1.0)),
    "f21": (("schaffer_f6", "rastrigin", "f8f2"), True, (1.0, 1.0, 1.0)),
    "f22": (("schaffer_f6", "rastrigin", "elliptic"), True, (1.0, 1.0, 1.0)),
    "f23": (("schaffer_f6", "rastrigin", "elliptic"), True, (1.0, 1.0, 1.0)),
    "f24": (("weierstrass", "schaffer_f6", "f8f2"), True, (1.0, 1.0, 1.0)),
    "f25": (("weierstrass", "schaffer_f6", "f8f2"), True, (1.0, 1.0, 1.0)),
}

# Natural half-width of each base function's landscape, used to rescale
# composition arguments from the [-5, 5] composition box.
_BASE_HALF_WIDTH = {
    "sphere": 100.0,
    "elliptic": 100.0,
    "rastrigin": 5.0,
    "weierstrass": 0.5,
    "griewank": 600.0,
    "ackley": 32.0,
    "schaffer_f6": 100.0,
    "f8f2": 2.0,
}

_COMPOSITION_SCALE = 2000.0
_COMPOSITION_BIASES = (0.0, 100.0, 200.0)
_NOISE_FACTOR = 0.1


@dataclass(frozen=True)
class ProblemSpec:
    """One row of the benchmark table at a given dimension and transform seed."""

    function_id: str
    dimension: int
    transform_seed: int = 0
    data_source: str = "synthetic"

    def __post_init__(self):
        if self.function_id not in _ROWS:
            raise BenchmarkError(f"unknown function_id {self.function_id!r}")
        if self.dimension < 2:
            raise BenchmarkError("dimension must be >= 2")


@dataclass(frozen=True)
class CompositionComponent:
    base: str
    shift: np.ndarray
    rotation: np.ndarray | None
    lam: float
    sigma: float
    bias: float
    fmax: float


@dataclass(frozen=True)
class ProblemInstance:
    """Immutable, fully materialized benchmark problem.

    Safe to share across concurrent evaluators; the noisy rows take an
    explicit RNG in :func:`evaluate`, so noise concurrency is the caller's
    contract.
    """

    spec: ProblemSpec
    shift_vector: np.ndarray
    rotation: np.ndarray | None
    domain_low: np.ndarray
    domain_high: np.ndarray
    optimum_value: float
    bounded_search: bool
    noisy: bool
    taxonomy: dict = field(repr=False)
    # Extra numeric payloads: f5 (linear system), f12 (trig matrices),
    # compositions (component list).
    linear_a: np.ndarray | None = field(default=None, repr=False)
    linear_b: np.ndarray | None = field(default=None, repr=False)
    trig_a: np.ndarray | None = field(default=None, repr=False)
    trig_b: np.ndarray | None = field(default=None, repr=False)
    components: tuple[CompositionComponent, ...] = field(default=(), repr=False)

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    def optimizer(self) -> np.ndarray:
        """A point x with evaluate(x) == optimum_value (noise aside)."""
        if self.spec.function_id == "f6":
            return self.shift_vector + 1.0
        return self.shift_vector.copy()


# ---------------------------------------------------------------------------
# base functions, minimum 0 at z = 0
# ---------------------------------------------------------------------------

def _sphere(z):
    return float(np.dot(z, z))


def _schwefel_12(z):
    c = np.cumsum(z)
    return float(np.dot(c, c))


def _elliptic(z):
    d = z.size
    w = np.power(1e6, np.arange(d) / (d - 1))
    return float(np.dot(w, z * z))


def _rosenbrock_canonical(y):
    # minimum 0 at y = 1
    return float(np.sum(100.0 * (y[:-1] ** 2 - y[1:]) ** 2 + (y[:-1] - 1.0) ** 2))


def _rastrigin(z):
    return float(np.sum(z * z - 10.0 * np.cos(2.0 * math.pi * z) + 10.0))


def _ackley(z):
    d = z.size
    s1 = math.sqrt(np.dot(z, z) / d)
    s2 = np.mean(np.cos(2.0 * math.pi * z))
    return float(-20.0 * math.exp(-0.2 * s1) - math.exp(s2) + 20.0 + math.e)


def _griewank(z):
    d = z.size
    prod = np.prod(np.cos(z / np.sqrt(np.arange(1, d + 1))))
    return float(np.dot(z, z) / 4000.0 - prod + 1.0)


_WEIER_K = np.arange(21)
_WEIER_A = 0.5 ** _WEIER_K
_WEIER_B = 2.0 * math.pi * 3.0 ** _WEIER_K
_WEIER_CONST = float(np.sum(_WEIER_A * np.cos(_WEIER_B * 0.5)))


def _weierstrass(z):
    terms = _WEIER_A * np.cos(np.outer(z + 0.5, _WEIER_B))
    return float(np.sum(terms) - z.size * _WEIER_CONST)


def _schaffer_pair(a, b):
    s = a * a + b * b
    return 0.5 + (np.sin(np.sqrt(s)) ** 2 - 0.5) / (1.0 + 0.001 * s) ** 2


def _schaffer_f6(z):
    return float(np.sum(_schaffer_pair(z, np.roll(z, -1))))


def _f8f2(z):
    # expanded Griewank-of-Rosenbrock; minimum 0 at z = 0 via the +1 offset
    y = z + 1.0
    a, b = y, np.roll(y, -1)
    f2 = 100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2
    return float(np.sum(f2 * f2 / 4000.0 - np.cos(f2) + 1.0))


_BASES = {
    "sphere": _sphere,
    "elliptic": _elliptic,
    "rastrigin": _rastrigin,
    "weierstrass": _weierstrass,
    "griewank": _griewank,
    "ackley": _ackley,
    "schaffer_f6": _schaffer_f6,
    "f8f2": _f8f2,
}


# ---------------------------------------------------------------------------
# instance construction
# ---------------------------------------------------------------------------

def _orthonormal(rng, d):
    """Orthonormalize a Gaussian matrix; sign-fixed so the result is unique."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _central_shift(rng, low, high):
    width = high - low
    return low + width * (0.1 + 0.8 * rng.random(low.size))


def load_transform_file(path, dimension):
    """Read a whitespace-separated shift (and optional rotation) file.

    Accepts D values (shift only) or D + D*D values (shift, then rotation in
    row-major order).
    """
    with open(path) as fh:
        tokens = fh.read().split()
    try:
        values = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise BenchmarkError(f"non-numeric token in transform file {path}") from exc
    d = dimension
    if values.size == d:
        return values, None
    if values.size == d + d * d:
        return values[:d], values[d:].reshape(d, d)
    raise BenchmarkError(
        f"transform file {path} holds {values.size} values; expected {d} or {d + d * d}"
    )


def _domain(function_id, d):
    row = _ROWS[function_id]
    if isinstance(row[3], tuple):
        low, high = row[3]
    else:
        low, high = -row[3], row[3]
    return np.full(d, low), np.full(d, high)


def make_problem(spec: ProblemSpec) -> ProblemInstance:
    """Materialize a spec into a deterministic instance."""
    fid, d = spec.function_id, spec.dimension
    name, type_label, properties, _, optimum, bounded, rotated, noisy = _ROWS[fid]
    low, high = _domain(fid, d)
    width = high - low
    rng = np.random.default_rng(
        np.random.SeedSequence([int(spec.transform_seed) & (2**64 - 1), int(fid[1:]), d])
    )

    # Draw order is fixed: rotation first, then shift, then row extras.
    rotation = _orthonormal(rng, d) if rotated else None
    shift = _central_shift(rng, low, high)
    if fid == "f5":
        quarter = max(1, d // 4)
        shift[:quarter] = low[:quarter]
        shift[d - quarter:] = high[d - quarter:]
    elif fid == "f8":
        shift[0::2] = low[0::2]
    elif fid == "f25":
        # optimum outside the initialization box
        shift = high + width * (0.1 + 0.2 * rng.random(d))
    elif fid == "f20":
        shift[1::2] = high[1::2]

    external_rotation = None
    if spec.data_source != "synthetic":
        file_shift, external_rotation = load_transform_file(spec.data_source, d)
        shift = file_shift
        if external_rotation is not None:
            err = np.max(np.abs(external_rotation.T @ external_rotation - np.eye(d)))
            if err > 1e-10:
                raise BenchmarkError(
                    f"external rotation is not orthogonal (max deviation {err:.3e})"
                )
            if rotated:
                rotation = external_rotation

    linear_a = linear_b = trig_a = trig_b = None
    components: tuple[CompositionComponent, ...] = ()

    if fid == "f5":
        while True:
            linear_a = rng.integers(-500, 501, size=(d, d)).astype(float)
            if np.linalg.matrix_rank(linear_a) == d:
                break
        linear_b = linear_a @ shift
    elif fid == "f12":
        trig_a = rng.integers(-100, 101, size=(d, d)).astype(float)
        trig_b = rng.integers(-100, 101, size=(d, d)).astype(float)
    elif fid in _COMPOSITIONS:
        bases, comp_rotated, sigmas = _COMPOSITIONS[fid]
        comps = []
        for k, base in enumerate(bases):
            comp_shift = shift if k == 0 else _central_shift(rng, low, high)
            comp_rot = _orthonormal(rng, d) if comp_rotated else None
            lam = 5.0 / _BASE_HALF_WIDTH[base]
            ref = np.full(d, 5.0) / lam
            if comp_rot is not None:
                ref = comp_rot @ ref
            fmax = abs(_BASES[base](ref))
            comps.append(
                CompositionComponent(
                    base=base,
                    shift=comp_shift,
                    rotation=comp_rot,
                    lam=lam,
                    sigma=sigmas[k],
                    bias=_COMPOSITION_BIASES[k],
                    fmax=max(fmax, 1e-12),
                )
            )
        components = tuple(comps)
        rotation = None  # per-component rotations replace the global one

    taxonomy = {
        "name": name,
        "type": type_label,
        "properties": properties,
        "labels": [type_label] + (["Expanded multimodal"] if fid in _EXPANDED else []),
    }

    instance = ProblemInstance(
        spec=spec,
        shift_vector=shift,
        rotation=rotation,
        domain_low=low,
        domain_high=high,
        optimum_value=float(optimum),
        bounded_search=bounded,
        noisy=noisy,
        taxonomy=taxonomy,
        linear_a=linear_a,
        linear_b=linear_b,
        trig_a=trig_a,
        trig_b=trig_b,
        components=components,
    )
    for arr in (shift, low, high):
        arr.setflags(write=False)
    return instance


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _composition_value(instance, x):
    d = x.size
    vals = np.empty(len(instance.components))
    weights = np.empty(len(instance.components))
    for k, comp in enumerate(instance.components):
        delta = x - comp.shift
        z = delta / comp.lam
        if comp.rotation is not None:
            z = comp.rotation @ z
        vals[k] = _COMPOSITION_SCALE * _BASES[comp.base](z) / comp.fmax
        weights[k] = math.exp(-float(np.dot(delta, delta)) / (2.0 * d * comp.sigma**2))
    kmax = int(np.argmax(weights))
    damp = 1.0 - weights[kmax] ** 10
    scaled = weights * damp
    scaled[kmax] = weights[kmax]
    total = scaled.sum()
    if total <= 0.0:
        # all weights underflowed; fall back to the nearest component
        scaled[:] = 0.0
        scaled[kmax] = 1.0
        total = 1.0
    biases = np.array([c.bias for c in instance.components])
    return float(np.dot(scaled / total, vals + biases))


def evaluate(instance: ProblemInstance, x, rng=None) -> float:
    """Objective value at x. Noisy rows require an explicit rng."""
    x = np.asarray(x, dtype=float)
    fid = instance.spec.function_id
    d = instance.dimension
    if x.shape != (d,):
        raise BenchmarkError(f"{fid}: expected point of length {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise BenchmarkError(f"{fid}: non-finite point")
    if instance.noisy and rng is None:
        raise BenchmarkError(f"{fid} is noisy and needs an explicit rng")

    if instance.components:
        if fid == "f23":
            anchor = instance.shift_vector
            far = np.abs(x - anchor) >= 0.5
            x = np.where(far, np.round(2.0 * x) / 2.0, x)
        base = _composition_value(instance, x)
    elif fid == "f5":
        base = float(np.max(np.abs(instance.linear_a @ x - instance.linear_b)))
    elif fid == "f12":
        sin_s, cos_s = np.sin(instance.shift_vector), np.cos(instance.shift_vector)
        sin_x, cos_x = np.sin(x), np.cos(x)
        a_vec = instance.trig_a @ sin_s + instance.trig_b @ cos_s
        b_vec = instance.trig_a @ sin_x + instance.trig_b @ cos_x
        diff = a_vec - b_vec
        base = float(np.dot(diff, diff))
    elif fid == "f6":
        base = _rosenbrock_canonical(x - instance.shift_vector)
    else:
        z = x - instance.shift_vector
        if instance.rotation is not None:
            z = instance.rotation @ z
        base = {
            "f1": _sphere,
            "f2": _schwefel_12,
            "f3": _elliptic,
            "f4": _schwefel_12,
            "f7": _griewank,
            "f8": _ackley,
            "f9": _rastrigin,
            "f10": _rastrigin,
            "f11": _weierstrass,
            "f13": _f8f2,
            "f14": _schaffer_f6,
        }[fid](z)

    if instance.noisy:
        base *= 1.0 + _NOISE_FACTOR * abs(rng.standard_normal())
    return base + instance.optimum_value


def error_of(instance: ProblemInstance, best_value: float) -> float:
    """Distance of a best-found value to the known optimum, floored at 0."""
    gap = best_value - instance.optimum_value
    if gap < -_OPTIMUM_GUARD:
        raise EvaluatorDefectError(
            f"{instance.spec.function_id}: best value {best_value} is below the "
            f"optimum {instance.optimum_value} beyond tolerance"
        )
    return max(gap, 0.0)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def instance_to_json(instance: ProblemInstance) -> str:
    doc = {
        "spec": {
            "function_id": instance.spec.function_id,
            "dimension": instance.spec.dimension,
            "transform_seed": instance.spec.transform_seed,
            "data_source": instance.spec.data_source,
        },
        "shift": instance.shift_vector.tolist(),
        "rotation": None if instance.rotation is None else instance.rotation.ravel().tolist(),
        "domain_low": instance.domain_low.tolist(),
        "domain_high": instance.domain_high.tolist(),
        "optimum_value": instance.optimum_value,
        "bounded_search": instance.bounded_search,
        "noisy": instance.noisy,
        "taxonomy": instance.taxonomy,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def instance_from_json(text: str) -> ProblemInstance:
    """Rebuild an instance from its JSON document.

    The document's spec drives a full reconstruction; the stored shift is
    cross-checked so format drift cannot silently change the problem.
    """
    doc = json.loads(text)
    spec = ProblemSpec(**doc["spec"])
    instance = make_problem(spec)
    stored = np.asarray(doc["shift"], dtype=float)
    if stored.shape != instance.shift_vector.shape or not np.allclose(
        stored, instance.shift_vector, rtol=0.0, atol=1e-12
    ):
        raise BenchmarkError("stored shift does not match the reconstructed instance")
    return instance
