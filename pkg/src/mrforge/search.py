"""Monte-Carlo search for new affine metamorphic relations.

The search minimizes, over a fixed sample of inputs ``x_s``::

    J(g) = mean_s  |f(g(x_s)) - f(x_s)|  /  (eps + prod_{k in known} |g(x_s) - k(x_s)|**2)

A candidate is accepted when it lowers ``J``; otherwise it is still accepted with a
constant probability ``p``.  Each admitted MR joins ``known`` and so multiplies the
denominator for every later search, steering it away from relations already found.

With ``normalize=True`` (the default) the numerator is measured relative to
``|f(x_s)|`` and each distance factor is measured in per-block units and capped at
one.  The cap closes the escape route where ``J`` shrinks merely because the
candidate drifts far away along directions ``f`` ignores.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .algebra import AffineMR, FlatLayout, MRSet, apply_mr, dense_mr, flatten, mr_distance, split_batch
from .errors import DimensionCapError, NonFiniteCostError, SearchFailureError, ValidationError
from .model import GridSpec, Variant, energy_arrays, random_sea_level

TINY = 1e-300


def flat_function(layout: FlatLayout, variant, strict: bool = False):
    """Return ``f(X) -> E`` evaluating the energy series on a batch of flat vectors.

    Rows with ``F == 0`` come back as ``nan`` rather than raising, so a batch never
    aborts halfway.  With ``strict`` the same happens to rows whose coordinates are
    not strictly monotone; otherwise those rows are evaluated by the bare stencil.
    """
    variant = Variant.coerce(variant)

    def f(X):
        X = np.atleast_2d(X)
        eta, xs, ys, _, G, F = split_batch(X, layout)
        with np.errstate(all="ignore"):
            E = energy_arrays(eta, xs, ys, G, F, variant)
        bad = F == 0.0
        if strict:
            bad = bad | ~_monotone_rows(xs) | ~_monotone_rows(ys)
        if bad.any():
            E[bad] = np.nan
        return E

    f.layout = layout
    f.variant = variant
    return f


def _monotone_rows(c):
    d = np.diff(c, axis=-1)
    return np.all(d > 0, axis=-1) | np.all(d < 0, axis=-1)


def block_scales(samples: np.ndarray, layout: FlatLayout) -> np.ndarray:
    """Per-slot unit: RMS magnitude of the slot's block over all samples."""
    units = np.ones(layout.total_dim)
    for name, seg in layout.segments.items():
        rms = math.sqrt(float(np.mean(samples[:, seg] ** 2)))
        units[seg] = rms if rms > 0 else 1.0
    return units


def make_samples(grid: GridSpec, seed: int, n: int = 8, amplitude: float = 1.0) -> np.ndarray:
    """``n`` seeded random inputs, flattened into the rows of a matrix."""
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return np.stack([flatten(random_sea_level(grid, int(s), amplitude)) for s in seeds])


@dataclass
class CostConfig:
    samples: np.ndarray
    layout: FlatLayout
    function_id: str = "cyclic"
    epsilon: float = 1e-12
    normalize: bool = True
    aggregate: str = "rms"

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.size == 0:
            raise ValidationError("cost configuration needs at least one sample")
        if self.samples.shape[1] != self.layout.total_dim:
            raise ValidationError("samples do not match the layout")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("samples must be finite")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.aggregate not in ("rms", "mean"):
            raise ValidationError(f"aggregate must be 'rms' or 'mean', got {self.aggregate!r}")
        Variant.coerce(self.function_id)
        self.units = block_scales(self.samples, self.layout)

    @classmethod
    def for_grid(cls, grid: GridSpec, seed: int = 0, n_samples: int = 8, **kw) -> "CostConfig":
        layout = FlatLayout(grid.nt, grid.ny, grid.nx)
        return cls(samples=make_samples(grid, seed, n_samples), layout=layout, **kw)

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "normalize": self.normalize,
                "aggregate": self.aggregate, "function_id": self.function_id}


@dataclass
class SearchConfig:
    p: float = 0.1
    mutation_scale: float = 0.05
    mutation_fraction: float = 0.0025
    max_steps: int = 50_000
    convergence_window: int = 2000
    convergence_tol: float = 1e-10
    J_tol: float = 1e-6
    d_min: float = 1e-3
    restarts: int = 3
    seed: int = 0
    init_scale: float = 0.5
    init_mode: str = "identity_noise"
    init_attempts: int = 1000
    adapt_scale: bool = True
    success_rate: float = 0.2
    reset_after: int | None = 5
    cooling: float | None = None
    max_dim: int = 200

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"acceptance threshold p must lie in [0, 1], got {self.p}")
        if not self.mutation_scale > 0 or not self.init_scale >= 0:
            raise ValidationError("mutation_scale must be positive and init_scale non-negative")
        if not 0.0 < self.mutation_fraction <= 1.0:
            raise ValidationError("mutation_fraction must lie in (0, 1]")
        for name in ("max_steps", "convergence_window", "restarts", "init_attempts", "max_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.init_mode not in ("identity_noise", "pure_random"):
            raise ValidationError(f"unknown init_mode {self.init_mode!r}")
        if not 0.0 < self.success_rate < 1.0:
            raise ValidationError("success_rate must lie in (0, 1)")
        if self.reset_after is not None and self.reset_after < 1:
            raise ValidationError("reset_after must be at least 1 (or None to disable)")
        if self.cooling is not None and not 0.0 < self.cooling <= 1.0:
            raise ValidationError("cooling factor must lie in (0, 1]")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown search settings: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SearchTrace:
    seed: int
    steps: list = field(default_factory=list)
    proposed: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    best: list = field(default_factory=list)
    status: str = "step-limit"
    final_cost: float = math.inf

    def __len__(self):
        return len(self.steps)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "proposed_cost", "accepted", "best_cost"])
            for row in zip(self.steps, self.proposed, self.accepted, self.best):
                w.writerow([row[0], repr(float(row[1])), int(row[2]), repr(float(row[3]))])


class CostEvaluator:
    """Cost of candidates against a fixed ``known`` set, with the known images cached."""

    def __init__(self, known: MRSet, cfg: CostConfig, f=None):
        self.cfg = cfg
        self.f = f or flat_function(cfg.layout, cfg.function_id)
        X = cfg.samples
        self.fx = self.f(X)
        if not np.all(np.isfinite(self.fx)):
            raise ValidationError("function under test is not finite on the cost samples")
        self.fx_norm = np.linalg.norm(self.fx, axis=1)
        self.known_images = []
        for k in known:
            if k.layout != cfg.layout or k.out_layout != cfg.layout:
                raise ValidationError(f"known MR {k.label!r} does not act on the sample layout")
            self.known_images.append(apply_mr(k, X))

    def terms(self, g: AffineMR) -> np.ndarray:
        """Per-sample cost contributions; raises on the first non-finite one."""
        cfg = self.cfg
        with np.errstate(all="ignore"):
            gx = apply_mr(g, cfg.samples)
            num = np.linalg.norm(self.f(gx) - self.fx, axis=1)
            if cfg.normalize:
                num = num / np.maximum(self.fx_norm, TINY)
            den = np.ones(len(num))
            for image in self.known_images:
                diff = gx - image
                if cfg.normalize:
                    diff = diff / cfg.units
                    sq = np.minimum(np.mean(diff * diff, axis=1), 1.0)
                else:
                    sq = np.sum(diff * diff, axis=1)
                den = den * sq
            out = num / (cfg.epsilon + den)
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            raise NonFiniteCostError(bad[0])
        return out

    def __call__(self, g: AffineMR) -> float:
        t = self.terms(g)
        if self.cfg.aggregate == "rms":
            return float(np.sqrt(np.mean(t * t)))
        return float(np.mean(t))

    def safe(self, g: AffineMR) -> float:
        try:
            return self(g)
        except NonFiniteCostError:
            return math.inf


def cost(g_n: AffineMR, known: MRSet, cfg: CostConfig, f=None) -> float:
    """Sample-mean cost of candidate ``g_n`` given the already-known MRs."""
    if len(known) == 0:
        raise ValidationError("known set must contain at least the identity")
    return CostEvaluator(known, cfg, f)(g_n)


def _param_mask(layout: FlatLayout, attrs=None) -> np.ndarray:
    """Boolean mask over ``[gamma.ravel() | beta]`` of entries the search may move."""
    n = layout.total_dim
    if attrs is None:
        return np.ones(n * n + n, dtype=bool)
    slots = np.zeros(n, dtype=bool)
    slots[list(attrs)] = True
    return np.concatenate([np.outer(slots, slots).ravel(), slots])


def propose_mutation(current: AffineMR, scale: float, rng, *, fraction: float = 0.01,
                     mask=None, units=None) -> AffineMR:
    """Perturb a random sparse subset of the entries of ``current``.

    ``fraction`` of the permitted entries (at least one) receive normal noise with
    standard deviation ``scale``.  With ``units`` given, the noise on ``gamma[i, j]``
    is expressed in units of ``units[i] / units[j]`` and on ``beta[i]`` in units of
    ``units[i]``, which keeps perturbations comparable across slots of very
    different magnitude.
    """
    if not current.is_dense:
        raise ValidationError("mutations apply to dense MRs only")
    n = current.layout.total_dim
    params = np.concatenate([current.gamma.ravel(), current.beta])
    allowed = np.flatnonzero(mask) if mask is not None else np.arange(params.size)
    count = max(1, int(round(fraction * allowed.size)))
    chosen = rng.choice(allowed, size=min(count, allowed.size), replace=False)
    step = rng.normal(0.0, scale, size=chosen.size)
    if units is not None:
        rows = np.where(chosen < n * n, chosen // n, chosen - n * n)
        cols = chosen % n
        step = step * np.where(chosen < n * n, units[rows] / units[cols], units[rows])
    params[chosen] += step
    return dense_mr(params[: n * n].reshape(n, n), params[n * n:], current.layout,
                    label=current.label)


def accept_step(delta_cost: float, p: float, rng) -> bool:
    if delta_cost < 0:
        return True
    return bool(rng.random() < p)


def _initial_candidate(layout, cfg: SearchConfig, rng, mask, units):
    n = layout.total_dim
    noise = rng.normal(0.0, cfg.init_scale, size=n * n + n)
    if units is not None:
        noise[: n * n] *= (units[:, None] / units[None, :]).ravel()
        noise[n * n:] *= units
    if mask is not None:
        noise = np.where(mask, noise, 0.0)
    gamma = noise[: n * n].reshape(n, n)
    if cfg.init_mode == "identity_noise" or mask is not None:
        # masked searches keep every frozen entry at its identity value
        base = np.eye(n)
        if cfg.init_mode == "pure_random":
            base = np.where(mask[: n * n].reshape(n, n), 0.0, base)
        gamma = gamma + base
    return dense_mr(gamma, noise[n * n:], layout)


def _check_dim(layout: FlatLayout, cfg: SearchConfig):
    if layout.total_dim > cfg.max_dim:
        raise DimensionCapError(
            f"flattened input has {layout.total_dim} entries, above the dense-search cap of "
            f"{cfg.max_dim}; shrink the grid (e.g. 3x3x2) or raise max_dim"
        )


def minimize(f, known: MRSet, cost_cfg: CostConfig, search_cfg: SearchConfig, *,
             seed: int | None = None, attrs=None):
    """Run one Monte-Carlo descent from a random start; return ``(best, trace)``.

    ``attrs`` optionally restricts mutation to the ``gamma``/``beta`` entries whose
    row and column both index one of the given flat slots.
    """
    layout = cost_cfg.layout
    _check_dim(layout, search_cfg)
    seed = search_cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    evaluate = CostEvaluator(known, cost_cfg, f)
    mask = None if attrs is None else _param_mask(layout, attrs)
    units = cost_cfg.units if cost_cfg.normalize else None

    for _ in range(search_cfg.init_attempts):
        current = _initial_candidate(layout, search_cfg, rng, mask, units)
        current_cost = evaluate.safe(current)
        if math.isfinite(current_cost):
            break
    else:
        raise SearchFailureError(f"no finite starting candidate in {search_cfg.init_attempts} attempts")

    best, best_cost = current, current_cost
    trace = SearchTrace(seed=int(seed))
    sigma = search_cfg.mutation_scale
    p = search_cfg.p
    # step-size rule: equilibrium when a fraction `success_rate` of proposals improve
    grow = 2.0 ** 0.25
    shrink = grow ** (-search_cfg.success_rate / (1.0 - search_cfg.success_rate))
    sigma_max = 10.0 * search_cfg.mutation_scale
    window = search_cfg.convergence_window
    stalled = 0
    for step in range(search_cfg.max_steps):
        proposal = propose_mutation(current, sigma, rng, fraction=search_cfg.mutation_fraction,
                                    mask=mask, units=units)
        proposed_cost = evaluate.safe(proposal)
        improved = proposed_cost < current_cost
        # non-finite proposals are rejected outright, without an acceptance draw
        accepted = math.isfinite(proposed_cost) and accept_step(proposed_cost - current_cost, p, rng)
        if accepted:
            current, current_cost = proposal, proposed_cost
        if proposed_cost < best_cost:
            best, best_cost = proposal, proposed_cost
            stalled = 0
        else:
            stalled += 1
        if search_cfg.reset_after and stalled >= search_cfg.reset_after and current_cost > best_cost:
            current, current_cost = best, best_cost
            stalled = 0
        if search_cfg.adapt_scale:
            sigma = min(max(sigma * (grow if improved else shrink), 1e-300), sigma_max)
        if search_cfg.cooling is not None:
            p *= search_cfg.cooling
        trace.steps.append(step)
        trace.proposed.append(proposed_cost)
        trace.accepted.append(accepted)
        trace.best.append(best_cost)
        if step >= window and trace.best[step - window] - best_cost < search_cfg.convergence_tol:
            trace.status = "converged"
            break
    trace.final_cost = best_cost
    return best, trace


def _restart_seed(base: int, slot: int, restart: int) -> int:
    return int(np.random.SeedSequence([base, slot, restart]).generate_state(1)[0])


def discover(f, layout: FlatLayout, cost_cfg: CostConfig, search_cfg: SearchConfig,
             n_target: int, *, attrs=None) -> MRSet:
    """Grow an MR set from the identity by repeated searches.

    Each slot gets up to ``search_cfg.restarts`` searches.  A candidate is admitted
    when its cost is below ``J_tol`` and its mean squared distance to every known
    member is at least ``d_min``.  Discovery stops at ``n_target`` admissions or when
    a slot exhausts its restarts.  The returned set carries every search trace in
    ``traces`` and the total step count in ``total_steps``; admitted members record
    their cost, seed and the cumulative step count at admission in ``meta``.
    """
    if n_target < 1:
        raise ValidationError("n_target must be at least 1")
    if layout != cost_cfg.layout:
        raise ValidationError("layout does not match the cost samples")
    _check_dim(layout, search_cfg)
    known = MRSet.start(layout, function_id=str(Variant.coerce(cost_cfg.function_id).value))
    steps_used = 0
    for slot in range(n_target):
        admitted = False
        for restart in range(search_cfg.restarts):
            seed = _restart_seed(search_cfg.seed, slot, restart)
            try:
                candidate, trace = minimize(f, known, cost_cfg, search_cfg, seed=seed, attrs=attrs)
            except SearchFailureError:
                trace = SearchTrace(seed=seed, status="rejected-candidate")
                known.traces.append(trace)
                continue
            steps_used += len(trace)
            known.traces.append(trace)
            distances = [mr_distance(candidate, m, cost_cfg.samples) for m in known]
            if trace.final_cost < search_cfg.J_tol and min(distances) >= search_cfg.d_min:
                known.add(candidate.with_meta(
                    label=f"discovered_{len(known.discovered()) + 1}",
                    provenance="discovered",
                    meta={
                        "cost": trace.final_cost,
                        "seed": seed,
                        "slot": slot,
                        "restart": restart,
                        "admission_step": steps_used,
                        "min_distance": min(distances),
                        "function_id": known.function_id,
                    },
                ))
                admitted = True
                break
            trace.status = "rejected-candidate"
        if not admitted:
            break
    known.total_steps = steps_used
    return known
