"""Closed-form divergence machinery and the coupled-run experiments: Gaussian
KL distance, the per-round contraction coefficient of the clip+noise kernel,
the end-to-end KL bound on clean-vs-poisoned training, the certification
threshold, the certified radius, and the radius-vs-rounds numerical study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig
from .data import ClientDataset
from .engine import FederationConfig, run_training
from .errors import ConfigurationError
from .model import ModelParams, data_lipschitz_constant
from .numerics import std_normal_cdf

# A contraction factor this close to 1 is indistinguishable from 1 in double
# precision; products of such factors stop shrinking, capping the radius.
SATURATION_TOL = 1e-15


def contraction_coefficient(rho_t: float, sigma_t: float) -> float:
    """Per-round divergence contraction of clip-to-rho followed by Gaussian
    noise: 2*Phi(rho_t/sigma_t) - 1."""
    if rho_t <= 0:
        raise ConfigurationError("rho_t must be positive")
    if sigma_t <= 0:
        raise ConfigurationError("noiseless rounds contract nothing (sigma_t must be positive)")
    return 2.0 * std_normal_cdf(rho_t / sigma_t) - 1.0


def kl_gaussian_shared_sigma(m1: ModelParams, m2: ModelParams, sigma: float) -> float:
    """KL divergence between isotropic Gaussians with equal sigma:
    ||m2 - m1||^2 / (2 sigma^2)."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    if m1.weights.shape != m2.weights.shape:
        raise ConfigurationError("parameter shapes must match")
    diff = float(np.linalg.norm(m2.weights - m1.weights))
    return diff * diff / (2.0 * sigma * sigma)


def epsilon_threshold(p_a_lower: float, p_b_upper: float) -> float:
    """Largest KL divergence between smoothing distributions that still
    guarantees a consistent top prediction: -log(1 - (sqrt(pA) - sqrt(pB))^2).
    Returns +inf at the degenerate (1, 0) corner."""
    if not (0.0 <= p_b_upper <= p_a_lower <= 1.0):
        raise ConfigurationError("need 0 <= p_b_upper <= p_a_lower <= 1")
    margin = (math.sqrt(p_a_lower) - math.sqrt(p_b_upper)) ** 2
    if margin >= 1.0:
        return math.inf
    # log1p keeps tiny positive margins from rounding through 1 - margin == 1
    return -math.log1p(-margin)


@dataclass(frozen=True)
class AttackerProfile:
    """Per-attacker quantities entering the radius and closeness formulas."""

    weight: float
    scale: float
    local_iters: int
    learning_rate: float
    poison_ratio: float

    def __post_init__(self):
        if min(self.weight, self.scale, self.learning_rate, self.poison_ratio) <= 0:
            raise ConfigurationError("attacker profile fields must be positive")
        if self.local_iters < 1:
            raise ConfigurationError("local_iters must be at least 1")
        if self.poison_ratio > 1:
            raise ConfigurationError("poison ratio cannot exceed 1")

    @property
    def strength(self) -> float:
        return self.weight * self.scale * self.local_iters * self.learning_rate * self.poison_ratio


@dataclass(frozen=True)
class RadiusContext:
    """Everything the certified-radius formula needs besides the vote bounds.

    `schedule` holds (rho_t, sigma_t) for t = t_adv+1 .. T; the entry at t = T
    uses the smoothing sigma.  An empty schedule (t_adv = T) contributes an
    empty product, i.e. the factor 1.
    """

    sigma_t_adv: float
    attackers: tuple[AttackerProfile, ...]
    data_lipschitz: float
    t_adv: int
    schedule: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.sigma_t_adv <= 0:
            raise ConfigurationError("sigma at the attack round must be positive")
        if not self.attackers:
            raise ConfigurationError("need at least one attacker profile")
        if self.data_lipschitz <= 0:
            raise ConfigurationError("data Lipschitz constant must be positive")
        if self.t_adv < 1:
            raise ConfigurationError("t_adv must be at least 1")
        for rho_t, sigma_t in self.schedule:
            if rho_t <= 0 or sigma_t < 0:
                raise ConfigurationError("schedule needs rho_t > 0 and sigma_t >= 0")

    @property
    def num_attackers(self) -> int:
        return len(self.attackers)

    @property
    def rounds(self) -> int:
        return self.t_adv + len(self.schedule)


def schedule_product(ctx: RadiusContext) -> tuple[float, bool]:
    """Product of the per-round contraction factors plus a saturation flag
    (set when any factor is within 1e-15 of 1, the double-precision wall).

    A zero-noise entry is the degenerate kernel whose factor is the sigma->0
    limit, exactly 1; it contributes no contraction and counts as saturated.
    """
    product = 1.0
    saturated = False
    for rho_t, sigma_t in ctx.schedule:
        factor = 1.0 if sigma_t == 0.0 else contraction_coefficient(rho_t, sigma_t)
        if factor >= 1.0 - SATURATION_TOL:
            saturated = True
        product *= factor
    return product, saturated


@dataclass(frozen=True)
class RadiusOutcome:
    value: float
    saturated: bool


def radius_detail(p_a_lower: float, p_b_upper: float, ctx: RadiusContext) -> RadiusOutcome:
    """Certified backdoor-magnitude radius plus the numerical-saturation flag.

    RAD = sqrt( eps * sigma_tadv^2
                / (2 R L^2 sum_i strength_i^2 * prod_t factor_t) )
    with eps = epsilon_threshold(p_a_lower, p_b_upper).  Returns +inf when the
    margin term degenerates or the factor product underflows to zero.
    """
    if not p_a_lower > p_b_upper:
        raise ConfigurationError("radius requires p_a_lower > p_b_upper")
    eps = epsilon_threshold(p_a_lower, p_b_upper)
    product, saturated = schedule_product(ctx)
    strength_sq = sum(a.strength**2 for a in ctx.attackers)
    denom = 2.0 * ctx.num_attackers * ctx.data_lipschitz**2 * strength_sq * product
    if denom == 0.0:
        return RadiusOutcome(math.inf, True)
    if math.isinf(eps):
        return RadiusOutcome(math.inf, saturated)
    return RadiusOutcome(math.sqrt(eps * ctx.sigma_t_adv**2 / denom), saturated)


def certified_radius(p_a_lower: float, p_b_upper: float, ctx: RadiusContext) -> float:
    return radius_detail(p_a_lower, p_b_upper, ctx).value


def closeness_kl_bound(ctx: RadiusContext, delta_norms: Sequence[float]) -> float:
    """Upper bound on the KL divergence between the smoothed clean-trained and
    poison-trained models, given each attacker's backdoor l2 magnitude:

        2 R sum_i (strength_i * L * ||delta_i||)^2 / sigma_tadv^2 * prod_t factor_t
    """
    if len(delta_norms) != ctx.num_attackers:
        raise ConfigurationError("need one backdoor magnitude per attacker")
    if any(d < 0 for d in delta_norms):
        raise ConfigurationError("backdoor magnitudes must be non-negative")
    product, _ = schedule_product(ctx)
    total = sum(
        (a.strength * ctx.data_lipschitz * d) ** 2
        for a, d in zip(ctx.attackers, delta_norms)
    )
    return 2.0 * ctx.num_attackers * total / ctx.sigma_t_adv**2 * product


@dataclass(frozen=True)
class ClosenessRecord:
    round: int
    distance: float
    kl_bound: Optional[float]


@dataclass
class ClosenessTrace:
    """Per-round l2 distance between the coupled poisoned and clean global
    models (measured pre-noise, where shared noise cancels exactly)."""

    records: list[ClosenessRecord] = field(repr=False, default_factory=list)

    @property
    def final_distance(self) -> float:
        return self.records[-1].distance

    def realized_kl(self, sigma: float) -> float:
        """Realized coupled-run analog of the KL bound at the final round."""
        if sigma <= 0:
            raise ConfigurationError("sigma must be positive")
        return self.final_distance**2 / (2.0 * sigma * sigma)


def radius_context_for_run(
    fed: FederationConfig, attack: AttackConfig, attacker_weights: Optional[Sequence[float]] = None
) -> RadiusContext:
    """Context assembled from a federation/attack configuration.

    `attacker_weights` overrides the configured aggregation weights (used to
    plug in the effective weights induced by robust aggregation); the data
    Lipschitz constant is evaluated at the clipping threshold of the attack
    round and the final schedule entry uses the smoothing sigma.
    """
    profiles = []
    for k, i in enumerate(attack.attacker_ids):
        weight = (
            float(attacker_weights[k]) if attacker_weights is not None else float(fed.weights[i])
        )
        directive = attack.directives[i]
        profiles.append(
            AttackerProfile(
                weight=weight,
                scale=directive.gamma,
                local_iters=int(fed.tau[i]),
                learning_rate=float(fed.eta[i]),
                poison_ratio=directive.q_b / float(fed.batch_size[i]),
            )
        )
    schedule = tuple(
        (
            fed.rho_schedule(t),
            fed.sigma_schedule(t) if t < fed.rounds else fed.sigma_smoothing,
        )
        for t in range(attack.t_adv + 1, fed.rounds + 1)
    )
    return RadiusContext(
        sigma_t_adv=fed.sigma_schedule(attack.t_adv),
        attackers=tuple(profiles),
        data_lipschitz=data_lipschitz_constant(fed.rho_schedule(attack.t_adv)),
        t_adv=attack.t_adv,
        schedule=schedule,
    )


def run_closeness_experiment(
    fed: FederationConfig, clients: Sequence[ClientDataset], attack: AttackConfig
) -> ClosenessTrace:
    """Train the poisoned process and its clean twin under identical streams
    and record the per-round l2 distance of the pre-noise clipped models,
    alongside the theoretical KL envelope accumulated up to each round."""
    poisoned = run_training(fed, clients, attack, record_snapshots=True)
    benign = run_training(fed, clients, attack, record_snapshots=True, coupled_benign=True)

    ctx = radius_context_for_run(fed, attack)
    delta_norms = [attack.directives[i].pattern.magnitude for i in attack.attacker_ids]

    records = []
    envelope: Optional[float] = None
    for tr_p, tr_b in zip(poisoned.traces, benign.traces):
        t = tr_p.round
        distance = float(
            np.linalg.norm(
                tr_p.global_params_snapshot.weights - tr_b.global_params_snapshot.weights
            )
        )
        if t == attack.t_adv:
            envelope = closeness_kl_bound(replace(ctx, schedule=()), delta_norms)
        elif t > attack.t_adv:
            envelope = closeness_kl_bound(
                replace(ctx, schedule=ctx.schedule[: t - attack.t_adv]), delta_norms
            )
        records.append(ClosenessRecord(t, distance, envelope))
    return ClosenessTrace(records)


def post_attack_slope(trace: ClosenessTrace, t_adv: int) -> float:
    """Least-squares slope of distance over rounds in [t_adv+2, T]."""
    points = [(r.round, r.distance) for r in trace.records if r.round >= t_adv + 2]
    if len(points) < 2:
        raise ConfigurationError("need at least two post-attack rounds for a slope")
    xs = np.array([p[0] for p in points], dtype=np.float64)
    ys = np.array([p[1] for p in points], dtype=np.float64)
    xc = xs - xs.mean()
    return float((xc @ (ys - ys.mean())) / (xc @ xc))


@dataclass(frozen=True)
class StudyRow:
    ratio: float
    rounds: int
    rad: float
    saturated: bool


def radius_vs_rounds_study(
    p_a_lower: float,
    p_b_upper: float,
    ratio_grid: Sequence[float],
    rounds_grid: Sequence[int],
    base_ctx: RadiusContext,
    csv_path=None,
) -> list[StudyRow]:
    """Certified radius over a (rho/sigma ratio, total rounds) grid with every
    other context field held at base_ctx; optionally emitted as CSV."""
    rows = []
    for ratio in ratio_grid:
        if ratio <= 0:
            raise ConfigurationError("rho/sigma ratios must be positive")
        for rounds in rounds_grid:
            if rounds < base_ctx.t_adv:
                raise ConfigurationError("total rounds cannot precede the attack round")
            schedule = tuple((float(ratio), 1.0) for _ in range(rounds - base_ctx.t_adv))
            outcome = radius_detail(p_a_lower, p_b_upper, replace(base_ctx, schedule=schedule))
            rows.append(StudyRow(float(ratio), int(rounds), outcome.value, outcome.saturated))
    if csv_path is not None:
        from .csvio import write_study_csv  # local: csvio imports our row types

        write_study_csv(csv_path, rows)
    return rows
