"""Single-round coordinated model-replacement backdoor: poisoned batch
composition, update scaling, and the attack-success metric."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import ClientDataset, SampleSet, TriggerPattern
from .errors import ConfigurationError
from .model import Batch, ModelParams, predict_matrix


@dataclass(frozen=True)
class AttackDirective:
    """What one attacker does at the attack round."""

    q_b: int
    gamma: float
    pattern: TriggerPattern

    def __post_init__(self):
        if self.q_b < 1:
            raise ConfigurationError("q_b must be at least 1")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")


@dataclass(frozen=True)
class AttackConfig:
    """R coordinated attackers striking once at round t_adv.

    `virtual_benign_scaling` makes the coupled benign twin scale its clean
    update by gamma at t_adv (the coupling used by the closeness analysis);
    the default benign baseline does not scale.
    """

    attacker_ids: tuple[int, ...]
    t_adv: int
    directives: dict[int, AttackDirective] = field(repr=False)
    virtual_benign_scaling: bool = False

    def __post_init__(self):
        ids = tuple(sorted(set(int(i) for i in self.attacker_ids)))
        object.__setattr__(self, "attacker_ids", ids)
        if not ids:
            raise ConfigurationError("attack needs at least one attacker")
        if self.t_adv < 1:
            raise ConfigurationError("t_adv must be at least 1")
        if set(self.directives) != set(ids):
            raise ConfigurationError("each attacker needs exactly one directive")

    @classmethod
    def uniform(
        cls,
        attacker_ids,
        t_adv: int,
        gamma: float,
        q_b: int,
        pattern: TriggerPattern,
        virtual_benign_scaling: bool = False,
    ) -> "AttackConfig":
        """All attackers share one pattern, scale factor, and poison count."""
        directive = AttackDirective(q_b, gamma, pattern)
        return cls(
            tuple(attacker_ids),
            t_adv,
            {int(i): directive for i in attacker_ids},
            virtual_benign_scaling,
        )

    @property
    def num_attackers(self) -> int:
        return len(self.attacker_ids)

    def gamma_for(self, client_id: int) -> float:
        return self.directives[client_id].gamma


@dataclass(frozen=True)
class PoisonPlan:
    """Per-attacker batch-composition directives, active at one round only."""

    round: int
    directives: dict[int, AttackDirective]

    def for_client(self, client_id: int) -> Optional[AttackDirective]:
        return self.directives.get(client_id)


def build_poison_plan(attack: Optional[AttackConfig], round: int) -> Optional[PoisonPlan]:
    """A plan exists only at t_adv; attackers are benign in every other round."""
    if attack is None or round != attack.t_adv:
        return None
    return PoisonPlan(round, dict(attack.directives))


def compose_poisoned_batch(
    clean_pool: ClientDataset,
    pattern: TriggerPattern,
    q_b: int,
    batch_size: int,
    rng: np.random.Generator,
) -> Batch:
    """Draw batch_size samples without replacement; trigger exactly q_b of them.

    The index draw is identical to the benign sampling path, so a coupled
    clean run consuming the same stream sees the same batch membership.
    """
    if q_b > batch_size:
        raise ConfigurationError(f"q_b {q_b} exceeds batch size {batch_size}")
    if batch_size > len(clean_pool):
        raise ConfigurationError("batch size exceeds the local pool")
    idx = rng.choice(len(clean_pool), size=batch_size, replace=False)
    features = np.array(clean_pool.features[idx], copy=True)
    labels = np.array(clean_pool.labels[idx], copy=True)
    if q_b > 0:
        features[:q_b] = pattern.apply_to_matrix(features[:q_b])
        labels[:q_b] = pattern.target_label
    return Batch(features, labels)


def scale_update(delta: ModelParams, gamma: float) -> ModelParams:
    """Multiply every coordinate of a local update by gamma."""
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    return ModelParams(delta.weights * gamma)


def attack_success_rate(
    params: ModelParams, clean_test: SampleSet, pattern: TriggerPattern
) -> float:
    """Fraction of triggered test samples predicted as the target label.

    Samples whose true label already equals the target are excluded; returns
    0.0 if nothing remains after exclusion.
    """
    if len(clean_test) == 0:
        raise ConfigurationError("test set must be non-empty")
    mask = clean_test.labels != pattern.target_label
    if not mask.any():
        return 0.0
    triggered = pattern.apply_to_matrix(clean_test.features[mask])
    preds = predict_matrix(params, triggered)
    return float((preds == pattern.target_label).mean())
