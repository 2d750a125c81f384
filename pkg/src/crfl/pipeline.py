"""Orchestration shared by the CLI subcommands: dataset preparation, training
runs, certification, sweeps, and the coupled closeness experiment.  Every step
derives its randomness from the run's master seed."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .analysis import (
    ClosenessTrace,
    RadiusContext,
    radius_context_for_run,
    run_closeness_experiment,
)
from .attack import AttackConfig, attack_success_rate
from .certify import (
    CertificationResult,
    build_ensemble,
    certified_accuracy,
    certified_rate,
    certify_set,
    critical_radius,
)
from .config import AttackSpec, RunConfig, ScheduleSpec
from .data import (
    ClientDataset,
    SampleSet,
    TriggerPattern,
    generate_synthetic,
    load_mnist_idx,
    partition_iid,
)
from .engine import AffineSchedule, FederationConfig, TrainingResult, run_training
from .errors import ConfigurationError
from .model import ModelParams, accuracy, load_params
from .rng import derive_seed

SWEEP_AXES = ("sigma", "R", "gamma", "poison_ratio", "N", "T")


def _apply_norm_cap(train: SampleSet, test: SampleSet, cap: float) -> tuple[SampleSet, SampleSet]:
    """Rescale features so every sample's l2 norm is at most the cap."""
    if cap <= 0:
        raise ConfigurationError("input_norm_cap must be positive")
    max_norm = max(
        float(np.linalg.norm(train.features, axis=1).max(initial=0.0)),
        float(np.linalg.norm(test.features, axis=1).max(initial=0.0)),
    )
    scale = max(1.0, max_norm / cap)
    if scale == 1.0:
        return train, test
    return (
        SampleSet(train.features / scale, train.labels, train.num_classes),
        SampleSet(test.features / scale, test.labels, test.num_classes),
    )


def prepare_datasets(cfg: RunConfig) -> tuple[SampleSet, SampleSet]:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        pool = generate_synthetic(
            ds.n_train + ds.n_test,
            ds.dim,
            ds.classes,
            ds.separation,
            derive_seed(cfg.master_seed, "data"),
        )
        train = pool.subset(np.arange(ds.n_train))
        test = pool.subset(np.arange(ds.n_train, ds.n_train + ds.n_test))
    else:
        train = load_mnist_idx(ds.images, ds.labels, ds.classes)
        test = load_mnist_idx(ds.test_images, ds.test_labels, ds.classes)
    if ds.input_norm_cap is not None:
        train, test = _apply_norm_cap(train, test, ds.input_norm_cap)
    return train, test


def build_trigger(pattern_spec, dim: int) -> TriggerPattern:
    if pattern_spec.indices and max(pattern_spec.indices) >= dim:
        raise ConfigurationError("trigger index out of range for the feature dimension")
    values = np.asarray(pattern_spec.values, dtype=np.float64)
    if pattern_spec.magnitude is not None:
        return TriggerPattern.rescaled(
            pattern_spec.indices, values, pattern_spec.target_label, pattern_spec.magnitude
        )
    return TriggerPattern(
        pattern_spec.indices, values, pattern_spec.target_label, float(np.linalg.norm(values))
    )


def build_attack(spec: Optional[AttackSpec], dim: int) -> Optional[AttackConfig]:
    if spec is None:
        return None
    pattern = build_trigger(spec.pattern, dim)
    return AttackConfig.uniform(
        spec.attackers, spec.t_adv, spec.gamma, spec.q_b, pattern, spec.virtual_benign_scaling
    )


def build_federation(cfg: RunConfig, weights: np.ndarray) -> FederationConfig:
    fed = cfg.federation
    return FederationConfig(
        num_clients=fed.clients,
        rounds=fed.rounds,
        eta=fed.eta,
        tau=fed.tau,
        batch_size=fed.batch_size,
        rho_schedule=AffineSchedule(fed.rho.a, fed.rho.b),
        sigma_schedule=AffineSchedule(fed.sigma.a, fed.sigma.b),
        sigma_smoothing=cfg.certify.sigma,
        weights=weights,
        master_seed=cfg.master_seed,
        aggregation=fed.aggregation,
        rfa_tol=fed.rfa_tol,
        rfa_max_iter=fed.rfa_max_iter,
    )


@dataclass
class TrainArtifacts:
    result: TrainingResult
    fed: FederationConfig
    attack: Optional[AttackConfig]
    train: SampleSet
    test: SampleSet
    clean_accuracy: float
    asr: Optional[float]
    attacker_effective_weights: Optional[list[float]]


def run_train(cfg: RunConfig) -> TrainArtifacts:
    train, test = prepare_datasets(cfg)
    clients, weights = partition_iid(
        train,
        cfg.federation.clients,
        cfg.federation.weights_mode,
        derive_seed(cfg.master_seed, "partition"),
    )
    attack = build_attack(cfg.attack, train.dim)
    fed = build_federation(cfg, weights)
    result = run_training(fed, clients, attack)

    clean_acc = accuracy(result.params, test)
    asr = None
    effective = None
    if attack is not None:
        asr = attack_success_rate(
            result.params, test, attack.directives[attack.attacker_ids[0]].pattern
        )
        trace = result.traces[attack.t_adv - 1]
        if trace.effective_weights is not None:
            effective = [float(trace.effective_weights[i]) for i in attack.attacker_ids]
    return TrainArtifacts(result, fed, attack, train, test, clean_acc, asr, effective)


def save_run_meta(path, artifacts: TrainArtifacts) -> None:
    meta = {
        "clean_accuracy": artifacts.clean_accuracy,
        "attack_success_rate": artifacts.asr,
        "attacker_effective_weights": artifacts.attacker_effective_weights,
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_run_meta(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def certify_from_checkpoint(
    cfg: RunConfig, checkpoint_path, attacker_weights: Optional[Sequence[float]] = None
) -> tuple[list[CertificationResult], list[tuple[float, float, float]]]:
    """Certify an existing checkpoint under the configured threat model."""
    if cfg.attack is None:
        raise ConfigurationError("certification needs an attack block (threat-model parameters)")
    params = load_params(checkpoint_path)
    train, test = prepare_datasets(cfg)
    _, weights = partition_iid(
        train,
        cfg.federation.clients,
        cfg.federation.weights_mode,
        derive_seed(cfg.master_seed, "partition"),
    )
    attack = build_attack(cfg.attack, train.dim)
    fed = build_federation(cfg, weights)
    ctx = radius_context_for_run(fed, attack, attacker_weights)
    return run_certify(cfg, params, test, ctx)


def default_r_grid(results: Sequence[CertificationResult]) -> tuple[float, ...]:
    """0 to just past the largest finite certified radius, 21 points."""
    finite = [r.rad for r in results if not r.abstained and np.isfinite(r.rad)]
    if not finite:
        return (0.0,)
    top = max(finite) * 1.05
    return tuple(np.linspace(0.0, top, 21))


def run_certify(
    cfg: RunConfig,
    params: ModelParams,
    test: SampleSet,
    ctx: RadiusContext,
) -> tuple[list[CertificationResult], list[tuple[float, float, float]]]:
    if params.dim != test.dim or params.num_classes != test.num_classes:
        raise ConfigurationError("checkpoint dimensions do not match the configured dataset")
    capped = test
    if cfg.certify.test_cap is not None:
        if cfg.certify.test_cap < 1:
            raise ConfigurationError("test_cap must be positive")
        capped = test.subset(np.arange(min(cfg.certify.test_cap, len(test))))
    ensemble = build_ensemble(
        params,
        cfg.certify.sigma,
        cfg.certify.num_models,
        derive_seed(cfg.master_seed, "smoothing"),
    )
    results = certify_set(capped, ensemble, ctx, cfg.certify.alpha)
    grid = cfg.certify.r_grid or default_r_grid(results)
    curve = [(float(r), certified_accuracy(results, r), certified_rate(results, r)) for r in grid]
    return results, curve


def train_and_certify(cfg: RunConfig) -> tuple[TrainArtifacts, list[CertificationResult], list]:
    artifacts = run_train(cfg)
    if artifacts.attack is None:
        raise ConfigurationError("certification needs an attack block (threat-model parameters)")
    ctx = radius_context_for_run(
        artifacts.fed, artifacts.attack, artifacts.attacker_effective_weights
    )
    results, curve = run_certify(cfg, artifacts.result.params, artifacts.test, ctx)
    return artifacts, results, curve


def _format_axis_value(value: float) -> str:
    return format(float(value), ".9g")


def apply_sweep_axis(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    """Derive the single-value configuration for one sweep point, with its own
    master seed so runs are comparable but independent."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if axis in ("R", "gamma", "poison_ratio") and cfg.attack is None:
        raise ConfigurationError(f"sweep over {axis} needs an attack block")
    out = replace(
        cfg, master_seed=derive_seed(cfg.master_seed, "sweep", axis, _format_axis_value(value))
    )
    if axis == "sigma":
        if value <= 0:
            raise ConfigurationError("sigma sweep values must be positive")
        return replace(out, federation=replace(out.federation, sigma=ScheduleSpec(0.0, value)))
    if axis == "R":
        r = int(value)
        if r != value or r < 1:
            raise ConfigurationError("R sweep values must be positive integers")
        if r > out.federation.clients:
            raise ConfigurationError("cannot have more attackers than clients")
        return replace(out, attack=replace(out.attack, attackers=tuple(range(r))))
    if axis == "gamma":
        return replace(out, attack=replace(out.attack, gamma=float(value)))
    if axis == "poison_ratio":
        if not 0 < value <= 1:
            raise ConfigurationError("poison ratio must lie in (0, 1]")
        q_b = max(1, round(value * out.federation.batch_size))
        return replace(out, attack=replace(out.attack, q_b=q_b))
    if axis == "N":
        n = int(value)
        if n != value or n < 1:
            raise ConfigurationError("N sweep values must be positive integers")
        return replace(out, federation=replace(out.federation, clients=n))
    # axis == "T"
    t = int(value)
    if t != value or t < 1:
        raise ConfigurationError("T sweep values must be positive integers")
    return replace(out, federation=replace(out.federation, rounds=t))


@dataclass
class SweepPoint:
    value: float
    curve: list[tuple[float, float, float]]
    critical_radius: float


def run_sweep(cfg: RunConfig, axis: str, values: Sequence[float]) -> list[SweepPoint]:
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    points = []
    for value in values:
        sub_cfg = apply_sweep_axis(cfg, axis, value)
        _, results, curve = train_and_certify(sub_cfg)
        points.append(SweepPoint(float(value), curve, critical_radius(results)))
    return points


def run_closeness(cfg: RunConfig) -> tuple[ClosenessTrace, FederationConfig, AttackConfig]:
    if cfg.attack is None:
        raise ConfigurationError("closeness experiment needs an attack block")
    if cfg.attack.t_adv >= cfg.federation.rounds:
        raise ConfigurationError("closeness experiment needs t_adv < rounds")
    train, _ = prepare_datasets(cfg)
    clients, weights = partition_iid(
        train,
        cfg.federation.clients,
        cfg.federation.weights_mode,
        derive_seed(cfg.master_seed, "partition"),
    )
    attack = build_attack(cfg.attack, train.dim)
    fed = build_federation(cfg, weights)
    return run_closeness_experiment(fed, clients, attack), fed, attack
