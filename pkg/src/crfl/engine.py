"""Federated training loop: local SGD, weighted aggregation (mean or smoothed
Weiszfeld geometric median), parameter-norm clipping, and Gaussian
perturbation.  Every source of randomness is a derived stream, so runs are
bitwise reproducible at any worker count."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig, AttackDirective, build_poison_plan, compose_poisoned_batch
from .data import ClientDataset
from .errors import ConfigurationError, DivergenceError
from .model import Batch, ModelParams, batch_gradient, param_l2_norm
from .rng import derive_seed, stream

THREADS_ENV = "CRFL_THREADS"


def worker_count() -> int:
    """Worker cap for the parallel client phase (CRFL_THREADS overrides)."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
        if n < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be positive")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class AffineSchedule:
    """t -> a*t + b, the schedule form used for rho_t and sigma_t."""

    a: float
    b: float

    def __call__(self, t: int) -> float:
        return self.a * t + self.b


@dataclass
class FederationConfig:
    """All federation hyperparameters; per-client values broadcast from scalars.

    The convergence analysis needs eta <= 1/beta, which is unknowable for
    arbitrary data, so it is not enforced; a warning fires above a loose
    softmax-smoothness heuristic of 0.25.
    """

    num_clients: int
    rounds: int
    eta: np.ndarray
    tau: np.ndarray
    batch_size: np.ndarray
    rho_schedule: AffineSchedule
    sigma_schedule: AffineSchedule
    sigma_smoothing: float
    weights: np.ndarray
    master_seed: int
    aggregation: str = "fedavg"
    rfa_tol: float = 1e-6
    rfa_max_iter: int = 100

    def __post_init__(self):
        n = self.num_clients
        if n < 1:
            raise ConfigurationError("need at least one client")
        if self.rounds < 1:
            raise ConfigurationError("need at least one round")
        self.eta = np.broadcast_to(np.asarray(self.eta, dtype=np.float64), (n,)).copy()
        self.tau = np.broadcast_to(np.asarray(self.tau, dtype=np.int64), (n,)).copy()
        self.batch_size = np.broadcast_to(
            np.asarray(self.batch_size, dtype=np.int64), (n,)
        ).copy()
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (n,):
            raise ConfigurationError("need one aggregation weight per client")
        if (self.weights < 0).any() or abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ConfigurationError("aggregation weights must be >= 0 and sum to 1")
        if (self.tau < 1).any():
            raise ConfigurationError("tau must be at least 1 for every client")
        if (self.eta <= 0).any():
            raise ConfigurationError("learning rates must be positive")
        if self.aggregation not in ("fedavg", "rfa"):
            raise ConfigurationError(f"unknown aggregation {self.aggregation!r}")
        for t in range(1, self.rounds + 1):
            if self.rho_schedule(t) <= 0:
                raise ConfigurationError(f"rho_t must stay positive (round {t})")
            if t < self.rounds and self.sigma_schedule(t) < 0:
                raise ConfigurationError(f"sigma_t must stay non-negative (round {t})")
        if self.sigma_smoothing < 0:
            raise ConfigurationError("smoothing sigma must be non-negative")
        if float(self.eta.max()) > 0.25:
            warnings.warn(
                "learning rate exceeds the smoothness heuristic 0.25; "
                "the contraction analysis assumes eta <= 1/beta",
                stacklevel=2,
            )


@dataclass
class RoundTrace:
    """Per-round observability: norms, the server noise stream id, and the
    pre-noise clipped model when snapshots are requested."""

    round: int
    pre_clip_norm: float
    post_clip_norm: float
    noise_seed: Optional[int]
    global_params_snapshot: Optional[ModelParams] = None
    effective_weights: Optional[np.ndarray] = None


@dataclass
class TrainingResult:
    params: ModelParams
    traces: list[RoundTrace] = field(repr=False)


def local_sgd(
    init: ModelParams,
    data: ClientDataset,
    eta: float,
    tau: int,
    batch_size: int,
    rng: np.random.Generator,
    poison: Optional[AttackDirective] = None,
) -> ModelParams:
    """Exactly tau SGD steps on uniformly drawn mini-batches.

    Batches are drawn without replacement within a batch and with replacement
    across iterations.  A poison directive swaps in q_b triggered samples per
    batch while keeping the index draw identical to the benign path.
    """
    if tau < 1:
        raise ConfigurationError("tau must be at least 1")
    if batch_size < 1 or batch_size > len(data):
        raise ConfigurationError("batch size must be in [1, len(data)]")
    if poison is not None and poison.q_b > batch_size:
        raise ConfigurationError("poison count exceeds batch size")

    weights = np.array(init.weights, copy=True)
    for _ in range(tau):
        if poison is not None:
            batch = compose_poisoned_batch(
                data, poison.pattern, poison.q_b, batch_size, rng
            )
            features, labels = batch.features, batch.labels
        else:
            idx = rng.choice(len(data), size=batch_size, replace=False)
            features, labels = data.features[idx], data.labels[idx]
        weights -= eta * batch_gradient(weights, features, labels)
    return ModelParams(weights)


def clip_params(params: ModelParams, rho: float) -> ModelParams:
    """Scale the parameters onto the rho ball: w / max(1, ||w||/rho)."""
    if rho <= 0:
        raise ConfigurationError("rho must be positive")
    norm = param_l2_norm(params)
    if norm <= rho:
        return params
    return ModelParams(params.weights * (rho / norm))


def perturb_params(
    params: ModelParams, sigma: float, rng: np.random.Generator
) -> ModelParams:
    """Add isotropic Gaussian noise per coordinate; sigma = 0 is the identity."""
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    if sigma == 0.0:
        return params
    return ModelParams(params.weights + rng.normal(0.0, sigma, size=params.weights.shape))


def aggregate_fedavg(
    base: ModelParams, updates: Sequence[tuple[ModelParams, float, float]]
) -> ModelParams:
    """base + sum_i p_i * gamma_i * delta_i over (delta, weight, scale) tuples."""
    total = sum(w for _, w, _ in updates)
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError(f"aggregation weights must sum to 1, got {total}")
    out = np.array(base.weights, copy=True)
    for delta, weight, scale in updates:
        out += (weight * scale) * delta.weights
    return ModelParams(out)


@dataclass
class RfaAggregate:
    """Geometric-median aggregation output with the induced client weights."""

    params: ModelParams
    effective_weights: np.ndarray
    converged: bool
    iterations: int


def aggregate_rfa(
    base: ModelParams,
    updates: Sequence[tuple[ModelParams, float, float]],
    tol: float = 1e-6,
    max_iter: int = 100,
) -> RfaAggregate:
    """Weighted geometric median of the client models via smoothed Weiszfeld.

    Points are base + scale*delta; iteration starts at the weighted mean and
    stops once the iterate moves less than tol.  The returned effective
    weights are the final normalized Weiszfeld coefficients, i.e. the linear
    weight each client's model actually received.
    """
    if not updates:
        raise ConfigurationError("need at least one update")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    shape = base.weights.shape
    points = np.stack([base.weights + scale * delta.weights for delta, _, scale in updates])
    points = points.reshape(len(updates), -1)
    weights = np.array([w for _, w, _ in updates], dtype=np.float64)

    v = weights @ points / weights.sum()
    betas = weights.copy()
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dist = np.linalg.norm(points - v, axis=1)
        betas = weights / np.maximum(dist, tol)
        v_next = betas @ points / betas.sum()
        moved = float(np.linalg.norm(v_next - v))
        v = v_next
        if moved < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"geometric median did not converge in {max_iter} iterations", stacklevel=2)
    return RfaAggregate(
        ModelParams(v.reshape(shape)), betas / betas.sum(), converged, iterations
    )


def run_training(
    fed: FederationConfig,
    clients: Sequence[ClientDataset],
    attack: Optional[AttackConfig] = None,
    *,
    record_snapshots: bool = False,
    coupled_benign: bool = False,
) -> TrainingResult:
    """Full training protocol: T rounds of broadcast, parallel local SGD,
    aggregation, clipping, and Gaussian perturbation (skipped at t = T).

    With coupled_benign=True the attackers train on clean data using the very
    same streams (scaling their clean update by gamma at t_adv only when the
    attack requests virtual benign scaling); this is the clean twin used by
    the closeness experiments.
    """
    if len(clients) != fed.num_clients:
        raise ConfigurationError("client list does not match the configured count")
    attacker_set: frozenset[int] = frozenset()
    if attack is not None:
        if attack.t_adv > fed.rounds:
            raise ConfigurationError("t_adv must not exceed the round count")
        attacker_set = frozenset(attack.attacker_ids)
        if max(attacker_set) >= fed.num_clients:
            raise ConfigurationError("attacker id out of range")
        for i in attacker_set:
            if attack.directives[i].q_b > fed.batch_size[i]:
                raise ConfigurationError(f"q_b exceeds batch size for client {i}")

    dim, num_classes = clients[0].dim, clients[0].num_classes
    global_model = ModelParams.zeros(dim, num_classes)
    traces: list[RoundTrace] = []

    def client_round(i: int, t: int, broadcast: ModelParams, plan) -> ModelParams:
        rng = stream(fed.master_seed, "client", i, t)
        directive = plan.for_client(i) if plan is not None else None
        return local_sgd(
            broadcast,
            clients[i],
            float(fed.eta[i]),
            int(fed.tau[i]),
            int(fed.batch_size[i]),
            rng,
            directive,
        )

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        for t in range(1, fed.rounds + 1):
            plan = None if coupled_benign else build_poison_plan(attack, t)
            broadcast = global_model
            locals_ = list(
                pool.map(
                    lambda i, t=t, w=broadcast, p=plan: client_round(i, t, w, p),
                    range(fed.num_clients),
                )
            )

            updates = []
            for i in range(fed.num_clients):
                delta = ModelParams(locals_[i].weights - global_model.weights)
                scale = 1.0
                if attack is not None and t == attack.t_adv and i in attacker_set:
                    if not coupled_benign or attack.virtual_benign_scaling:
                        scale = attack.gamma_for(i)
                updates.append((delta, float(fed.weights[i]), scale))

            effective = None
            if fed.aggregation == "rfa":
                agg = aggregate_rfa(global_model, updates, fed.rfa_tol, fed.rfa_max_iter)
                aggregated, effective = agg.params, agg.effective_weights
            else:
                aggregated = aggregate_fedavg(global_model, updates)

            pre_norm = param_l2_norm(aggregated)
            if not np.isfinite(aggregated.weights).all():
                raise DivergenceError(f"non-finite parameters after aggregation at round {t}")
            clipped = clip_params(aggregated, fed.rho_schedule(t))

            noise_seed = None
            if t <= fed.rounds - 1:
                noise_seed = derive_seed(fed.master_seed, "noise", t)
                global_model = perturb_params(
                    clipped, fed.sigma_schedule(t), stream(fed.master_seed, "noise", t)
                )
            else:
                global_model = clipped

            traces.append(
                RoundTrace(
                    round=t,
                    pre_clip_norm=pre_norm,
                    post_clip_norm=param_l2_norm(clipped),
                    noise_seed=noise_seed,
                    global_params_snapshot=clipped if record_snapshots else None,
                    effective_weights=effective,
                )
            )

    return TrainingResult(global_model, traces)
