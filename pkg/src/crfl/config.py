"""Run configuration: a single JSON file with dataset, federation, attack,
certification, and output blocks.  Unknown keys are rejected at every level;
missing keys fall back to the standard image-classification defaults (20
clients, 30 local iterations, eta 0.001, rho_t = 0.1t+2, sigma 0.01,
smoothing sigma 0.01 with 1000 models at alpha 0.001)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigurationError


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) {sorted(unknown)} in {where}")


def _get(block: dict, key: str, default, where: str, kind=None):
    value = block.get(key, default)
    if value is None:
        return None
    if kind is not None:
        try:
            value = kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{where}.{key}: {exc}") from exc
    return value


@dataclass(frozen=True)
class DatasetSpec:
    kind: str  # "synthetic" | "mnist"
    n_train: int = 2000
    n_test: int = 400
    dim: int = 10
    classes: int = 10
    separation: float = 3.0
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    input_norm_cap: Optional[float] = None


@dataclass(frozen=True)
class ScheduleSpec:
    a: float
    b: float


@dataclass(frozen=True)
class FederationSpec:
    clients: int = 20
    rounds: int = 100
    eta: float = 0.001
    tau: int = 30
    batch_size: int = 100
    rho: ScheduleSpec = ScheduleSpec(0.1, 2.0)
    sigma: ScheduleSpec = ScheduleSpec(0.0, 0.01)
    aggregation: str = "fedavg"
    weights_mode: str = "by-size"
    rfa_tol: float = 1e-6
    rfa_max_iter: int = 100


@dataclass(frozen=True)
class PatternSpec:
    indices: tuple[int, ...]
    values: tuple[float, ...]
    target_label: int
    magnitude: Optional[float]


@dataclass(frozen=True)
class AttackSpec:
    attackers: tuple[int, ...]
    t_adv: int
    gamma: float
    q_b: int
    pattern: PatternSpec
    virtual_benign_scaling: bool = False


@dataclass(frozen=True)
class CertifySpec:
    sigma: float = 0.01
    num_models: int = 1000
    alpha: float = 0.001
    r_grid: tuple[float, ...] = ()
    test_cap: Optional[int] = None


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    emit_svg: bool = False


@dataclass(frozen=True)
class RunConfig:
    master_seed: int
    dataset: DatasetSpec
    federation: FederationSpec
    attack: Optional[AttackSpec]
    certify: CertifySpec
    output: OutputSpec


def _parse_schedule(raw, default: ScheduleSpec, where: str) -> ScheduleSpec:
    if raw is None:
        return default
    if isinstance(raw, (int, float)):
        return ScheduleSpec(0.0, float(raw))
    if isinstance(raw, dict):
        _check_keys(raw, {"a", "b"}, where)
        return ScheduleSpec(
            _get(raw, "a", 0.0, where, float), _get(raw, "b", 0.0, where, float)
        )
    raise ConfigurationError(f"{where} must be a number or an {{a, b}} object")


def _parse_dataset(raw: dict) -> DatasetSpec:
    kind = raw.get("type")
    if kind == "synthetic":
        _check_keys(
            raw,
            {"type", "n_train", "n_test", "dim", "classes", "separation", "input_norm_cap"},
            "dataset",
        )
        return DatasetSpec(
            kind="synthetic",
            n_train=_get(raw, "n_train", 2000, "dataset", int),
            n_test=_get(raw, "n_test", 400, "dataset", int),
            dim=_get(raw, "dim", 10, "dataset", int),
            classes=_get(raw, "classes", 10, "dataset", int),
            separation=_get(raw, "separation", 3.0, "dataset", float),
            input_norm_cap=_get(raw, "input_norm_cap", None, "dataset", float),
        )
    if kind == "mnist":
        _check_keys(
            raw,
            {"type", "images", "labels", "test_images", "test_labels", "classes",
             "input_norm_cap"},
            "dataset",
        )
        for key in ("images", "labels", "test_images", "test_labels"):
            if key not in raw:
                raise ConfigurationError(f"dataset.{key} is required for type 'mnist'")
        return DatasetSpec(
            kind="mnist",
            classes=_get(raw, "classes", 10, "dataset", int),
            images=str(raw["images"]),
            labels=str(raw["labels"]),
            test_images=str(raw["test_images"]),
            test_labels=str(raw["test_labels"]),
            input_norm_cap=_get(raw, "input_norm_cap", None, "dataset", float),
        )
    raise ConfigurationError(f"dataset.type must be 'synthetic' or 'mnist', got {kind!r}")


def _parse_attack(raw: Optional[dict]) -> Optional[AttackSpec]:
    if raw is None:
        return None
    _check_keys(
        raw,
        {"attackers", "t_adv", "gamma", "q_b", "pattern", "virtual_benign_scaling"},
        "attack",
    )
    pattern_raw = raw.get("pattern")
    if not isinstance(pattern_raw, dict):
        raise ConfigurationError("attack.pattern block is required")
    _check_keys(pattern_raw, {"indices", "values", "target_label", "magnitude"}, "attack.pattern")
    for key in ("indices", "values", "target_label"):
        if key not in pattern_raw:
            raise ConfigurationError(f"attack.pattern.{key} is required")
    pattern = PatternSpec(
        indices=tuple(int(i) for i in pattern_raw["indices"]),
        values=tuple(float(v) for v in pattern_raw["values"]),
        target_label=int(pattern_raw["target_label"]),
        magnitude=_get(pattern_raw, "magnitude", None, "attack.pattern", float),
    )
    if "attackers" not in raw or "t_adv" not in raw:
        raise ConfigurationError("attack.attackers and attack.t_adv are required")
    return AttackSpec(
        attackers=tuple(int(i) for i in raw["attackers"]),
        t_adv=int(raw["t_adv"]),
        gamma=_get(raw, "gamma", 10.0, "attack", float),
        q_b=_get(raw, "q_b", 5, "attack", int),
        pattern=pattern,
        virtual_benign_scaling=bool(raw.get("virtual_benign_scaling", False)),
    )


def parse_run_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be an object")
    _check_keys(
        raw, {"master_seed", "dataset", "federation", "attack", "certify", "output"}, "config"
    )
    if "dataset" not in raw:
        raise ConfigurationError("config.dataset block is required")

    fed_raw = raw.get("federation", {})
    _check_keys(
        fed_raw,
        {"clients", "rounds", "eta", "tau", "batch_size", "rho", "sigma", "aggregation",
         "weights_mode", "rfa_tol", "rfa_max_iter"},
        "federation",
    )
    federation = FederationSpec(
        clients=_get(fed_raw, "clients", 20, "federation", int),
        rounds=_get(fed_raw, "rounds", 100, "federation", int),
        eta=_get(fed_raw, "eta", 0.001, "federation", float),
        tau=_get(fed_raw, "tau", 30, "federation", int),
        batch_size=_get(fed_raw, "batch_size", 100, "federation", int),
        rho=_parse_schedule(fed_raw.get("rho"), ScheduleSpec(0.1, 2.0), "federation.rho"),
        sigma=_parse_schedule(fed_raw.get("sigma"), ScheduleSpec(0.0, 0.01), "federation.sigma"),
        aggregation=_get(fed_raw, "aggregation", "fedavg", "federation", str),
        weights_mode=_get(fed_raw, "weights_mode", "by-size", "federation", str),
        rfa_tol=_get(fed_raw, "rfa_tol", 1e-6, "federation", float),
        rfa_max_iter=_get(fed_raw, "rfa_max_iter", 100, "federation", int),
    )

    cert_raw = raw.get("certify", {})
    _check_keys(cert_raw, {"sigma", "num_models", "alpha", "r_grid", "test_cap"}, "certify")
    certify = CertifySpec(
        sigma=_get(cert_raw, "sigma", 0.01, "certify", float),
        num_models=_get(cert_raw, "num_models", 1000, "certify", int),
        alpha=_get(cert_raw, "alpha", 0.001, "certify", float),
        r_grid=tuple(float(r) for r in cert_raw.get("r_grid", ())),
        test_cap=_get(cert_raw, "test_cap", None, "certify", int),
    )

    out_raw = raw.get("output", {})
    _check_keys(out_raw, {"dir", "emit_svg"}, "output")
    output = OutputSpec(
        dir=_get(out_raw, "dir", "out", "output", str),
        emit_svg=bool(out_raw.get("emit_svg", False)),
    )

    return RunConfig(
        master_seed=_get(raw, "master_seed", 0, "config", int),
        dataset=_parse_dataset(raw["dataset"]),
        federation=federation,
        attack=_parse_attack(raw.get("attack")),
        certify=certify,
        output=output,
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(raw)
