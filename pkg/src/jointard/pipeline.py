"""End-to-end fit/predict plumbing shared by the CLI and experiments.

A run standardizes the raw training split, fixes the feature map on it,
optionally contaminates the standardized training targets, fits, and then
scores predictions in the original target units.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .datagen import ContaminationSpec, contaminate_targets
from .errors import InputError
from .evaluation import RelevanceScores, ess, predictive_nll, rmse
from .features import (
    FeatureMapSpec,
    Identity,
    StandardizerStats,
    apply_map,
    fit_map,
    map_from_dict,
    map_to_dict,
    standardize_fit,
)
from .model import (
    Dataset,
    Mean,
    TrimmedMean,
    WeightPosterior,
    lambda_base,
    predict_batch,
)
from .optimizers import FitConfig, FitResult, fit

FIT_KEYS = (
    "method", "noise_mode", "max_iter", "damping_gamma", "damping_lambda", "clip_min",
    "clip_max", "warm_start_steps", "lambda_update_period", "tol_rel", "patience",
    "init_gamma", "init_lambda", "seed", "noise_update", "studentized_power",
    "lr_gamma", "lr_lambda", "admm",
)


def policy_from_dict(d: Optional[dict]):
    d = d or {}
    kind = d.get("policy", "mean")
    if kind == "mean":
        return Mean()
    if kind == "trimmed":
        return TrimmedMean(float(d.get("alpha", 0.05)))
    raise InputError(f"unknown lambda_base policy {kind!r}")


def policy_to_dict(p) -> dict:
    if isinstance(p, TrimmedMean):
        return {"policy": "trimmed", "alpha": p.alpha}
    return {"policy": "mean"}


@dataclass(frozen=True)
class RunConfig:
    fit: FitConfig = FitConfig()
    features: FeatureMapSpec = Identity()
    lambda_policy: object = Mean()
    standardize: bool = True
    contamination: Optional[ContaminationSpec] = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        fit_part = {k: d.pop(k) for k in FIT_KEYS if k in d}
        features = map_from_dict(d.pop("features", None))
        policy = policy_from_dict(d.pop("lambda_base", None))
        standardize = bool(d.pop("standardize", True))
        cont = d.pop("contamination", None)
        seed = fit_part.get("seed", 0)
        if cont is not None:
            cont = dict(cont)
            cont.setdefault("seed", seed)
            cont = ContaminationSpec(**cont)
        if d:
            raise InputError(f"unknown config keys: {sorted(d)}")
        return cls(FitConfig.from_dict(fit_part), features, policy, standardize, cont)

    def to_dict(self) -> dict:
        out = self.fit.to_dict()
        out["features"] = map_to_dict(self.features)
        out["lambda_base"] = policy_to_dict(self.lambda_policy)
        out["standardize"] = self.standardize
        if self.contamination is not None:
            out["contamination"] = asdict(self.contamination)
        return out


@dataclass
class Model:
    """Everything needed to predict on raw inputs."""

    posterior: WeightPosterior
    lambda_base: float
    stats: StandardizerStats
    features: FeatureMapSpec
    centers: Optional[np.ndarray] = None

    def design(self, X_raw):
        return apply_map(self.features, self.stats, X_raw, self.centers)

    def predict(self, X_raw):
        """Predictive means and variances in original target units."""
        mean, var = predict_batch(self.posterior, self.lambda_base, self.design(X_raw))
        s = self.stats.target_scale
        return self.stats.inverse_y(mean), var * s * s

    def to_json(self) -> dict:
        out = {
            "mu": self.posterior.mu.tolist(),
            "cov": self.posterior.cov.tolist(),
            "lambda_base": float(self.lambda_base),
            "standardizer": self.stats.to_json(),
            "feature_map": map_to_dict(self.features),
        }
        if self.centers is not None:
            out["centers"] = np.asarray(self.centers).tolist()
        return out

    @classmethod
    def from_json(cls, d: dict) -> "Model":
        try:
            post = WeightPosterior(np.asarray(d["mu"], float), np.asarray(d["cov"], float))
            centers = d.get("centers")
            return cls(
                post,
                float(d["lambda_base"]),
                StandardizerStats.from_json(d["standardizer"]),
                map_from_dict(d["feature_map"]),
                None if centers is None else np.asarray(centers, float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed model record: {exc}") from None


@dataclass
class Prepared:
    data: Dataset
    stats: StandardizerStats
    features: FeatureMapSpec
    centers: Optional[np.ndarray]
    outliers: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def prepare(train_raw: Dataset, cfg: RunConfig) -> Prepared:
    """Standardize, fix the feature map and optionally contaminate targets."""
    if cfg.standardize:
        stats = standardize_fit(train_raw)
    else:
        stats = StandardizerStats.identity(train_raw.d)
    spec, centers = fit_map(cfg.features, stats, train_raw.X)
    Phi = apply_map(spec, stats, train_raw.X, centers)
    y = stats.transform_y(train_raw.y)
    outliers = np.zeros(0, np.int64)
    if cfg.contamination is not None:
        y, outliers = contaminate_targets(y, cfg.contamination)
    return Prepared(Dataset(Phi, y), stats, spec, centers, outliers)


def score(model: Model, test_raw: Dataset) -> dict:
    mean, var = model.predict(test_raw.X)
    return {"rmse": rmse(mean, test_raw.y), "nll": predictive_nll((mean, var), test_raw.y)}


@dataclass
class RunOutput:
    result: FitResult
    model: Model
    prepared: Prepared
    metrics: dict
    seconds: float

    @property
    def ess_theta(self) -> float:
        return ess(RelevanceScores.from_precisions(self.result.state.gamma))

    @property
    def ess_y(self) -> float:
        return ess(RelevanceScores.from_noise(self.result.state.noise.variances(self.prepared.data.n)))


def run(train_raw: Dataset, test_raw: Optional[Dataset], cfg: RunConfig) -> RunOutput:
    t0 = time.perf_counter()
    prep = prepare(train_raw, cfg)
    res = fit(prep.data, cfg.fit)
    model = Model(res.posterior, lambda_base(res.state.noise, cfg.lambda_policy),
                  prep.stats, prep.features, prep.centers)
    metrics = score(model, test_raw) if test_raw is not None else {}
    return RunOutput(res, model, prep, metrics, time.perf_counter() - t0)
