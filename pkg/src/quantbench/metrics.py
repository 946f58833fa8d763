"""Quantification error measures (AE, smoothed RAE) and distribution shift."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SmoothingConfig:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("smoothing epsilon must be positive")

    @classmethod
    def for_sample_size(cls, sample_size: int) -> "SmoothingConfig":
        if sample_size < 1:
            raise ValueError("sample size must be >= 1")
        return cls(1.0 / (2.0 * sample_size))


def _pair(p, p_hat):
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ValueError(f"prevalence vectors differ in size: {p.shape} vs {p_hat.shape}")
    return p, p_hat


def ae(p, p_hat) -> float:
    """Mean absolute difference across classes."""
    p, p_hat = _pair(p, p_hat)
    return float(np.abs(p_hat - p).mean())


def max_ae(p) -> float:
    """Largest AE any estimate can incur against true prevalence ``p``."""
    p = np.asarray(p, dtype=np.float64)
    return float(2.0 * (1.0 - p.min()) / len(p))


def smooth(p, cfg: SmoothingConfig | float) -> np.ndarray:
    eps = cfg.epsilon if isinstance(cfg, SmoothingConfig) else float(cfg)
    p = np.asarray(p, dtype=np.float64)
    return (eps + p) / (eps * len(p) + p.sum())


def rae(p, p_hat, sample_size: int) -> float:
    """Relative absolute error with both vectors smoothed by eps = 1/(2*sample_size)."""
    p, p_hat = _pair(p, p_hat)
    cfg = SmoothingConfig.for_sample_size(sample_size)
    ps, phs = smooth(p, cfg), smooth(p_hat, cfg)
    return float((np.abs(phs - ps) / ps).mean())


def shift(train_prev, sample_prev) -> float:
    return ae(train_prev, sample_prev)


def error_by_name(name: str):
    name = name.lower()
    if name == "ae":
        return lambda p, p_hat, n: ae(p, p_hat)
    if name == "rae":
        return rae
    raise ValueError(f"unknown error measure {name!r}; use 'ae' or 'rae'")
