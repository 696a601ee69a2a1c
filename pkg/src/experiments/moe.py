"""
Estimador Monte Carlo del factor de escala entre expertos compartidos y
enrutados en una capa MoE con enrutado sigmoide top-k renormalizado.
"""

import math
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError

MIN_TRIALS = 1000


@dataclass(frozen=True)
class MoeEstimate:
    factor: float
    stderr: float
    trials: int

    def to_dict(self):
        return {'factor': self.factor, 'stderr': self.stderr, 'trials': self.trials}


def _validate(n_total: int, k_routed: int, n_shared: int, trials: int) -> None:
    if n_shared < 1 or k_routed < 1:
        raise ConfigError("k_routed y n_shared deben ser ≥ 1")
    if not k_routed < n_total - n_shared:
        raise ConfigError(f"k_routed = {k_routed} debe ser menor que "
                          f"n_total − n_shared = {n_total - n_shared}")
    if trials < MIN_TRIALS:
        raise ConfigError(f"se necesitan al menos {MIN_TRIALS} ensayos, recibió {trials}")


def sample_moe_factors(n_total: int = 64, k_routed: int = 4, n_shared: int = 1,
                       trials: int = 10000, seed: int = 0) -> np.ndarray:
    """
    Muestras de √n_shared / ‖g‖₂, con g las k mayores puntuaciones sigmoide
    de logits N(0, 1) sobre los n_total − n_shared expertos enrutados,
    renormalizadas a suma 1.

    Returns:
        Array de ``trials`` factores
    """
    _validate(n_total, k_routed, n_shared, trials)
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((trials, n_total - n_shared))
    scores = 1.0 / (1.0 + np.exp(-logits))
    top = -np.sort(-scores, axis=1)[:, :k_routed]
    top = top / top.sum(axis=1, keepdims=True)
    magnitude = np.sqrt(np.sum(top ** 2, axis=1))
    return math.sqrt(n_shared) / magnitude


def moe_scaling_factor(n_total: int = 64, k_routed: int = 4, n_shared: int = 1,
                       trials: int = 10000, seed: int = 0) -> float:
    """Media Monte Carlo del factor de escala (≈ 2.0 con 64 expertos, top-4, 1 compartido)."""
    return float(np.mean(sample_moe_factors(n_total, k_routed, n_shared, trials, seed)))


def estimate_moe_factor(n_total: int = 64, k_routed: int = 4, n_shared: int = 1,
                        trials: int = 10000, seed: int = 0) -> MoeEstimate:
    """Media y error estándar Monte Carlo."""
    factors = sample_moe_factors(n_total, k_routed, n_shared, trials, seed)
    stderr = float(np.std(factors, ddof=1) / math.sqrt(trials))
    return MoeEstimate(factor=float(np.mean(factors)), stderr=stderr, trials=trials)
