"""
Geometría de la esfera espectral: radio objetivo, escaladores de tasa de
aprendizaje, inicialización espectral μP, proyector tangente y retracciones.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from src.errors import ConfigError, DegenerateDraw, NonPositiveSigma
from src.utils.matlin import SpectralTriplet, as_matrix, power_iteration

logger = logging.getLogger(__name__)

DEFAULT_RADIUS_C = 2.0
DEFAULT_INIT_STD = 0.02
DEGENERATE_SIGMA = 1e-12


class ScalerKind(str, Enum):
    SPECTRAL_MUP = 'spectral_mup'
    ALIGN_ADAM_RMS = 'align_adam_rms'
    SPECTRAL_KAIMING = 'spectral_kaiming'


@dataclass(frozen=True)
class RadiusSpec:
    """Radio objetivo R = c·√(d_out/d_in) de un módulo atómico."""

    c: float
    d_out: int
    d_in: int

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"la escala de radio c debe ser positiva, recibió {self.c}")
        if self.d_out < 1 or self.d_in < 1:
            raise ConfigError(f"dimensiones inválidas: {self.d_out}×{self.d_in}")

    @property
    def radius(self) -> float:
        return self.c * math.sqrt(self.d_out / self.d_in)


def lr_scaler(kind: ScalerKind, d_out: int, d_in: int) -> float:
    """
    Escalador de la tasa de aprendizaje por forma del módulo.

    Args:
        kind: Variante del escalador
        d_out: Dimensión de salida
        d_in: Dimensión de entrada

    Returns:
        Factor positivo que multiplica η
    """
    if d_out < 1 or d_in < 1:
        raise ConfigError(f"dimensiones inválidas: {d_out}×{d_in}")
    kind = ScalerKind(kind)
    if kind is ScalerKind.SPECTRAL_MUP:
        return math.sqrt(d_out / d_in)
    if kind is ScalerKind.ALIGN_ADAM_RMS:
        return 0.2 * math.sqrt(max(d_out, d_in))
    return math.sqrt(max(1.0, d_out / d_in))


def update_scale(radius: RadiusSpec, kind: ScalerKind) -> float:
    """Escala de la actualización en la esfera: c·escalador (= R con μP espectral)."""
    return radius.c * lr_scaler(kind, radius.d_out, radius.d_in)


def gaussian_draw(d_out: int, d_in: int, sigma_gauss: float, seed: int) -> np.ndarray:
    """Muestra W_k ~ N(0, sigma_gauss²) antes de proyectar."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, sigma_gauss, size=(d_out, d_in))


def spectral_init_with_triplet(d_out: int, d_in: int, radius: RadiusSpec,
                               sigma_gauss: float = DEFAULT_INIT_STD, seed: int = 0,
                               max_resamples: int = 8):
    """
    Inicialización espectral que además devuelve el triplete convergido,
    para sembrar la caché de vectores singulares del optimizador.

    Returns:
        Tupla (W, SpectralTriplet de W)
    """
    if not sigma_gauss > 0:
        raise ConfigError(f"sigma_gauss debe ser positiva, recibió {sigma_gauss}")
    R = radius.radius
    for attempt in range(max_resamples + 1):
        draw = gaussian_draw(d_out, d_in, sigma_gauss, seed + attempt)
        if np.max(np.abs(draw)) > 0:
            triplet = power_iteration(draw, max_iters=5000, tol=1e-12)
            if triplet.sigma >= DEGENERATE_SIGMA:
                weight = draw * (R / triplet.sigma)
                scaled = SpectralTriplet(sigma=R, u=triplet.u, v=triplet.v,
                                         iterations=triplet.iterations,
                                         converged=triplet.converged,
                                         residual=triplet.residual)
                return weight, scaled
        logger.warning(f"⚠️ Muestra gaussiana degenerada (semilla {seed + attempt}), "
                       f"se vuelve a muestrear")
    raise DegenerateDraw(f"‖W_k‖₂ < {DEGENERATE_SIGMA} tras {max_resamples + 1} muestras "
                         f"(semilla inicial {seed})")


def spectral_init(d_out: int, d_in: int, radius: RadiusSpec,
                  sigma_gauss: float = DEFAULT_INIT_STD, seed: int = 0) -> np.ndarray:
    """
    Inicializa W = R · W_k / ‖W_k‖₂ con W_k gaussiana.

    Args:
        d_out: Filas
        d_in: Columnas
        radius: Radio objetivo
        sigma_gauss: Desviación de la muestra previa a la proyección
        seed: Semilla; una muestra degenerada se reintenta con semilla + 1

    Returns:
        Matriz con ‖W‖₂ = R
    """
    weight, _ = spectral_init_with_triplet(d_out, d_in, radius, sigma_gauss, seed)
    return weight


def tangent_projector(triplet: SpectralTriplet) -> np.ndarray:
    """Θ = u₁v₁ᵀ, gradiente de ‖W‖₂."""
    return np.outer(triplet.u, triplet.v)


def retract_hard(weight: np.ndarray, sigma: float, R: float) -> np.ndarray:
    """
    Proyecta los pesos de vuelta a la esfera: W·(R/σ).

    Args:
        weight: Pesos actuales
        sigma: ‖W‖₂ estimada por iteración de potencia
        R: Radio objetivo

    Returns:
        Pesos con norma espectral R
    """
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma debe ser positiva para retraer, recibió {sigma}")
    return as_matrix(weight) * (R / sigma)


def retract_dynamic(weight: np.ndarray, sigma: float, R: float,
                    lambda_wd: float, eta: float) -> np.ndarray:
    """
    Ajuste radial suave: (1 + λ·η·sign(R − σ))·W; sign(0) = 0.
    """
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma debe ser positiva para retraer, recibió {sigma}")
    if not eta > 0 or lambda_wd < 0:
        raise ConfigError(f"eta > 0 y lambda_wd ≥ 0 requeridos (eta={eta}, lambda_wd={lambda_wd})")
    factor = 1.0 + lambda_wd * eta * float(np.sign(R - sigma))
    return as_matrix(weight) * factor


def frobenius_bound(d_out: int, d_in: int, R: float) -> float:
    """Cota ‖W‖_F ≤ √min(d_out, d_in)·R válida en la esfera."""
    return math.sqrt(min(d_out, d_in)) * R
