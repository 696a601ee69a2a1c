"""
Optimizadores por módulo atómico: SSO (descenso más pronunciado en la
esfera espectral), MuonSphere, Muon y AdamW.

Cada paso recibe los pesos, el gradiente y el estado del módulo, modifica el
estado en su sitio y devuelve ``(nuevos_pesos, ModuleReport)``.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from src.errors import ConfigError, ShapeMismatch, ZeroMatrix, ZeroOperand
from src.utils.matlin import (MSIGN_COEFFICIENTS, SpectralTriplet, as_matrix,
                              frobenius_norm, inner, msign, power_iteration)
from src.utils.spectral_geom import (RadiusSpec, ScalerKind, lr_scaler, retract_dynamic,
                                     retract_hard, tangent_projector, update_scale)

logger = logging.getLogger(__name__)

ZERO_OPERAND_RTOL = 1e-12
DEGENERATE_WIDTH = 1e-12


class OptimizerKind(str, Enum):
    SSO = 'sso'
    MUON_SPHERE = 'muon_sphere'
    MUON = 'muon'
    ADAMW = 'adamw'


class RetractionKind(str, Enum):
    HARD = 'hard'
    DYNAMIC = 'dynamic'


@dataclass
class SsoConfig:
    """Hiperparámetros de todos los optimizadores (los de SSO y los de las líneas base)."""

    eta: float = 0.02
    beta: float = 0.95
    nesterov: bool = True
    msign_iters: int = 8
    msign_coefficients: str = 'polar_express'
    solver_tol: float = 2e-4
    solver_max_iters: int = 20
    bracket_init: float = 0.1
    bracket_growth: float = 2.0
    retraction: RetractionKind = RetractionKind.HARD
    lambda_wd: float = 0.1
    radius_c: float = 2.0
    scaler: ScalerKind = ScalerKind.SPECTRAL_MUP
    power_tol: float = 1e-6
    power_iters: int = 200
    # Decaimiento desacoplado en la esfera (0 = desactivado) y en las líneas base
    weight_decay: float = 0.0
    baseline_weight_decay: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8
    adam_eta: Optional[float] = None

    def __post_init__(self):
        self.retraction = RetractionKind(self.retraction)
        self.scaler = ScalerKind(self.scaler)
        if not self.eta > 0:
            raise ConfigError(f"eta debe ser positiva, recibió {self.eta}")
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta debe estar en [0, 1), recibió {self.beta}")
        if self.msign_iters < 1:
            raise ConfigError("msign_iters debe ser ≥ 1")
        if self.msign_coefficients not in MSIGN_COEFFICIENTS:
            raise ConfigError(f"calendario msign desconocido: {self.msign_coefficients}")
        if not self.solver_tol > 0 or self.solver_max_iters < 1:
            raise ConfigError("solver_tol > 0 y solver_max_iters ≥ 1 requeridos")
        if not self.bracket_init > 0 or not self.bracket_growth > 1:
            raise ConfigError("bracket_init > 0 y bracket_growth > 1 requeridos")
        if self.lambda_wd < 0 or self.weight_decay < 0 or self.baseline_weight_decay < 0:
            raise ConfigError("los coeficientes de decaimiento no pueden ser negativos")
        if not self.radius_c > 0:
            raise ConfigError(f"radius_c debe ser positiva, recibió {self.radius_c}")
        if not self.power_tol > 0 or self.power_iters < 1:
            raise ConfigError("power_tol > 0 y power_iters ≥ 1 requeridos")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("parámetros de Adam fuera de rango")
        if self.adam_eta is not None and not self.adam_eta > 0:
            raise ConfigError(f"adam_eta debe ser positiva, recibió {self.adam_eta}")


@dataclass
class OptimizerState:
    """Momento, caché de vectores singulares y contador de pasos de un módulo."""

    momentum: np.ndarray
    cached_u: Optional[np.ndarray] = None
    cached_v: Optional[np.ndarray] = None
    step_count: int = 0
    # Segundo momento de AdamW
    second_moment: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> 'OptimizerState':
        return cls(momentum=np.zeros(shape, dtype=np.float64))

    def cache(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        if self.cached_u is None or self.cached_v is None:
            return None
        return self.cached_u, self.cached_v

    def store_triplet(self, triplet: SpectralTriplet) -> None:
        self.cached_u = triplet.u
        self.cached_v = triplet.v


@dataclass(frozen=True)
class SolveReport:
    """Resultado del solver de λ por acotamiento y bisección."""

    lambda_star: float
    residual: float
    bracket_steps: int
    bisect_steps: int
    degenerate: bool
    converged: bool
    phi: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def evaluations(self) -> int:
        # h(0) más cada paso de acotamiento y de bisección
        return 1 + self.bracket_steps + self.bisect_steps


@dataclass(frozen=True)
class ModuleReport:
    """Telemetría de un paso sobre un módulo atómico."""

    lambda_star: float = 0.0
    solver_iters: int = 0
    degenerate: bool = False
    converged: bool = True
    tangency: float = 0.0
    update_spectral_norm: float = 0.0
    sigma_pre: float = float('nan')
    power_iters: int = 0


def _check_shapes(weight: np.ndarray, grad: np.ndarray, state: OptimizerState) -> None:
    if weight.shape != grad.shape:
        raise ShapeMismatch(f"gradiente {grad.shape} para pesos {weight.shape}")
    if state.momentum.shape != weight.shape:
        raise ShapeMismatch(f"momento {state.momentum.shape} para pesos {weight.shape}")


def _momentum_direction(grad: np.ndarray, state: OptimizerState, cfg: SsoConfig) -> np.ndarray:
    state.momentum = cfg.beta * state.momentum + (1.0 - cfg.beta) * grad
    if cfg.nesterov:
        return cfg.beta * state.momentum + (1.0 - cfg.beta) * grad
    return state.momentum


def _spectral_norm_or_zero(a: np.ndarray) -> float:
    if not np.any(a):
        return 0.0
    return power_iteration(a, max_iters=500, tol=1e-9).sigma


def _h_and_phi(m_hat: np.ndarray, theta: np.ndarray, lam: float,
               msign_iters: int, coefficients: str) -> Tuple[float, np.ndarray]:
    operand = m_hat + lam * theta
    scale = frobenius_norm(m_hat) + abs(lam) * frobenius_norm(theta)
    if frobenius_norm(operand) <= ZERO_OPERAND_RTOL * scale:
        raise ZeroOperand(f"M̂ + λΘ se anula en λ = {lam:.6g}")
    phi = msign(operand, iters=msign_iters, coefficients=coefficients)
    return inner(theta, phi), phi


def h_eval(m_hat: np.ndarray, theta: np.ndarray, lam: float,
           msign_iters: int = 8, coefficients: str = 'polar_express') -> float:
    """
    Evalúa h(λ) = ⟨Θ, msign(M̂ + λΘ)⟩, no decreciente en λ.

    Args:
        m_hat: Momento normalizado (‖M̂‖_F ≈ 1)
        theta: Proyector tangente u₁v₁ᵀ
        lam: Multiplicador de Lagrange
        msign_iters: Iteraciones de msign

    Returns:
        Valor en [−1, 1] salvo la tolerancia de msign
    """
    m_hat, theta = as_matrix(m_hat, 'M_hat'), as_matrix(theta, 'Theta')
    if m_hat.shape != theta.shape:
        raise ShapeMismatch(f"M̂ {m_hat.shape} y Θ {theta.shape}")
    value, _ = _h_and_phi(m_hat, theta, lam, msign_iters, coefficients)
    return value


def solve_lambda(m_hat: np.ndarray, theta: np.ndarray, cfg: SsoConfig) -> SolveReport:
    """
    Busca la raíz de h(λ) con expansión geométrica del intervalo y bisección.

    Cada evaluación cuesta un msign; el total (incluida h(0)) se limita a
    ``cfg.solver_max_iters``. Un operando nulo cuenta como h = 0 con Φ = 0.

    Args:
        m_hat: Momento normalizado
        theta: Proyector tangente
        cfg: Tolerancia, presupuesto y parámetros de acotamiento

    Returns:
        SolveReport con λ*, |h(λ*)| y el Φ correspondiente
    """
    m_hat, theta = as_matrix(m_hat, 'M_hat'), as_matrix(theta, 'Theta')
    if m_hat.shape != theta.shape:
        raise ShapeMismatch(f"M̂ {m_hat.shape} y Θ {theta.shape}")
    tol = cfg.solver_tol
    hit_zero = set()

    def evaluate(lam: float) -> Tuple[float, np.ndarray]:
        try:
            return _h_and_phi(m_hat, theta, lam, cfg.msign_iters, cfg.msign_coefficients)
        except ZeroOperand:
            hit_zero.add(lam)
            return 0.0, np.zeros_like(m_hat)

    def report(lam, value, phi, bracket_steps, bisect_steps, degenerate, converged):
        return SolveReport(lambda_star=float(lam), residual=abs(value),
                           bracket_steps=bracket_steps, bisect_steps=bisect_steps,
                           degenerate=degenerate or lam in hit_zero,
                           converged=converged, phi=phi)

    h0, phi0 = evaluate(0.0)
    evals = 1
    if abs(h0) <= tol:
        return report(0.0, h0, phi0, 0, 0, False, True)

    best = (abs(h0), 0.0, h0, phi0)
    m_norm = frobenius_norm(m_hat)
    bound = 2.0 * math.sqrt(min(m_hat.shape)) * m_norm
    direction = -1.0 if h0 > 0 else 1.0
    width = cfg.bracket_init * m_norm

    # Fase 1: expandir en sentido contrario al signo de h(0)
    inner_lam, inner_h = 0.0, h0
    outer = None
    bracket_steps = 0
    while evals < cfg.solver_max_iters:
        lam = direction * min(width, bound)
        value, phi = evaluate(lam)
        evals += 1
        bracket_steps += 1
        if abs(value) < best[0]:
            best = (abs(value), lam, value, phi)
        if abs(value) <= tol:
            return report(lam, value, phi, bracket_steps, 0, False, True)
        if np.sign(value) != np.sign(h0):
            outer = (lam, value)
            break
        inner_lam, inner_h = lam, value
        if width >= bound:
            break
        width *= cfg.bracket_growth

    if outer is None:
        logger.warning(f"⚠️ Sin cambio de signo de h dentro de |λ| ≤ {bound:.4g}; "
                       f"se devuelve el mejor punto evaluado")
        _, lam, value, phi = best
        return report(lam, value, phi, bracket_steps, 0, False, False)

    # Fase 2: bisección sobre [a, b] con h(a) < 0 < h(b)
    (a, ha), (b, hb) = sorted([(inner_lam, inner_h), (outer[0], outer[1])])
    bisect_steps = 0
    while evals < cfg.solver_max_iters:
        if b - a < DEGENERATE_WIDTH:
            break
        mid = 0.5 * (a + b)
        value, phi = evaluate(mid)
        evals += 1
        bisect_steps += 1
        if abs(value) < best[0]:
            best = (abs(value), mid, value, phi)
        if abs(value) <= tol:
            return report(mid, value, phi, bracket_steps, bisect_steps, False, True)
        if value < 0:
            a, ha = mid, value
        else:
            b, hb = mid, value

    if b - a < DEGENERATE_WIDTH:
        # Salto de msign: h cruza 0 sin alcanzarlo
        logger.warning(f"⚠️ Raíz degenerada de h en λ ≈ {0.5 * (a + b):.6g} "
                       f"(ancho {b - a:.2e}, salto {hb - ha:.3f})")
        _, _, value, phi = best
        return report(0.5 * (a + b), value, phi, bracket_steps, bisect_steps, True, False)

    logger.debug(f"Presupuesto del solver agotado: |h| = {best[0]:.2e}")
    _, lam, value, phi = best
    return report(lam, value, phi, bracket_steps, bisect_steps, False, False)


def _sphere_step(weight: np.ndarray, grad: np.ndarray, state: OptimizerState,
                 cfg: SsoConfig, radius: RadiusSpec, eta: Optional[float],
                 solve: bool) -> Tuple[np.ndarray, ModuleReport]:
    weight, grad = as_matrix(weight, 'W'), as_matrix(grad, 'G')
    _check_shapes(weight, grad, state)
    if weight.shape != (radius.d_out, radius.d_in):
        raise ShapeMismatch(f"pesos {weight.shape} para un radio {radius.d_out}×{radius.d_in}")
    eta = cfg.eta if eta is None else eta
    R = radius.radius

    state.step_count += 1
    direction = _momentum_direction(grad, state, cfg)

    triplet = power_iteration(weight, warm_start=state.cache(),
                              max_iters=cfg.power_iters, tol=cfg.power_tol)
    state.store_triplet(triplet)
    theta = tangent_projector(triplet)

    if cfg.retraction is RetractionKind.HARD:
        weight = retract_hard(weight, triplet.sigma, R)
    else:
        weight = retract_dynamic(weight, triplet.sigma, R, cfg.lambda_wd, eta)
    if cfg.weight_decay > 0:
        weight = weight * (1.0 - eta * cfg.weight_decay)

    d_norm = frobenius_norm(direction)
    if d_norm == 0:
        return weight, ModuleReport(degenerate=True, converged=False,
                                    sigma_pre=triplet.sigma, power_iters=triplet.iterations)
    m_hat = direction / d_norm

    if solve:
        solved = solve_lambda(m_hat, theta, cfg)
    else:
        try:
            _, phi = _h_and_phi(m_hat, theta, 0.0, cfg.msign_iters, cfg.msign_coefficients)
        except ZeroOperand:
            phi = np.zeros_like(m_hat)
        solved = SolveReport(lambda_star=0.0, residual=abs(inner(theta, phi)),
                             bracket_steps=0, bisect_steps=0, degenerate=False,
                             converged=True, phi=phi)

    phi = solved.phi
    step = eta * update_scale(radius, cfg.scaler)
    new_weight = weight - step * phi
    return new_weight, ModuleReport(
        lambda_star=solved.lambda_star,
        solver_iters=solved.evaluations if solve else 0,
        degenerate=solved.degenerate,
        converged=solved.converged,
        tangency=inner(theta, phi),
        update_spectral_norm=step * _spectral_norm_or_zero(phi),
        sigma_pre=triplet.sigma,
        power_iters=triplet.iterations,
    )


def sso_step(weight: np.ndarray, grad: np.ndarray, state: OptimizerState,
             cfg: SsoConfig, radius: RadiusSpec,
             eta: Optional[float] = None) -> Tuple[np.ndarray, ModuleReport]:
    """
    Un paso del optimizador de esfera espectral.

    Orden: momento (Nesterov opcional), normalización M̂ = D/‖D‖_F, iteración
    de potencia con caché, Θ = u vᵀ, retracción previa a la actualización,
    solver de λ, Φ = msign(M̂ + λ*Θ) y W ← W − η·escala·Φ.

    Args:
        weight: Pesos del módulo (d_out × d_in)
        grad: Gradiente de la pérdida
        state: Estado del módulo (se modifica)
        cfg: Hiperparámetros
        radius: Radio objetivo del módulo
        eta: Tasa de aprendizaje del paso; por defecto ``cfg.eta``

    Returns:
        Tupla (nuevos pesos, ModuleReport)
    """
    return _sphere_step(weight, grad, state, cfg, radius, eta, solve=True)


def muon_sphere_step(weight: np.ndarray, grad: np.ndarray, state: OptimizerState,
                     cfg: SsoConfig, radius: RadiusSpec,
                     eta: Optional[float] = None) -> Tuple[np.ndarray, ModuleReport]:
    """Igual que ``sso_step`` con λ fijo en 0: retracción y W ← W − η·escala·msign(M̂)."""
    return _sphere_step(weight, grad, state, cfg, radius, eta, solve=False)


def muon_step(weight: np.ndarray, grad: np.ndarray, state: OptimizerState,
              cfg: SsoConfig, eta: Optional[float] = None,
              weight_decay: Optional[float] = None) -> Tuple[np.ndarray, ModuleReport]:
    """
    Paso de Muon: W ← W·(1 − η·wd) − η·escalador·msign(D), sin restricción de norma.

    Raises:
        ZeroMatrix: si el momento es nulo
    """
    weight, grad = as_matrix(weight, 'W'), as_matrix(grad, 'G')
    _check_shapes(weight, grad, state)
    eta = cfg.eta if eta is None else eta
    wd = cfg.baseline_weight_decay if weight_decay is None else weight_decay

    state.step_count += 1
    direction = _momentum_direction(grad, state, cfg)
    if frobenius_norm(direction) == 0:
        raise ZeroMatrix("momento nulo en el paso de Muon")
    phi = msign(direction, iters=cfg.msign_iters, coefficients=cfg.msign_coefficients)
    d_out, d_in = weight.shape
    step = eta * lr_scaler(cfg.scaler, d_out, d_in)
    new_weight = weight * (1.0 - eta * wd) - step * phi
    return new_weight, ModuleReport(update_spectral_norm=step * _spectral_norm_or_zero(phi))


def adamw_step(weight: np.ndarray, grad: np.ndarray, state: OptimizerState,
               cfg: SsoConfig, eta: Optional[float] = None,
               weight_decay: Optional[float] = None) -> Tuple[np.ndarray, ModuleReport]:
    """
    Paso de AdamW con corrección de sesgo y decaimiento desacoplado.

    El buffer ``momentum`` hace de primer momento y ``second_moment`` de segundo.
    """
    weight, grad = as_matrix(weight, 'W'), as_matrix(grad, 'G')
    _check_shapes(weight, grad, state)
    eta = cfg.eta if eta is None else eta
    wd = cfg.baseline_weight_decay if weight_decay is None else weight_decay
    if state.second_moment is None:
        state.second_moment = np.zeros_like(weight)

    state.step_count += 1
    t = state.step_count
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.momentum = b1 * state.momentum + (1.0 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * grad * grad
    m_hat = state.momentum / (1.0 - b1 ** t)
    v_hat = state.second_moment / (1.0 - b2 ** t)
    update = eta * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    new_weight = weight * (1.0 - eta * wd) - update
    return new_weight, ModuleReport(update_spectral_norm=_spectral_norm_or_zero(update))


def optimizer_step(kind: OptimizerKind, weight: np.ndarray, grad: np.ndarray,
                   state: OptimizerState, cfg: SsoConfig,
                   radius: Optional[RadiusSpec] = None, eta: Optional[float] = None,
                   weight_decay: Optional[float] = None) -> Tuple[np.ndarray, ModuleReport]:
    """Despacha al paso del optimizador indicado."""
    kind = OptimizerKind(kind)
    if kind in (OptimizerKind.SSO, OptimizerKind.MUON_SPHERE):
        if radius is None:
            raise ConfigError(f"el optimizador {kind.value} necesita un radio")
        step_fn = sso_step if kind is OptimizerKind.SSO else muon_sphere_step
        return step_fn(weight, grad, state, cfg, radius, eta=eta)
    if kind is OptimizerKind.MUON:
        return muon_step(weight, grad, state, cfg, eta=eta, weight_decay=weight_decay)
    return adamw_step(weight, grad, state, cfg, eta=eta, weight_decay=weight_decay)
