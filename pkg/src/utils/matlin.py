"""
Núcleos de matrices densas y oráculos de referencia.

Todas las matrices son ``numpy.ndarray`` 2-D en float64, contiguas por filas.
Incluye normas, iteración de potencia con arranque en caliente, la función
signo matricial (msign) por Newton–Schulz y una SVD de Jacobi usada solo
como oráculo en las pruebas.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import NonFiniteMatrix, ShapeMismatch, TooLarge, ZeroMatrix

logger = logging.getLogger(__name__)

DEFAULT_MSIGN_ITERS = 8
POWER_TOL = 1e-6
POWER_MAX_ITERS_COLD = 50
POWER_MAX_ITERS_WARM = 8
ORACLE_MAX_DIM = 256

Coefficients = Tuple[float, float, float]

# Polinomios impares p(x) = a·x + b·x³ + c·x⁵, uno por iteración; si hay más
# iteraciones que entradas se repite la última.
MSIGN_COEFFICIENTS: Dict[str, List[Coefficients]] = {
    'polar_express': [
        (8.237312490495555, -23.157747414558198, 16.680568411445915),
        (4.082441999064835, -2.893047735332586, 0.5252849256975648),
        (3.9263479922546582, -2.8547468034765298, 0.5318022422894988),
        (3.2982187133085143, -2.424541981026706, 0.48632008358844075),
        (2.2970369434552573, -1.63662558125903, 0.4002628455953627),
        (1.8763805351440397, -1.2347896577722228, 0.35891887501668385),
        (1.8564423485617974, -1.2132449880935525, 0.3568003487825883),
        (1.8749994008682747, -1.2499988017229169, 0.3749994008546422),
    ],
    # Newton–Schulz cúbico clásico: 1.5·X − 0.5·X XᵀX
    'newton_schulz': [
        (1.5, -0.5, 0.0),
    ],
}


@dataclass(frozen=True)
class SpectralTriplet:
    """Valor singular superior σ₁ y vectores unitarios (u₁, v₁)."""

    sigma: float
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0


@dataclass(frozen=True)
class SvdFactors:
    """SVD delgada: U (m×k), S (k, no creciente), V (n×k) con k = min(m, n)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def as_matrix(a: Union[np.ndarray, Sequence], name: str = 'A') -> np.ndarray:
    """
    Valida y convierte a una matriz float64 contigua.

    Args:
        a: Datos 2-D
        name: Nombre usado en los mensajes de error

    Returns:
        Matriz float64 contigua por filas
    """
    matrix = np.ascontiguousarray(a, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ShapeMismatch(f"{name} debe ser 2-D y no vacía, forma {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteMatrix(f"{name} contiene NaN o Inf")
    return matrix


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Producto interno de Frobenius ⟨A, B⟩ = tr(AᵀB)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"formas distintas: {a.shape} vs {b.shape}")
    return float(np.vdot(a, b))


def frobenius_norm(a: np.ndarray) -> float:
    """√(Σ a_ij²)."""
    return float(np.linalg.norm(a))


def random_matrix(rows: int, cols: int, std: float = 1.0, seed: int = 0) -> np.ndarray:
    """Matriz gaussiana N(0, std²) determinista dada la semilla."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, std, size=(rows, cols))


def _canonical_sign(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # Primera componente no nula de u ≥ 0; el signo se propaga a v.
    scale = np.max(np.abs(u))
    if scale == 0:
        return u, v
    first = int(np.flatnonzero(np.abs(u) > 1e-12 * scale)[0])
    if u[first] < 0:
        return -u, -v
    return u, v


def _cold_start(a: np.ndarray) -> np.ndarray:
    # Fila de mayor norma: determinista y nunca ortogonal a todo el espacio de filas.
    row = a[int(np.argmax(np.einsum('ij,ij->i', a, a)))]
    return row / np.linalg.norm(row)


def power_iteration(a: np.ndarray,
                    warm_start: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                    max_iters: Optional[int] = None,
                    tol: float = POWER_TOL) -> SpectralTriplet:
    """
    Estima el triplete singular superior por iteración de potencia.

    Args:
        a: Matriz no nula
        warm_start: Par (u, v) en caché de un paso anterior (opcional)
        max_iters: Tope de iteraciones; por defecto 50 en frío y 8 en caliente
        tol: Residuo relativo ‖Av − σu‖/σ aceptado

    Returns:
        SpectralTriplet; ``converged`` es False si se agotó el tope
    """
    a = as_matrix(a)
    if frobenius_norm(a) == 0:
        raise ZeroMatrix("power_iteration sobre la matriz cero")
    rows, cols = a.shape

    v = None
    if warm_start is not None:
        u0, v0 = warm_start
        if np.shape(u0) != (rows,) or np.shape(v0) != (cols,):
            raise ShapeMismatch(
                f"arranque en caliente con formas {np.shape(u0)}, {np.shape(v0)} "
                f"para una matriz {rows}×{cols}"
            )
        norm_v0 = np.linalg.norm(v0)
        if norm_v0 > 0:
            v = np.asarray(v0, dtype=np.float64) / norm_v0
    if max_iters is None:
        max_iters = POWER_MAX_ITERS_WARM if v is not None else POWER_MAX_ITERS_COLD
    if v is None:
        v = _cold_start(a)

    av = a @ v
    if np.linalg.norm(av) == 0:
        v = _cold_start(a)
        av = a @ v

    sigma, u, residual = 0.0, av, np.inf
    iterations = 0
    for iterations in range(1, max(1, max_iters) + 1):
        u = av / np.linalg.norm(av)
        w = a.T @ u
        sigma = float(np.linalg.norm(w))
        v = w / sigma
        av = a @ v
        residual = float(np.linalg.norm(av - sigma * u) / sigma)
        if residual <= tol:
            break

    converged = residual <= tol
    if not converged:
        logger.debug(f"Iteración de potencia sin converger: residuo {residual:.2e} "
                     f"tras {iterations} iteraciones")
    u, v = _canonical_sign(u, v)
    return SpectralTriplet(sigma=sigma, u=u, v=v, iterations=iterations,
                           converged=converged, residual=residual)


def spectral_norm(a: np.ndarray, max_iters: int = 1000, tol: float = 1e-10) -> float:
    """‖A‖₂ por iteración de potencia con tolerancia estricta."""
    return power_iteration(a, max_iters=max_iters, tol=tol).sigma


def msign_schedule(iters: int, coefficients: Union[str, Sequence[Coefficients]] = 'polar_express'
                   ) -> List[Coefficients]:
    """Lista de coeficientes (a, b, c) para ``iters`` iteraciones."""
    if isinstance(coefficients, str):
        if coefficients not in MSIGN_COEFFICIENTS:
            raise KeyError(f"coeficientes msign desconocidos: {coefficients}")
        table = MSIGN_COEFFICIENTS[coefficients]
    else:
        table = [tuple(c) for c in coefficients]
    if iters <= len(table):
        return list(table[:iters])
    return list(table) + [table[-1]] * (iters - len(table))


def msign(a: np.ndarray, iters: int = DEFAULT_MSIGN_ITERS,
          coefficients: Union[str, Sequence[Coefficients]] = 'polar_express') -> np.ndarray:
    """
    Factor polar U_r V_rᵀ aproximado por iteraciones de Newton–Schulz.

    La entrada se divide por su norma de Frobenius (cota superior de la
    espectral), así que todos los valores singulares arrancan en (0, 1].

    Args:
        a: Matriz no nula
        iters: Número de iteraciones polinómicas
        coefficients: Nombre del calendario o lista explícita de (a, b, c)

    Returns:
        Matriz de la misma forma con valores singulares no nulos ≈ 1
    """
    a = as_matrix(a)
    norm = frobenius_norm(a)
    if norm == 0:
        raise ZeroMatrix("msign de la matriz cero")

    transposed = a.shape[0] > a.shape[1]
    x = (a.T if transposed else a) / norm
    for ca, cb, cc in msign_schedule(iters, coefficients):
        gram = x @ x.T
        x = ca * x + (cb * gram + cc * (gram @ gram)) @ x
    return np.ascontiguousarray(x.T if transposed else x)


def _round_robin_pairs(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    # Torneo circular: cada ronda empareja columnas disjuntas, rotables a la vez.
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(p, q) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            left, right = zip(*pairs)
            rounds.append((np.array(left), np.array(right)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _one_sided_jacobi(a: np.ndarray, max_sweeps: int = 60, tol: float = 1e-14
                      ) -> Tuple[np.ndarray, np.ndarray]:
    # Jacobi cíclico sobre AᵀA aplicado implícitamente a las columnas (Hestenes).
    m = a.copy()
    n = m.shape[1]
    v = np.eye(n)
    rounds = _round_robin_pairs(n)
    for _ in range(max_sweeps):
        off = 0.0
        for p, q in rounds:
            mp, mq = m[:, p], m[:, q]
            alpha = np.einsum('ij,ij->j', mp, mp)
            beta = np.einsum('ij,ij->j', mq, mq)
            gamma = np.einsum('ij,ij->j', mp, mq)
            scale = np.sqrt(alpha * beta)
            active = (scale > 0) & (np.abs(gamma) > tol * scale)
            if not np.any(active):
                continue
            off = max(off, float(np.max(np.abs(gamma[active]) / scale[active])))
            safe_gamma = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe_gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            m[:, p], m[:, q] = c * mp - s * mq, s * mp + c * mq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if off <= tol:
            break
    return m, v


def svd_oracle(a: np.ndarray) -> SvdFactors:
    """
    SVD completa por Jacobi (solo para pruebas, O(n³)).

    Args:
        a: Matriz con min(filas, columnas) ≤ 256

    Returns:
        SvdFactors con S en orden no creciente
    """
    a = as_matrix(a)
    if min(a.shape) > ORACLE_MAX_DIM:
        raise TooLarge(f"svd_oracle admite min(m, n) ≤ {ORACLE_MAX_DIM}, recibió {a.shape}")
    if a.shape[0] < a.shape[1]:
        factors = svd_oracle(a.T)
        return SvdFactors(U=factors.V, S=factors.S, V=factors.U)

    rows, cols = a.shape
    m, v = _one_sided_jacobi(a)
    s = np.linalg.norm(m, axis=0)
    order = np.argsort(-s, kind='stable')
    s, m, v = s[order], m[:, order], v[:, order]

    cutoff = max(rows, cols) * np.finfo(np.float64).eps * s[0]
    rank = int(np.sum(s > cutoff)) if s[0] > 0 else 0
    u = np.zeros((rows, cols))
    u[:, :rank] = m[:, :rank] / s[:rank]
    if rank < cols:
        # Completa U con una base ortonormal del complemento.
        basis, _ = np.linalg.qr(np.hstack([u[:, :rank], np.eye(rows)]))
        u[:, rank:] = basis[:, rank:cols]
    return SvdFactors(U=u, S=s, V=v)


def nuclear_norm(a: np.ndarray) -> float:
    """‖A‖_* = Σ σ_i a partir del oráculo."""
    return float(np.sum(svd_oracle(a).S))
