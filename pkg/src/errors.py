"""
Jerarquía de errores del laboratorio de la esfera espectral.

Cada error lleva un ``code`` estable en mayúsculas con guiones bajos
(p. ej. 'ZERO_MATRIX'), que la CLI incluye en sus diagnósticos JSON.
"""

from typing import Dict, Optional


class SpectralSphereError(Exception):
    """Error base del paquete."""

    code = 'SPECTRAL_SPHERE_ERROR'

    def to_dict(self) -> Dict:
        """Diagnóstico serializable: mensaje y código."""
        return {'error': str(self), 'code': self.code}


class ZeroMatrix(SpectralSphereError):
    code = 'ZERO_MATRIX'


class TooLarge(SpectralSphereError):
    code = 'TOO_LARGE'


class NonFiniteMatrix(SpectralSphereError):
    code = 'NON_FINITE'


class ShapeMismatch(SpectralSphereError):
    code = 'SHAPE_MISMATCH'


class NonPositiveSigma(SpectralSphereError):
    code = 'NON_POSITIVE_SIGMA'


class DegenerateDraw(SpectralSphereError):
    code = 'DEGENERATE_DRAW'


class ZeroOperand(SpectralSphereError):
    """M̂ + λΘ se anula: caso alineado degenerado del solver de λ."""

    code = 'ZERO_OPERAND'


class ConfigError(SpectralSphereError):
    code = 'CONFIG_INVALID'


class PlacementError(SpectralSphereError):
    code = 'PLACEMENT_INVALID'


class DivergenceDetected(SpectralSphereError):
    code = 'DIVERGENCE_DETECTED'

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class ModuleStepError(SpectralSphereError):
    """Fallo del optimizador en un módulo atómico, con su nombre adjunto."""

    code = 'MODULE_STEP_FAILED'

    def __init__(self, module_name: str, cause: Exception):
        super().__init__(f"{module_name}: {cause}")
        self.module_name = module_name
        self.cause = cause

    def to_dict(self) -> Dict:
        data = super().to_dict()
        data['module'] = self.module_name
        data['cause'] = getattr(self.cause, 'code', type(self.cause).__name__)
        return data
