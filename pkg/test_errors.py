"""
Pruebas de la jerarquía de errores y de sus diagnósticos JSON
"""

import re

import pytest

from src import errors
from src.errors import ModuleStepError, SpectralSphereError, ZeroMatrix

ERROR_CLASSES = [cls for cls in vars(errors).values()
                 if isinstance(cls, type) and issubclass(cls, SpectralSphereError)]


def test_codes_are_upper_snake_and_unique():
    codes = [cls.code for cls in ERROR_CLASSES]
    assert all(re.fullmatch(r'[A-Z]+(_[A-Z]+)*', code) for code in codes)
    assert len(set(codes)) == len(codes)


@pytest.mark.parametrize('cls', [c for c in ERROR_CLASSES
                                 if c not in (ModuleStepError, errors.DivergenceDetected)])
def test_to_dict_carries_message_and_code(cls):
    assert cls("fallo").to_dict() == {'error': 'fallo', 'code': cls.code}


def test_module_step_error_names_module_and_cause():
    data = ModuleStepError('layer0.mlp.up', ZeroMatrix("‖A‖_F = 0")).to_dict()
    assert data['code'] == 'MODULE_STEP_FAILED'
    assert data['module'] == 'layer0.mlp.up'
    assert data['cause'] == 'ZERO_MATRIX'
    assert data['error'].startswith('layer0.mlp.up: ')
