"""
Configuración de experimentos: un documento JSON autodescriptivo que se
convierte de forma estricta en dataclasses anidadas.

Las claves desconocidas son fatales (se informa la ruta con puntos) y los
errores de sintaxis JSON indican línea y columna.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

from src.data.data_loader import TaskConfig
from src.errors import ConfigError, SpectralSphereError
from src.experiments.harness import ScheduleConfig
from src.models.granularity import ArchConfig
from src.models.optimizers import OptimizerKind, SsoConfig


@dataclass(frozen=True)
class SweepConfig:
    widths: List[int] = field(default_factory=lambda: [64, 128, 256])
    eta_grid: List[float] = field(default_factory=lambda: [0.005, 0.01, 0.02, 0.05, 0.1])
    max_workers: int = 1
    # Escalas de radio para el barrido de c (vacío = no se ejecuta)
    radius_cs: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.max_workers < 1:
            raise ConfigError("max_workers debe ser ≥ 1")
        if any(w < 1 for w in self.widths) or any(not e > 0 for e in self.eta_grid):
            raise ConfigError("anchuras ≥ 1 y tasas de aprendizaje positivas requeridas")
        if any(not c > 0 for c in self.radius_cs):
            raise ConfigError(f"las escalas de radio deben ser positivas: {self.radius_cs}")


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    optimizer: OptimizerKind = OptimizerKind.SSO
    sso: SsoConfig = field(default_factory=SsoConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    output_dir: str = 'outputs'
    run_name: str = 'run'


def _type_name(tp) -> str:
    return getattr(tp, '__name__', str(tp))


def _convert(value: Any, tp, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], path)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: se esperaba una lista")
        (item_tp,) = get_args(tp)
        return [_convert(v, item_tp, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError:
            options = ', '.join(e.value for e in tp)
            raise ConfigError(f"{path}: valor '{value}' no válido (opciones: {options})")
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: se esperaba un booleano")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: se esperaba un entero")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: se esperaba un número")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: se esperaba una cadena")
        return value
    raise ConfigError(f"{path}: tipo no soportado {_type_name(tp)}")


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<raíz>'}: se esperaba un objeto JSON")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = ', '.join(f"{path}.{k}" if path else k for k in unknown)
        raise ConfigError(f"claves desconocidas: {where}")
    kwargs = {k: _convert(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except SpectralSphereError as e:
        raise ConfigError(f"{path or '<raíz>'}: {e}") from e


def parse_config(text: str) -> ExperimentConfig:
    """
    Convierte el texto JSON en un ExperimentConfig.

    Args:
        text: Documento JSON

    Returns:
        ExperimentConfig validado

    Raises:
        ConfigError: con línea/columna para errores de sintaxis o la ruta de la clave
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido en la línea {e.lineno}, columna {e.colno}: {e.msg}")
    return _build(ExperimentConfig, data, '')


def load_config(path: str) -> ExperimentConfig:
    """Lee y valida un archivo de configuración."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"no se pudo leer la configuración {path}: {e}")
    return parse_config(text)


def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> Dict:
    return _plain(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    """JSON canónico; ``parse_config(dump_config(c)) == c``."""
    return json.dumps(config_to_dict(cfg), ensure_ascii=False, indent=2)
