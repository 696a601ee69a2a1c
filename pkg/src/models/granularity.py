"""
Registro de parámetros: declara los pesos del modelo de juguete, divide los
tensores fusionados (QKV por cabeza, gate/up por separado) en módulos
atómicos y asigna a cada uno radio, escalador y optimizador.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.errors import ConfigError, ModuleStepError, ShapeMismatch, SpectralSphereError
from src.models.optimizers import (ModuleReport, OptimizerKind, OptimizerState, SsoConfig,
                                   optimizer_step)
from src.utils.spectral_geom import (DEFAULT_INIT_STD, RadiusSpec, ScalerKind,
                                     gaussian_draw, spectral_init_with_triplet)

logger = logging.getLogger(__name__)

REGISTRY_FORMAT = 1


class SplitKind(str, Enum):
    QKV_PER_HEAD = 'qkv_per_head'
    GATE_UP_SEPARATE = 'gate_up_separate'
    NO_SPLIT = 'no_split'


class ParamRole(str, Enum):
    HIDDEN = 'hidden'
    EMBEDDING = 'embedding'
    HEAD = 'head'
    VECTOR = 'vector'


@dataclass(frozen=True)
class SplitRule:
    kind: SplitKind = SplitKind.NO_SPLIT
    num_heads: int = 0
    head_dim: int = 0

    @classmethod
    def qkv_per_head(cls, num_heads: int, head_dim: int) -> 'SplitRule':
        return cls(SplitKind.QKV_PER_HEAD, num_heads, head_dim)

    @classmethod
    def gate_up_separate(cls) -> 'SplitRule':
        return cls(SplitKind.GATE_UP_SEPARATE)

    @classmethod
    def no_split(cls) -> 'SplitRule':
        return cls(SplitKind.NO_SPLIT)


@dataclass(frozen=True)
class ModuleSlice:
    """Descriptor de un bloque de filas [row_start, row_stop) de un tensor fusionado."""

    name: str
    row_start: int
    row_stop: int
    d_in: int

    @property
    def d_out(self) -> int:
        return self.row_stop - self.row_start


@dataclass(frozen=True)
class ArchConfig:
    """Descripción de la arquitectura de juguete."""

    kind: str = 'mlp'
    d_in: int = 32
    d_out: int = 8
    hidden: int = 64
    vocab_size: int = 0
    d_model: int = 64
    num_heads: int = 4
    head_dim: int = 16
    ffn_dim: int = 128
    seq_len: int = 32
    num_layers: int = 1
    split_fused: bool = True

    def __post_init__(self):
        if self.kind not in ('linear', 'mlp', 'transformer'):
            raise ConfigError(f"arquitectura desconocida: {self.kind}")
        dims = [self.d_in, self.d_out, self.hidden, self.d_model, self.num_heads,
                self.head_dim, self.ffn_dim, self.seq_len, self.num_layers]
        if min(dims) < 1:
            raise ConfigError("todas las dimensiones de la arquitectura deben ser ≥ 1")
        if self.kind == 'transformer' and self.num_heads * self.head_dim != self.d_model:
            raise ConfigError(f"num_heads·head_dim = {self.num_heads * self.head_dim} "
                              f"distinto de d_model = {self.d_model}")


@dataclass(frozen=True)
class ParamSpec:
    """Tensor declarado del modelo (posiblemente fusionado)."""

    name: str
    shape: Tuple[int, int]
    role: ParamRole
    rule: SplitRule = field(default_factory=SplitRule.no_split)


@dataclass
class AtomicModule:
    name: str
    d_out: int
    d_in: int
    weight: np.ndarray
    radius: Optional[RadiusSpec]
    scaler: ScalerKind
    optimizer_kind: OptimizerKind
    state: OptimizerState
    role: ParamRole = ParamRole.HIDDEN
    weight_decay: Optional[float] = None

    @property
    def spectral(self) -> bool:
        return self.radius is not None


def split_fused(fused_name: str, shape: Tuple[int, int], rule: SplitRule) -> List[ModuleSlice]:
    """
    Divide un tensor fusionado apilado por filas en módulos atómicos.

    Layouts: [Q-cabezas; K-cabezas; V-cabezas] y [gate; up].

    Args:
        fused_name: Nombre del tensor fusionado (``layer0.attn.qkv``)
        shape: (filas, columnas) del tensor
        rule: Regla de división

    Returns:
        Bloques contiguos que, concatenados en orden, reconstruyen el tensor
    """
    rows, cols = shape
    kind = SplitKind(rule.kind)
    if kind is SplitKind.NO_SPLIT:
        return [ModuleSlice(fused_name, 0, rows, cols)]

    prefix = fused_name.rsplit('.', 1)[0]
    if kind is SplitKind.GATE_UP_SEPARATE:
        if rows % 2:
            raise ShapeMismatch(f"{fused_name}: {rows} filas no se dividen en gate/up")
        half = rows // 2
        return [ModuleSlice(f"{prefix}.gate", 0, half, cols),
                ModuleSlice(f"{prefix}.up", half, rows, cols)]

    if rule.num_heads < 1 or rule.head_dim < 1 or rows != 3 * rule.num_heads * rule.head_dim:
        raise ShapeMismatch(f"{fused_name}: {rows} filas ≠ 3·{rule.num_heads}·{rule.head_dim}")
    slices = []
    for p, proj in enumerate('qkv'):
        for h in range(rule.num_heads):
            start = (p * rule.num_heads + h) * rule.head_dim
            slices.append(ModuleSlice(f"{prefix}.{proj}.head{h}", start,
                                      start + rule.head_dim, cols))
    return slices


def split_matrix(fused: np.ndarray, slices: List[ModuleSlice]) -> List[np.ndarray]:
    """Vistas de filas de ``fused`` para cada bloque."""
    return [fused[s.row_start:s.row_stop] for s in slices]


def declare_parameters(arch: ArchConfig) -> List[ParamSpec]:
    """Lista de tensores del modelo en orden de declaración."""
    if arch.kind == 'linear':
        return [ParamSpec('probe.weight', (arch.d_out, arch.d_in), ParamRole.HIDDEN)]
    if arch.kind == 'mlp':
        return [ParamSpec('mlp.fc1', (arch.hidden, arch.d_in), ParamRole.HIDDEN),
                ParamSpec('mlp.fc2', (arch.d_out, arch.hidden), ParamRole.HIDDEN)]

    qkv_rule = (SplitRule.qkv_per_head(arch.num_heads, arch.head_dim)
                if arch.split_fused else SplitRule.no_split())
    gate_rule = SplitRule.gate_up_separate() if arch.split_fused else SplitRule.no_split()
    d = arch.d_model
    params = [ParamSpec('embed', (arch.vocab_size, d), ParamRole.EMBEDDING)]
    for i in range(arch.num_layers):
        params += [
            ParamSpec(f'layer{i}.attn_norm', (1, d), ParamRole.VECTOR),
            ParamSpec(f'layer{i}.attn.qkv', (3 * d, d), ParamRole.HIDDEN, qkv_rule),
            ParamSpec(f'layer{i}.attn.o', (d, d), ParamRole.HIDDEN),
            ParamSpec(f'layer{i}.mlp_norm', (1, d), ParamRole.VECTOR),
            ParamSpec(f'layer{i}.mlp.gate_up', (2 * arch.ffn_dim, d), ParamRole.HIDDEN, gate_rule),
            ParamSpec(f'layer{i}.mlp.down', (d, arch.ffn_dim), ParamRole.HIDDEN),
        ]
    params += [ParamSpec('final_norm', (1, d), ParamRole.VECTOR),
               ParamSpec('head', (arch.vocab_size, d), ParamRole.EMBEDDING)]
    if arch.vocab_size < 1:
        raise ConfigError("el transformer necesita vocab_size ≥ 1")
    return params


class Registry:
    """
    Conjunto ordenado de módulos atómicos más la correspondencia con los
    tensores fusionados que ve el modelo.
    """

    def __init__(self, arch: ArchConfig, params: List[ParamSpec],
                 modules: Dict[str, AtomicModule], layout: Dict[str, List[ModuleSlice]]):
        self.arch = arch
        self.params = params
        self.modules = modules
        self.layout = layout

    def __len__(self) -> int:
        return len(self.modules)

    def __getitem__(self, name: str) -> AtomicModule:
        return self.modules[name]

    def names(self) -> List[str]:
        return list(self.modules)

    def spectral_modules(self) -> List[AtomicModule]:
        return [m for m in self.modules.values() if m.spectral]

    def fused_weights(self) -> Dict[str, np.ndarray]:
        """Tensores completos del modelo (bloques atómicos reapilados por filas)."""
        return {p.name: np.vstack([self.modules[s.name].weight for s in self.layout[p.name]])
                for p in self.params}

    def split_gradients(self, grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Reparte los gradientes de los tensores fusionados entre sus módulos."""
        out = {}
        for p in self.params:
            grad = np.asarray(grads[p.name], dtype=np.float64).reshape(p.shape)
            for s, block in zip(self.layout[p.name], split_matrix(grad, self.layout[p.name])):
                out[s.name] = block
        return out

    def apply_gradients(self, grads: Dict[str, np.ndarray], cfg: SsoConfig,
                        eta: Optional[float] = None) -> Dict[str, ModuleReport]:
        """
        Un paso del optimizador en cada módulo, de forma independiente.

        Args:
            grads: Gradientes por tensor fusionado
            cfg: Hiperparámetros
            eta: Tasa de aprendizaje del paso (programada); por defecto ``cfg.eta``

        Returns:
            ModuleReport por módulo atómico
        """
        eta = cfg.eta if eta is None else eta
        per_module = self.split_gradients(grads)
        reports = {}
        for name, module in self.modules.items():
            module_eta = eta
            # adam_eta solo para embeddings, cabeza y ganancias 1-D
            if module.role is not ParamRole.HIDDEN and cfg.adam_eta is not None:
                module_eta = cfg.adam_eta * eta / cfg.eta
            try:
                module.weight, reports[name] = optimizer_step(
                    module.optimizer_kind, module.weight, per_module[name], module.state,
                    cfg, radius=module.radius, eta=module_eta,
                    weight_decay=module.weight_decay)
            except SpectralSphereError as e:
                raise ModuleStepError(name, e) from e
        return reports


def _module_optimizer(role: ParamRole, optimizer_kind: OptimizerKind) -> OptimizerKind:
    if role is ParamRole.HIDDEN:
        return optimizer_kind
    return OptimizerKind.ADAMW


def init_registry(arch: ArchConfig, optimizer_kind: OptimizerKind, cfg: SsoConfig,
                  seed: int = 0, sigma_gauss: float = DEFAULT_INIT_STD,
                  embedding_weight_decay: float = 0.1) -> Registry:
    """
    Construye el registro con inicialización espectral por módulo.

    Los módulos ocultos 2-D usan el optimizador pedido; con SSO/MuonSphere
    llevan radio R = c·√(d_out/d_in) y su caché de vectores singulares
    sembrada. Embedding y cabeza son AdamW con decaimiento
    ``embedding_weight_decay``; los vectores 1-D, AdamW sin decaimiento.

    Args:
        arch: Arquitectura
        optimizer_kind: Optimizador de los módulos ocultos
        cfg: Hiperparámetros (radius_c, scaler)
        seed: Semilla base; el módulo i usa seed + i
        sigma_gauss: Desviación previa a la proyección
        embedding_weight_decay: Decaimiento de embedding y cabeza

    Returns:
        Registry listo para entrenar
    """
    optimizer_kind = OptimizerKind(optimizer_kind)
    params = declare_parameters(arch)
    modules: Dict[str, AtomicModule] = {}
    layout: Dict[str, List[ModuleSlice]] = {}
    index = 0
    for p in params:
        slices = split_fused(p.name, p.shape, p.rule)
        layout[p.name] = slices
        kind = _module_optimizer(p.role, optimizer_kind)
        for s in slices:
            if s.name in modules:
                raise ConfigError(f"nombre de módulo duplicado: {s.name}")
            state = OptimizerState.zeros((s.d_out, s.d_in))
            radius = None
            weight_decay = None
            if p.role is ParamRole.VECTOR:
                weight = np.ones((s.d_out, s.d_in))
                weight_decay = 0.0
            elif p.role is ParamRole.EMBEDDING:
                weight = gaussian_draw(s.d_out, s.d_in, sigma_gauss, seed + index)
                weight_decay = embedding_weight_decay
            else:
                spec = RadiusSpec(cfg.radius_c, s.d_out, s.d_in)
                weight, triplet = spectral_init_with_triplet(s.d_out, s.d_in, spec,
                                                             sigma_gauss, seed + index)
                if kind in (OptimizerKind.SSO, OptimizerKind.MUON_SPHERE):
                    radius = spec
                    state.store_triplet(triplet)
            modules[s.name] = AtomicModule(
                name=s.name, d_out=s.d_out, d_in=s.d_in, weight=weight, radius=radius,
                scaler=cfg.scaler, optimizer_kind=kind, state=state, role=p.role,
                weight_decay=weight_decay)
            index += 1
    registry = Registry(arch, params, modules, layout)
    logger.info(f"✅ Registro construido: {len(registry)} módulos, "
                f"{len(registry.spectral_modules())} espectrales ({optimizer_kind.value})")
    return registry


def _arrays_for(prefix: str, module: AtomicModule) -> Dict[str, np.ndarray]:
    arrays = {f'{prefix}/weight': module.weight, f'{prefix}/momentum': module.state.momentum}
    for key in ('cached_u', 'cached_v', 'second_moment'):
        value = getattr(module.state, key)
        if value is not None:
            arrays[f'{prefix}/{key}'] = value
    return arrays


def save_registry(registry: Registry, path: str) -> None:
    """
    Guarda pesos, estado y metadatos en un único archivo ``.npz``.

    Args:
        registry: Registro a guardar
        path: Ruta de destino
    """
    meta = {'format': REGISTRY_FORMAT, 'arch': registry.arch.__dict__, 'modules': []}
    arrays = {}
    for i, (name, m) in enumerate(registry.modules.items()):
        prefix = f'm{i}'
        arrays.update(_arrays_for(prefix, m))
        meta['modules'].append({
            'name': name, 'prefix': prefix, 'role': m.role.value,
            'optimizer_kind': m.optimizer_kind.value, 'scaler': m.scaler.value,
            'radius_c': m.radius.c if m.radius else None,
            'weight_decay': m.weight_decay, 'step_count': m.state.step_count,
        })
    arrays['__meta__'] = np.frombuffer(json.dumps(meta).encode('utf-8'), dtype=np.uint8)
    with open(path, 'wb') as f:
        np.savez(f, **arrays)


def load_registry(path: str) -> Registry:
    """Reconstruye un registro guardado con ``save_registry``."""
    with np.load(path) as archive:
        meta = json.loads(archive['__meta__'].tobytes().decode('utf-8'))
        if meta.get('format') != REGISTRY_FORMAT:
            raise ConfigError(f"formato de registro no soportado: {meta.get('format')}")
        arch = ArchConfig(**meta['arch'])
        params = declare_parameters(arch)
        layout = {p.name: split_fused(p.name, p.shape, p.rule) for p in params}
        modules = {}
        for entry in meta['modules']:
            prefix = entry['prefix']
            weight = archive[f'{prefix}/weight'].copy()
            d_out, d_in = weight.shape
            state = OptimizerState(momentum=archive[f'{prefix}/momentum'].copy(),
                                   step_count=entry['step_count'])
            for key in ('cached_u', 'cached_v', 'second_moment'):
                if f'{prefix}/{key}' in archive.files:
                    setattr(state, key, archive[f'{prefix}/{key}'].copy())
            radius = (RadiusSpec(entry['radius_c'], d_out, d_in)
                      if entry['radius_c'] is not None else None)
            modules[entry['name']] = AtomicModule(
                name=entry['name'], d_out=d_out, d_in=d_in, weight=weight, radius=radius,
                scaler=ScalerKind(entry['scaler']),
                optimizer_kind=OptimizerKind(entry['optimizer_kind']), state=state,
                role=ParamRole(entry['role']), weight_decay=entry['weight_decay'])
    return Registry(arch, params, modules, layout)
