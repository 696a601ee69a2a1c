"""
Experimentos a escala de escritorio: bucle de entrenamiento con métricas por
paso, barrido de anchura (transferencia μP de la tasa de aprendizaje) y
barrido del radio espectral.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.data.data_loader import CharLM, TaskConfig, build_task
from src.data.metrics_store import MetricsWriter, export_csv
from src.errors import (ConfigError, DivergenceDetected, ModuleStepError, NonFiniteMatrix,
                        ShapeMismatch, SpectralSphereError)
from src.models.granularity import ArchConfig, ParamRole, Registry, init_registry
from src.models.model import ToyModel
from src.models.optimizers import OptimizerKind, SsoConfig
from src.utils.matlin import as_matrix, power_iteration

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6
FINAL_LOSS_FRACTION = 0.1
STEADY_STATE_FRACTION = 0.2
FFN_PROBE = {'linear': 'output', 'mlp': 'ffn_preact', 'transformer': 'ffn_hidden'}


@dataclass(frozen=True)
class ScheduleConfig:
    """Calentamiento lineal + decaimiento coseno hasta ``min_ratio`` del pico; constante por defecto."""

    kind: str = 'constant'
    warmup_steps: int = 0
    min_ratio: float = 0.1

    def __post_init__(self):
        if self.kind not in ('constant', 'cosine'):
            raise ConfigError(f"calendario desconocido: {self.kind}")
        if self.warmup_steps < 0 or not 0 <= self.min_ratio <= 1:
            raise ConfigError("warmup_steps ≥ 0 y min_ratio ∈ [0, 1] requeridos")

    def eta_at(self, eta: float, step: int, total_steps: int) -> float:
        """Tasa de aprendizaje del paso ``step`` (0-indexado)."""
        if self.warmup_steps and step < self.warmup_steps:
            return eta * (step + 1) / self.warmup_steps
        if self.kind == 'constant':
            return eta
        span = max(1, total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
        return eta * (self.min_ratio + (1.0 - self.min_ratio) * cosine)


@dataclass
class StepMetrics:
    step: int
    loss: float
    eta: float
    per_module: Dict[str, Dict] = field(default_factory=dict)
    activations: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {'step': self.step, 'loss': self.loss, 'eta': self.eta,
                'per_module': self.per_module, 'activations': self.activations}


@dataclass
class TrainingResult:
    metrics: List[StepMetrics]
    diverged: bool = False
    divergence_step: Optional[int] = None
    error: Optional[Dict] = None

    @property
    def final_loss(self) -> float:
        """Media de la pérdida en el último 10 % de los pasos registrados."""
        if not self.metrics:
            return float('nan')
        tail = max(1, int(round(len(self.metrics) * FINAL_LOSS_FRACTION)))
        return float(np.mean([m.loss for m in self.metrics[-tail:]]))

    def series(self, probe: str, stat: str = 'rms') -> List[float]:
        return [m.activations[probe][stat] for m in self.metrics if probe in m.activations]


def activation_rms(x) -> float:
    """
    ‖x‖_rms = ‖x‖₂ / √d; para un lote, sobre todas sus entradas.

    Args:
        x: Vector o array de activaciones no vacío

    Returns:
        RMS no negativo
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ShapeMismatch("activation_rms de un vector vacío")
    return float(np.linalg.norm(x) / math.sqrt(x.size))


def rms_to_rms_gain(weight: np.ndarray) -> float:
    """Norma de operador RMS→RMS: ‖W‖₂·√(d_in/d_out)."""
    weight = as_matrix(weight, 'W')
    d_out, d_in = weight.shape
    if not np.any(weight):
        return 0.0
    sigma = power_iteration(weight, max_iters=2000, tol=1e-12).sigma
    return sigma * math.sqrt(d_in / d_out)


def resolve_arch(task, arch: ArchConfig) -> ArchConfig:
    """Ajusta el vocabulario del transformer al de la tarea CharLM."""
    if isinstance(task, CharLM):
        if arch.kind != 'transformer':
            raise ConfigError("la tarea char_lm necesita la arquitectura transformer")
        return replace(arch, vocab_size=task.vocab_size)
    if arch.kind == 'transformer':
        raise ConfigError("la regresión sintética necesita arquitectura linear o mlp")
    return arch


def _probe_stats(probes: Dict[str, np.ndarray]) -> Dict[str, Dict[str, float]]:
    return {name: {'rms': activation_rms(a), 'absmax': float(np.max(np.abs(a)))}
            for name, a in probes.items()}


def run_training(task, registry: Registry, optimizer_kind: OptimizerKind, cfg: SsoConfig,
                 steps: Optional[int] = None, schedule: Optional[ScheduleConfig] = None,
                 writer: Optional[MetricsWriter] = None) -> TrainingResult:
    """
    Entrena el modelo de juguete del registro sobre la tarea.

    La serie de métricas es función pura de (configuración, semilla). Una
    pérdida no finita o mayor que 1e6 detiene la ejecución y se registra como
    divergencia; un fallo de un módulo también la detiene.

    Args:
        task: SyntheticRegression o CharLM
        registry: Registro inicializado (se modifica)
        optimizer_kind: Optimizador de los módulos ocultos
        cfg: Hiperparámetros
        steps: Número de pasos; por defecto los de la tarea
        schedule: Calendario de la tasa de aprendizaje
        writer: Escritor de métricas (opcional), vaciado en cada paso

    Returns:
        TrainingResult
    """
    optimizer_kind = OptimizerKind(optimizer_kind)
    hidden = [m for m in registry.modules.values() if m.role is ParamRole.HIDDEN]
    if any(m.optimizer_kind is not optimizer_kind for m in hidden):
        raise ConfigError(f"el registro no se construyó para {optimizer_kind.value}")
    schedule = schedule or ScheduleConfig()
    steps = task.cfg.steps if steps is None else steps
    model = ToyModel(registry.arch)
    norm_cache: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    result = TrainingResult(metrics=[])

    for step in range(steps):
        forward = model.loss_and_grads(registry.fused_weights(), task.batch(step))
        if not math.isfinite(forward.loss) or forward.loss > DIVERGENCE_LOSS:
            logger.error(f"❌ DivergenceDetected en el paso {step}: pérdida {forward.loss}")
            result.diverged, result.divergence_step = True, step
            break

        eta = schedule.eta_at(cfg.eta, step, steps)
        try:
            reports = registry.apply_gradients(forward.grads, cfg, eta=eta)
        except ModuleStepError as e:
            logger.error(f"❌ Fallo del optimizador en el paso {step}: {e}")
            if isinstance(e.cause, NonFiniteMatrix):
                result.diverged, result.divergence_step = True, step
            else:
                result.error = e.to_dict()
            break

        per_module = {}
        for m in hidden:
            sigma = 0.0
            if np.any(m.weight):
                triplet = power_iteration(m.weight, warm_start=norm_cache.get(m.name),
                                          max_iters=500, tol=1e-9)
                norm_cache[m.name] = (triplet.u, triplet.v)
                sigma = triplet.sigma
            r = reports[m.name]
            per_module[m.name] = {
                'spectral_norm': sigma,
                'update_spectral_norm': r.update_spectral_norm,
                'lambda_star': r.lambda_star,
                'solver_iters': r.solver_iters,
                'tangency': r.tangency,
                'sigma_pre_retraction': r.sigma_pre if m.spectral else sigma,
                'degenerate': r.degenerate,
            }
        record = StepMetrics(step=step, loss=forward.loss, eta=eta, per_module=per_module,
                             activations=_probe_stats(forward.probes))
        result.metrics.append(record)
        if writer is not None:
            writer.write(record.to_dict())

    if not result.diverged and result.error is None:
        logger.info(f"✅ Entrenamiento terminado: {len(result.metrics)} pasos, "
                    f"pérdida final {result.final_loss:.6g}")
    return result


def train_from_config(task_cfg: TaskConfig, arch: ArchConfig, optimizer_kind: OptimizerKind,
                      cfg: SsoConfig, schedule: Optional[ScheduleConfig] = None, seed: int = 0,
                      output_dir: Optional[str] = None, run_name: str = 'run') -> TrainingResult:
    """Construye tarea y registro y entrena; escribe JSONL y CSV si hay ``output_dir``."""
    task = build_task(task_cfg, d_in=arch.d_in, d_out=arch.d_out, seq_len=arch.seq_len)
    arch = resolve_arch(task, arch)
    registry = init_registry(arch, optimizer_kind, cfg, seed=seed)
    if output_dir is None:
        return run_training(task, registry, optimizer_kind, cfg, schedule=schedule)
    with MetricsWriter(output_dir, run_name) as writer:
        return run_training(task, registry, optimizer_kind, cfg, schedule=schedule, writer=writer)


def arch_for_width(arch: ArchConfig, width: int) -> ArchConfig:
    """
    Arquitectura con la anchura oculta indicada: ``hidden`` en el MLP;
    d_model, cabezas (head_dim fijo) y FFN proporcional en el transformer.
    """
    if arch.kind == 'mlp':
        return replace(arch, hidden=width)
    if arch.kind == 'transformer':
        if width % arch.head_dim:
            raise ConfigError(f"la anchura {width} no es múltiplo de head_dim = {arch.head_dim}")
        ffn = max(1, width * arch.ffn_dim // arch.d_model)
        return replace(arch, d_model=width, num_heads=width // arch.head_dim, ffn_dim=ffn)
    raise ConfigError("el barrido de anchura necesita arquitectura mlp o transformer")


@dataclass
class SweepCell:
    width: int
    eta: float
    final_loss: float = float('nan')
    diverged: bool = False
    divergence_step: Optional[int] = None
    error: Optional[str] = None
    init_ffn_rms: float = float('nan')
    rms_series: List[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.diverged and self.error is None and math.isfinite(self.final_loss)

    def to_row(self) -> Dict:
        series = self.rms_series or [float('nan')]
        return {
            'width': self.width, 'eta': self.eta, 'final_loss': self.final_loss,
            'diverged': self.diverged, 'divergence_step': self.divergence_step,
            'error': self.error, 'init_ffn_rms': self.init_ffn_rms,
            'ffn_rms_min': float(np.min(series)), 'ffn_rms_max': float(np.max(series)),
            'ffn_rms_final': float(series[-1]),
        }


@dataclass
class SweepReport:
    optimizer_kind: str
    cells: List[SweepCell]

    def best_eta(self) -> Dict[int, Optional[float]]:
        """η con menor pérdida final por anchura (None si ninguna celda terminó)."""
        best: Dict[int, Optional[float]] = {}
        for width in sorted({c.width for c in self.cells}):
            ok = [c for c in self.cells if c.width == width and c.ok]
            best[width] = min(ok, key=lambda c: (c.final_loss, c.eta)).eta if ok else None
        return best

    def to_rows(self) -> List[Dict]:
        return [c.to_row() for c in self.cells]

    def export_csv(self, filepath: str) -> str:
        return export_csv(self.to_rows(), filepath)


def _run_cell(task_cfg: TaskConfig, arch: ArchConfig, optimizer_kind: OptimizerKind,
              cfg: SsoConfig, schedule: Optional[ScheduleConfig], seed: int,
              width: int, eta: float, output_dir: Optional[str]) -> SweepCell:
    cell = SweepCell(width=width, eta=eta)
    try:
        cell_arch = arch_for_width(arch, width)
        cell_cfg = replace(cfg, eta=eta)
        task = build_task(task_cfg, d_in=cell_arch.d_in, d_out=cell_arch.d_out,
                          seq_len=cell_arch.seq_len)
        cell_arch = resolve_arch(task, cell_arch)
        registry = init_registry(cell_arch, optimizer_kind, cell_cfg, seed=seed)
        probe = FFN_PROBE[cell_arch.kind]
        init = ToyModel(cell_arch).probe(registry.fused_weights(), task.batch(0))
        cell.init_ffn_rms = activation_rms(init.probes[probe])

        if output_dir is None:
            result = run_training(task, registry, optimizer_kind, cell_cfg, schedule=schedule)
        else:
            name = f"{OptimizerKind(optimizer_kind).value}_w{width}_eta{eta:g}"
            with MetricsWriter(output_dir, name) as writer:
                result = run_training(task, registry, optimizer_kind, cell_cfg,
                                      schedule=schedule, writer=writer)
        cell.final_loss = result.final_loss
        cell.diverged = result.diverged
        cell.divergence_step = result.divergence_step
        cell.rms_series = result.series(probe)
        if result.error is not None:
            cell.error = result.error['code']
    except SpectralSphereError as e:
        logger.warning(f"⚠️ Celda (anchura {width}, η {eta:g}) fallida: {e}")
        cell.error = e.code
    return cell


def width_sweep(widths: List[int], optimizer_kind: OptimizerKind, eta_grid: List[float],
                task_cfg: TaskConfig, arch: ArchConfig, cfg: SsoConfig,
                schedule: Optional[ScheduleConfig] = None, seed: int = 0,
                max_workers: int = 1, output_dir: Optional[str] = None) -> SweepReport:
    """
    Rejilla (anchura × η) con las mismas semillas en cada celda.

    Los fallos de una celda se registran sin abortar la rejilla.

    Args:
        widths: Anchuras en orden ascendente
        optimizer_kind: Optimizador de los módulos ocultos
        eta_grid: Tasas de aprendizaje
        task_cfg: Tarea
        arch: Arquitectura base (la anchura se sustituye por celda)
        cfg: Hiperparámetros (eta se sustituye por celda)
        schedule: Calendario de la tasa de aprendizaje
        seed: Semilla común
        max_workers: Celdas en paralelo (hilos)
        output_dir: Directorio de métricas por celda (opcional)

    Returns:
        SweepReport
    """
    if not widths or not eta_grid:
        raise ConfigError("widths y eta_grid no pueden estar vacíos")
    if list(widths) != sorted(set(widths)):
        raise ConfigError(f"las anchuras deben ser ascendentes y únicas: {widths}")
    jobs = [(w, eta) for w in widths for eta in eta_grid]
    args = (task_cfg, arch, optimizer_kind, cfg, schedule, seed)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            cells = list(pool.map(lambda job: _run_cell(*args, *job, output_dir), jobs))
    else:
        cells = [_run_cell(*args, w, eta, output_dir) for w, eta in jobs]
    report = SweepReport(optimizer_kind=OptimizerKind(optimizer_kind).value, cells=cells)
    logger.info(f"✅ Barrido terminado: {sum(c.ok for c in cells)}/{len(cells)} celdas; "
                f"mejor η por anchura {report.best_eta()}")
    return report


@dataclass
class RadiusSweepReport:
    cs: List[float]
    steady_rms: List[float]
    steady_absmax: List[float]
    exponent: float

    def to_rows(self) -> List[Dict]:
        return [{'c': c, 'steady_ffn_rms': r, 'steady_ffn_absmax': a}
                for c, r, a in zip(self.cs, self.steady_rms, self.steady_absmax)]


def radius_sweep(cs: List[float], task_cfg: TaskConfig, arch: ArchConfig, cfg: SsoConfig,
                 optimizer_kind: OptimizerKind = OptimizerKind.SSO,
                 schedule: Optional[ScheduleConfig] = None, seed: int = 0) -> RadiusSweepReport:
    """
    Entrena con cada escala de radio c y mide la RMS y AbsMax estacionarias
    (media del último 20 % de pasos) de la sonda FFN; ajusta el exponente de
    log RMS frente a log c.

    Returns:
        RadiusSweepReport
    """
    if not cs or any(not c > 0 for c in cs):
        raise ConfigError("las escalas de radio deben ser positivas")
    steady_rms, steady_absmax = [], []
    for c in cs:
        c_cfg = replace(cfg, radius_c=c)
        result = train_from_config(task_cfg, arch, optimizer_kind, c_cfg, schedule=schedule,
                                   seed=seed)
        if result.diverged or result.error is not None or not result.metrics:
            raise DivergenceDetected(f"la ejecución con c = {c} no terminó",
                                     step=result.divergence_step)
        probe = FFN_PROBE[arch.kind]
        tail = max(1, int(round(len(result.metrics) * STEADY_STATE_FRACTION)))
        steady_rms.append(float(np.mean(result.series(probe, 'rms')[-tail:])))
        steady_absmax.append(float(np.mean(result.series(probe, 'absmax')[-tail:])))
    exponent = float('nan')
    if len(cs) > 1:
        exponent = float(np.polyfit(np.log(cs), np.log(steady_rms), 1)[0])
    logger.info(f"📈 Exponente ajustado RMS ∝ c^{exponent:.3f}")
    return RadiusSweepReport(cs=list(cs), steady_rms=steady_rms,
                             steady_absmax=steady_absmax, exponent=exponent)


def sweep_output_path(output_dir: str, optimizer_kind: OptimizerKind) -> str:
    if not os.path.exists(output_dir):
        os.makedirs(output_dir)
    return os.path.join(output_dir, f"sweep_{OptimizerKind(optimizer_kind).value}.csv")
