"""
Reparto determinista de módulos atómicos entre rangos de datos paralelos
simulados: ping-pong por tamaño, voraz y round-robin, con informe de
desequilibrio de carga.
"""

import heapq
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from src.errors import PlacementError

logger = logging.getLogger(__name__)

POLICIES = ('pingpong', 'greedy', 'roundrobin')


@dataclass(frozen=True)
class WorkItem:
    module_name: str
    cost: float

    def __post_init__(self):
        if not self.module_name:
            raise PlacementError("module_name vacío")
        if not np.isfinite(self.cost) or not self.cost > 0:
            raise PlacementError(f"{self.module_name}: el coste debe ser positivo, recibió {self.cost}")


@dataclass(frozen=True)
class PlacementReport:
    policy: str
    assignment: Dict[str, int]
    per_rank_load: List[float]
    imbalance: float
    gather_order: List[List[str]]

    def to_dict(self) -> Dict:
        return {
            'policy': self.policy,
            'assignment': dict(self.assignment),
            'per_rank_load': list(self.per_rank_load),
            'imbalance': self.imbalance,
            'gather_order': [list(names) for names in self.gather_order],
        }


def imbalance(loads: List[float]) -> float:
    """(máx − mín) / media de las cargas por rango."""
    mean = float(np.mean(loads))
    if mean == 0:
        return 0.0
    return (max(loads) - min(loads)) / mean


def _validate(items: List[WorkItem], ranks: int) -> None:
    if ranks < 1:
        raise PlacementError(f"se necesita al menos un rango, recibió {ranks}")
    if not items:
        raise PlacementError("la lista de trabajo está vacía")
    names = [item.module_name for item in items]
    if len(set(names)) != len(names):
        raise PlacementError("nombres de módulo repetidos en la carga de trabajo")


def _by_size(items: List[WorkItem]) -> List[WorkItem]:
    return sorted(items, key=lambda item: (-item.cost, item.module_name))


def _zigzag_rank(i: int, ranks: int) -> int:
    p = i % (2 * ranks)
    return p if p < ranks else 2 * ranks - 1 - p


def place_pingpong(items: List[WorkItem], ranks: int) -> PlacementReport:
    """
    Ordena por coste descendente (empates por nombre) y reparte en zigzag
    0, 1, …, R−1, R−1, …, 1, 0, continuando el patrón a mitad de ciclo.

    Args:
        items: Módulos con su coste
        ranks: Número de rangos

    Returns:
        PlacementReport
    """
    items = list(items)
    _validate(items, ranks)
    ordered = _by_size(items)
    loads = [0.0] * ranks
    assignment: Dict[str, int] = {}
    for i, item in enumerate(ordered):
        rank = _zigzag_rank(i, ranks)
        assignment[item.module_name] = rank
        loads[rank] += item.cost
    return _finish('pingpong', ordered, assignment, loads, ranks)


def place_greedy(items: List[WorkItem], ranks: int) -> PlacementReport:
    """Orden descendente; cada módulo al rango menos cargado (empates al índice menor)."""
    items = list(items)
    _validate(items, ranks)
    ordered = _by_size(items)
    heap = [(0.0, r) for r in range(ranks)]
    loads = [0.0] * ranks
    assignment: Dict[str, int] = {}
    for item in ordered:
        load, rank = heapq.heappop(heap)
        assignment[item.module_name] = rank
        loads[rank] = load + item.cost
        heapq.heappush(heap, (loads[rank], rank))
    return _finish('greedy', ordered, assignment, loads, ranks)


def place_round_robin(items: List[WorkItem], ranks: int) -> PlacementReport:
    """Orden de declaración; rango = índice mod R."""
    items = list(items)
    _validate(items, ranks)
    loads = [0.0] * ranks
    assignment: Dict[str, int] = {}
    for i, item in enumerate(items):
        rank = i % ranks
        assignment[item.module_name] = rank
        loads[rank] += item.cost
    return _finish('roundrobin', items, assignment, loads, ranks)


def _finish(policy: str, ordered: List[WorkItem], assignment: Dict[str, int],
            loads: List[float], ranks: int) -> PlacementReport:
    gather: List[List[str]] = [[] for _ in range(ranks)]
    for item in ordered:
        gather[assignment[item.module_name]].append(item.module_name)
    report = PlacementReport(policy=policy, assignment=assignment, per_rank_load=loads,
                             imbalance=imbalance(loads), gather_order=gather)
    logger.debug(f"Reparto {policy}: {len(ordered)} módulos en {ranks} rangos, "
                 f"desequilibrio {report.imbalance:.4f}")
    return report


PLACERS: Dict[str, Callable[[List[WorkItem], int], PlacementReport]] = {
    'pingpong': place_pingpong,
    'greedy': place_greedy,
    'roundrobin': place_round_robin,
}


def place(items: List[WorkItem], ranks: int, policy: str) -> PlacementReport:
    """Aplica la política indicada por nombre."""
    if policy not in PLACERS:
        raise PlacementError(f"política desconocida: {policy} (opciones: {', '.join(POLICIES)})")
    return PLACERS[policy](items, ranks)


def solver_depth_multipliers(names: Iterable[str], seed: int = 0,
                             low: float = 1.0, high: float = 1.5) -> Dict[str, float]:
    """Multiplicador de profundidad del solver, uniforme en [low, high), sembrado."""
    names = list(names)
    rng = np.random.default_rng(seed)
    return dict(zip(names, rng.uniform(low, high, size=len(names)).tolist()))


def work_items_from_shapes(shapes: Dict[str, tuple],
                           multipliers: Optional[Dict[str, float]] = None) -> List[WorkItem]:
    """
    Costes d_out·d_in por módulo, opcionalmente por el multiplicador de profundidad.

    Args:
        shapes: Nombre → (d_out, d_in), en orden de declaración
        multipliers: Nombre → multiplicador (opcional)

    Returns:
        Lista de WorkItem en el mismo orden
    """
    items = []
    for name, (d_out, d_in) in shapes.items():
        cost = float(d_out * d_in)
        if multipliers is not None:
            cost *= multipliers[name]
        items.append(WorkItem(name, cost))
    return items


def parse_workload(data) -> List[WorkItem]:
    """Convierte la lista JSON ``[{"module_name": ..., "cost": ...}]`` en WorkItem."""
    if not isinstance(data, list) or not data:
        raise PlacementError("la carga de trabajo debe ser una lista JSON no vacía")
    items = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or set(entry) != {'module_name', 'cost'}:
            raise PlacementError(f"entrada {i}: se esperan exactamente 'module_name' y 'cost'")
        if not isinstance(entry['cost'], (int, float)) or isinstance(entry['cost'], bool):
            raise PlacementError(f"entrada {i}: coste no numérico")
        items.append(WorkItem(str(entry['module_name']), float(entry['cost'])))
    return items
