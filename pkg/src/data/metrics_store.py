"""
Almacenamiento de métricas: un archivo JSON-lines por ejecución y un
resumen CSV plano.

Sin marcas de tiempo ni texto de log: dos ejecuciones con la misma
configuración producen archivos idénticos byte a byte.
"""

import json
import os
from typing import Dict, List, Optional

import pandas as pd


class MetricsWriter:
    def __init__(self, output_dir: str, run_name: str):
        """
        Inicializa el escritor de una ejecución.

        Args:
            output_dir: Directorio de salida (se crea si no existe)
            run_name: Nombre base de los archivos
        """
        self.data_dir = output_dir
        if not os.path.exists(self.data_dir):
            os.makedirs(self.data_dir)

        self.metrics_file = os.path.join(self.data_dir, f'{run_name}.jsonl')
        self.summary_file = os.path.join(self.data_dir, f'{run_name}.csv')
        self._handle = open(self.metrics_file, 'w', encoding='utf-8', newline='\n')
        self.records: List[Dict] = []

    def write(self, record: Dict) -> None:
        """
        Añade un registro y lo vuelca al disco de inmediato.

        Args:
            record: StepMetrics serializado
        """
        self._handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + '\n')
        self._handle.flush()
        self.records.append(record)

    def close(self) -> Optional[str]:
        """Cierra el JSONL y escribe el resumen CSV; devuelve su ruta."""
        if self._handle.closed:
            return None
        self._handle.close()
        return export_csv(self.records, self.summary_file)

    def __enter__(self) -> 'MetricsWriter':
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def load_metrics(path: str) -> List[Dict]:
    """Lee un archivo JSON-lines de métricas."""
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def export_csv(records: List[Dict], filepath: str) -> str:
    """
    Exporta registros anidados a un CSV plano (columnas ``a.b.c``).

    Args:
        records: Registros
        filepath: Ruta del CSV

    Returns:
        Ruta del archivo generado
    """
    df = pd.json_normalize(records) if records else pd.DataFrame()
    df.to_csv(filepath, index=False, encoding='utf-8', lineterminator='\n')
    return filepath
