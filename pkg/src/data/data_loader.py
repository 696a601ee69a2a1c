"""
Tareas de juguete: regresión sintética con un MLP objetivo fijo y modelo de
lenguaje por caracteres sobre un corpus pequeño de dominio público.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.errors import ConfigError
from src.utils.preprocessing import CharTokenizer, TextPreprocessor
from src.utils.spectral_geom import RadiusSpec, spectral_init

logger = logging.getLogger(__name__)

DEFAULT_CORPUS = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(
    os.path.abspath(__file__)))), 'data', 'corpus.txt')


@dataclass(frozen=True)
class TaskConfig:
    kind: str = 'synthetic_regression'
    batch_size: int = 64
    steps: int = 200
    seed: int = 0
    target_seed: int = 1234
    target_hidden: int = 32
    noise: float = 0.05
    corpus_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ('synthetic_regression', 'char_lm'):
            raise ConfigError(f"tarea desconocida: {self.kind}")
        if self.batch_size < 1 or self.steps < 1 or self.target_hidden < 1:
            raise ConfigError("batch_size, steps y target_hidden deben ser ≥ 1")
        if self.noise < 0:
            raise ConfigError(f"el ruido no puede ser negativo, recibió {self.noise}")


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray


class SyntheticRegression:
    """
    y = W₂·relu(W₁·x) + ruido, con x ~ N(0, I) y un maestro en la esfera (c = 1).
    Cada paso genera su lote con la semilla (seed, step).
    """

    def __init__(self, cfg: TaskConfig, d_in: int, d_out: int):
        self.cfg = cfg
        self.d_in = d_in
        self.d_out = d_out
        h = cfg.target_hidden
        self.target_w1 = spectral_init(h, d_in, RadiusSpec(1.0, h, d_in), seed=cfg.target_seed)
        self.target_w2 = spectral_init(d_out, h, RadiusSpec(1.0, d_out, h),
                                       seed=cfg.target_seed + 1)

    def target(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.target_w1.T, 0.0) @ self.target_w2.T

    def batch(self, step: int) -> Batch:
        rng = np.random.default_rng([self.cfg.seed, step])
        x = rng.standard_normal((self.cfg.batch_size, self.d_in))
        y = self.target(x) + self.cfg.noise * rng.standard_normal((self.cfg.batch_size, self.d_out))
        return Batch(x, y)


class CharLM:
    """Ventanas aleatorias (sembradas por paso) del corpus tokenizado por caracteres."""

    def __init__(self, cfg: TaskConfig, seq_len: int):
        self.cfg = cfg
        self.seq_len = seq_len
        self.preprocessor = TextPreprocessor()
        path = cfg.corpus_path or DEFAULT_CORPUS
        if not os.path.exists(path):
            raise ConfigError(f"no existe el corpus: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            text = self.preprocessor.prepare_corpus(f.read())
        self.tokenizer = CharTokenizer(text)
        self.tokens = self.tokenizer.encode(text)
        if len(self.tokens) <= seq_len + 1:
            raise ConfigError(f"corpus demasiado corto ({len(self.tokens)} caracteres) "
                              f"para seq_len = {seq_len}")
        self.stats = self.preprocessor.extract_features(text)
        logger.info(f"📚 Corpus cargado: {self.stats['length']} caracteres, "
                    f"{self.stats['word_count']} palabras, vocabulario {self.stats['vocab_size']}")

    @property
    def vocab_size(self) -> int:
        return self.tokenizer.vocab_size

    def batch(self, step: int) -> Batch:
        rng = np.random.default_rng([self.cfg.seed, step])
        starts = rng.integers(0, len(self.tokens) - self.seq_len - 1, size=self.cfg.batch_size)
        offsets = np.arange(self.seq_len)
        x = self.tokens[starts[:, None] + offsets]
        y = self.tokens[starts[:, None] + offsets + 1]
        return Batch(x, y)


def build_task(cfg: TaskConfig, d_in: int = 32, d_out: int = 8, seq_len: int = 32):
    """Construye la tarea descrita por ``cfg``."""
    if cfg.kind == 'synthetic_regression':
        return SyntheticRegression(cfg, d_in, d_out)
    return CharLM(cfg, seq_len)
