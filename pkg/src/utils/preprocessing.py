"""
Utilidades de preprocesamiento del corpus de texto para la tarea CharLM
"""

import re
from typing import Dict

import numpy as np

from src.errors import ConfigError


class TextPreprocessor:
    def __init__(self, lowercase: bool = True, max_chars: int = 1_000_000):
        """
        Inicializa el preprocesador.

        Args:
            lowercase: Convertir a minúsculas para reducir el vocabulario
            max_chars: Tope de caracteres del corpus (≤ 1 MB)
        """
        self.lowercase = lowercase
        self.max_chars = max_chars

    def clean_text(self, text: str) -> str:
        """
        Limpia el texto del corpus.

        Args:
            text: Texto crudo

        Returns:
            Texto limpio
        """
        if not text:
            return ""

        text = str(text)

        # Eliminar URLs
        text = re.sub(r'http[s]?://\S+', '', text)

        # Eliminar etiquetas HTML
        text = re.sub(r'<.*?>', '', text)

        # Normalizar espacios en blanco (los saltos de línea también)
        text = re.sub(r'\s+', ' ', text)

        return text.strip()

    def normalize_text(self, text: str) -> str:
        """
        Normalización para el modelo de caracteres: minúsculas y números a '0'.
        Los acentos se conservan.
        """
        if self.lowercase:
            text = text.lower()
        text = re.sub(r'\d', '0', text)
        return text

    def prepare_corpus(self, text: str) -> str:
        """Limpieza, normalización y recorte a ``max_chars``."""
        text = self.normalize_text(self.clean_text(text))
        return text[:self.max_chars]

    def extract_features(self, text: str) -> Dict:
        """
        Estadísticas del corpus preparado.

        Args:
            text: Corpus

        Returns:
            Diccionario con longitud, palabras y tamaño de vocabulario
        """
        return {
            'length': len(text),
            'word_count': len(text.split()),
            'vocab_size': len(set(text)),
        }


class CharTokenizer:
    """Tokenizador por caracteres con vocabulario ordenado (determinista)."""

    def __init__(self, text: str):
        if not text:
            raise ConfigError("no se puede construir un vocabulario con un corpus vacío")
        self.chars = sorted(set(text))
        self.index = {c: i for i, c in enumerate(self.chars)}

    @property
    def vocab_size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        unknown = set(text) - set(self.index)
        if unknown:
            raise ConfigError(f"caracteres fuera del vocabulario: {''.join(sorted(unknown))}")
        return np.array([self.index[c] for c in text], dtype=np.int64)
