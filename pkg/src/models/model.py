"""
Modelos de juguete: sonda lineal, MLP de 2 capas y bloque transformer
pre-norm (atención por cabezas + FFN SwiGLU).

Los pesos viven en el registro como arrays de numpy; el modelo solo hace el
paso hacia delante y el gradiente con autograd de torch en float64 (CPU).
"""

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
import torch
import torch.nn.functional as F

from src.data.data_loader import Batch
from src.errors import ShapeMismatch
from src.models.granularity import ArchConfig, declare_parameters

RMS_NORM_EPS = 1e-6


@dataclass
class ForwardResult:
    loss: float
    grads: Dict[str, np.ndarray]
    # Activaciones sondeadas (lote completo) por nombre de sonda
    probes: Dict[str, np.ndarray]


class ToyModel:
    def __init__(self, arch: ArchConfig):
        """
        Inicializa el modelo para una arquitectura.

        Args:
            arch: Descripción de la arquitectura
        """
        self.arch = arch
        self.shapes = {p.name: p.shape for p in declare_parameters(arch)}

    def _tensors(self, weights: Dict[str, np.ndarray], requires_grad: bool) -> Dict[str, torch.Tensor]:
        tensors = {}
        for name, shape in self.shapes.items():
            w = np.asarray(weights[name], dtype=np.float64)
            if w.shape != shape:
                raise ShapeMismatch(f"{name}: forma {w.shape}, se esperaba {shape}")
            tensors[name] = torch.tensor(w, dtype=torch.float64, requires_grad=requires_grad)
        return tensors

    def loss_and_grads(self, weights: Dict[str, np.ndarray], batch: Batch) -> ForwardResult:
        """
        Pérdida, gradientes por tensor y activaciones sondeadas.

        Args:
            weights: Tensores completos del modelo (fusionados)
            batch: Lote de entrada

        Returns:
            ForwardResult
        """
        params = self._tensors(weights, requires_grad=True)
        loss, probes = self._forward(params, batch)
        loss.backward()
        grads = {name: t.grad.numpy().copy() for name, t in params.items()}
        return ForwardResult(loss=float(loss.item()), grads=grads,
                             probes={k: v.detach().numpy().copy() for k, v in probes.items()})

    def probe(self, weights: Dict[str, np.ndarray], batch: Batch) -> ForwardResult:
        """Solo el paso hacia delante (sin gradientes)."""
        with torch.no_grad():
            params = self._tensors(weights, requires_grad=False)
            loss, probes = self._forward(params, batch)
        return ForwardResult(loss=float(loss.item()), grads={},
                             probes={k: v.numpy().copy() for k, v in probes.items()})

    def _forward(self, p: Dict[str, torch.Tensor], batch: Batch):
        if self.arch.kind == 'transformer':
            return self._transformer(p, batch)
        x = torch.as_tensor(batch.inputs, dtype=torch.float64)
        y = torch.as_tensor(batch.targets, dtype=torch.float64)
        if self.arch.kind == 'linear':
            out = x @ p['probe.weight'].T
            return F.mse_loss(out, y), {'output': out}
        preact = x @ p['mlp.fc1'].T
        hidden = F.relu(preact)
        out = hidden @ p['mlp.fc2'].T
        return F.mse_loss(out, y), {'ffn_preact': preact, 'ffn_hidden': hidden}

    @staticmethod
    def _rms_norm(x: torch.Tensor, gain: torch.Tensor) -> torch.Tensor:
        return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + RMS_NORM_EPS) * gain[0]

    def _transformer(self, p: Dict[str, torch.Tensor], batch: Batch):
        arch = self.arch
        tokens = torch.as_tensor(batch.inputs, dtype=torch.long)
        targets = torch.as_tensor(batch.targets, dtype=torch.long)
        b, t = tokens.shape
        d, nh, hd = arch.d_model, arch.num_heads, arch.head_dim

        x = p['embed'][tokens]
        probes = {}
        for i in range(arch.num_layers):
            h = self._rms_norm(x, p[f'layer{i}.attn_norm'])
            # Filas de qkv: [Q-cabezas; K-cabezas; V-cabezas]
            qkv = (h @ p[f'layer{i}.attn.qkv'].T).view(b, t, 3, nh, hd)
            q, k, v = (qkv[:, :, j].transpose(1, 2) for j in range(3))
            attn = F.scaled_dot_product_attention(q, k, v, is_causal=True,
                                                  scale=1.0 / math.sqrt(hd))
            attn = attn.transpose(1, 2).reshape(b, t, d)
            attn_out = attn @ p[f'layer{i}.attn.o'].T
            x = x + attn_out

            h = self._rms_norm(x, p[f'layer{i}.mlp_norm'])
            gate, up = (h @ p[f'layer{i}.mlp.gate_up'].T).chunk(2, dim=-1)
            hidden = F.silu(gate) * up
            x = x + hidden @ p[f'layer{i}.mlp.down'].T
            if i == arch.num_layers - 1:
                probes['attn_out'] = attn_out
                probes['ffn_hidden'] = hidden

        logits = self._rms_norm(x, p['final_norm']) @ p['head'].T
        loss = F.cross_entropy(logits.reshape(b * t, -1), targets.reshape(b * t))
        return loss, probes
