"""
Camadas, otimizador e checkpoints do motor numérico do SimuRec
"""
import json
import os
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np

from .errors import ContractError, DimensionError, EmptySequenceError, SimuRecError
from .tensor import Parameter, Tensor

CHECKPOINT_FORMAT = "simurec-ckpt"
CHECKPOINT_VERSION = 1


class CheckpointError(SimuRecError):
    """Exceção personalizada para erros de leitura/escrita de checkpoints"""
    pass


def _uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base de todas as redes: coleta parâmetros e controla o modo treino/avaliação"""

    def __init__(self):
        self.training = True

    def _children(self) -> Iterable[Tuple[str, Any]]:
        return [(k, v) for k, v in vars(self).items() if isinstance(v, (Parameter, Module))]

    def parameters(self, prefix: str = "") -> Dict[str, Parameter]:
        """
        Parâmetros da rede em ordem de declaração

        Returns:
            Dict[str, Parameter]: Nome qualificado -> parâmetro
        """
        params: Dict[str, Parameter] = {}
        for name, value in self._children():
            full_name = f"{prefix}{name}"
            if isinstance(value, Parameter):
                value.name = full_name
                params[full_name] = value
            else:
                params.update(value.parameters(prefix=f"{full_name}."))
        return params

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise CheckpointError(f"Parâmetros ausentes no estado: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise DimensionError(f"Parâmetro '{name}' com formato {value.shape}, esperado {p.data.shape}")
            p.data = value.copy()


class Linear(Module):
    """Camada afim x @ W + b"""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(_uniform(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(_uniform(rng, d_in, (d_out,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Linear espera última dimensão {self.d_in}, recebido {x.shape}")
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    """Tabela de embeddings indexada por inteiros"""

    def __init__(self, count: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.count, self.dim = count, dim
        self.table = Parameter(_uniform(rng, dim, (count, dim)))

    def __call__(self, indices: np.ndarray) -> Tensor:
        return self.table.take(indices)


class GRUCell(Module):
    """Célula GRU padrão (portas de atualização e reset, candidato)"""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        super().__init__()
        self.d_in, self.d_h = d_in, d_h
        for gate in ("z", "r", "n"):
            setattr(self, f"W_{gate}", Parameter(_uniform(rng, d_h, (d_in, d_h))))
            setattr(self, f"U_{gate}", Parameter(_uniform(rng, d_h, (d_h, d_h))))
            setattr(self, f"b_{gate}", Parameter(_uniform(rng, d_h, (d_h,))))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_cell(x, h, self)


def gru_cell(x: Tensor, h: Tensor, params: GRUCell) -> Tensor:
    """
    Um passo da GRU

    z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r),
    n = tanh(x W_n + (r ⊙ h) U_n + b_n), h' = (1 − z) ⊙ n + z ⊙ h

    Args:
        x (Tensor): Entrada [..., d_in]
        h (Tensor): Estado oculto [..., d_h]
        params (GRUCell): Conjunto de parâmetros

    Returns:
        Tensor: Novo estado oculto [..., d_h]
    """
    if x.shape[-1] != params.d_in or h.shape[-1] != params.d_h:
        raise DimensionError(
            f"GRU espera entrada {params.d_in} e estado {params.d_h}, recebido {x.shape} e {h.shape}"
        )
    z = (x @ params.W_z + h @ params.U_z + params.b_z).sigmoid()
    r = (x @ params.W_r + h @ params.U_r + params.b_r).sigmoid()
    n = (x @ params.W_n + (r * h) @ params.U_n + params.b_n).tanh()
    return (1.0 - z) * n + z * h


class SelfAttention(Module):
    """Atenção de cabeça única por produto escalar escalonado"""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.W_q = Parameter(_uniform(rng, dim, (dim, dim)))
        self.W_k = Parameter(_uniform(rng, dim, (dim, dim)))
        self.W_v = Parameter(_uniform(rng, dim, (dim, dim)))

    def __call__(self, seq: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return self_attention(seq, self, mask)


def attention_weights(seq: Tensor, params: SelfAttention,
                      mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Pesos de atenção softmax(Q Kᵀ / √d); cada linha soma 1

    Args:
        seq (Tensor): Sequência [L, d] ou lote [B, L, d]
        params (SelfAttention): Projeções Q/K/V
        mask (np.ndarray, optional): Posições válidas [L] ou [B, L]
    """
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise EmptySequenceError("self_attention exige sequência com L >= 1")
    if seq.shape[-1] != params.dim:
        raise DimensionError(f"self_attention espera dimensão {params.dim}, recebido {seq.shape}")
    query = seq @ params.W_q
    key = seq @ params.W_k
    scores = (query @ key.swap_last()) * (1.0 / np.sqrt(params.dim))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise EmptySequenceError("máscara de atenção sem nenhuma posição válida")
        scores = scores + np.where(mask, 0.0, -1e9)[..., None, :]
    return scores.softmax(axis=-1)


def self_attention(seq: Tensor, params: SelfAttention,
                   mask: Optional[np.ndarray] = None) -> Tensor:
    """Saída da atenção: cada linha é uma combinação convexa das linhas de valor"""
    weights = attention_weights(seq, params, mask)
    return weights @ (seq @ params.W_v)


class Dropout(Module):
    """Dropout invertido; identidade em avaliação ou com taxa 0"""

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ContractError(f"taxa de dropout deve estar em [0, 1), recebido {rate}")
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep


class FeedForward(Module):
    """FFN de duas camadas com ReLU e dropout"""

    def __init__(self, d_in: int, d_hidden: int, d_out: int,
                 rng: np.random.Generator, droprate: float = 0.3):
        super().__init__()
        self.inner = Linear(d_in, d_hidden, rng)
        self.dropout = Dropout(droprate, rng)
        self.outer = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(self.dropout(self.inner(x).relu()))


class LayerNorm(Module):
    """Normalização de camada com ganho e viés aprendidos"""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """
    Normaliza a última dimensão: (x − média) / √(var + eps) · ganho + viés

    A variância é populacional. Entrada constante resulta no próprio viés.
    """
    if x.shape[-1] < 2:
        raise DimensionError(f"layer_norm exige d >= 2, recebido {x.shape}")
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (variance + eps).pow(-0.5) * gain + bias


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Média sobre o eixo de sequência considerando só as posições válidas"""
    weights = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(weights.sum(axis=-1, keepdims=True), 1.0)
    return (x * (weights / counts)[..., None]).sum(axis=-2)


# ----------------------------------------------------------------------
# Otimização
# ----------------------------------------------------------------------
def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 0.001, betas: Tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Atualização Adam com correção de viés

    Returns:
        Tuple: (parâmetro atualizado, primeiro momento, segundo momento)
    """
    if t < 1:
        raise ContractError(f"adam_step exige t >= 1, recebido {t}")
    beta1, beta2 = betas
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Otimizador Adam sobre um conjunto de parâmetros"""

    def __init__(self, params: Dict[str, Parameter], lr: float = 0.001,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, grad_clip: Optional[float] = None):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in self.params.values())))

    def step(self) -> None:
        self.t += 1
        scale = 1.0
        if self.grad_clip:
            norm = self.grad_norm()
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
        for name, p in self.params.items():
            grad = p.grad * scale
            if self.weight_decay:
                grad = grad + self.weight_decay * p.data
            p.data, self._m[name], self._v[name] = adam_step(
                p.data, grad, self._m[name], self._v[name], self.t, self.lr, self.betas, self.eps
            )


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(path: str, state: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> str:
    """
    Grava checkpoint binário versionado (nomes, formatos e valores)

    Args:
        path (str): Arquivo de destino (ex: world_model.ckpt)
        state (Dict[str, np.ndarray]): Parâmetros por nome
        meta (Dict, optional): Metadados serializáveis em JSON

    Returns:
        str: Caminho gravado
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    arrays = {f"param::{name}": np.asarray(value, dtype=np.float64) for name, value in state.items()}
    arrays["__format__"] = np.array(f"{CHECKPOINT_FORMAT}:{CHECKPOINT_VERSION}")
    arrays["__meta__"] = np.array(json.dumps(meta or {}, sort_keys=True))
    try:
        with open(path, "wb") as f:
            np.savez(f, **arrays)
    except OSError as e:
        raise CheckpointError(f"Erro ao gravar checkpoint {path}: {e}")
    return path


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Lê checkpoint gravado por `save_checkpoint`

    Returns:
        Tuple: (parâmetros por nome, metadados)
    """
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint não encontrado: {path}")
    with np.load(path, allow_pickle=False) as archive:
        header = str(archive["__format__"])
        if header != f"{CHECKPOINT_FORMAT}:{CHECKPOINT_VERSION}":
            raise CheckpointError(f"Formato de checkpoint não suportado: {header}")
        meta = json.loads(str(archive["__meta__"]))
        state = {key[len("param::"):]: archive[key].copy()
                 for key in archive.files if key.startswith("param::")}
    return state, meta
