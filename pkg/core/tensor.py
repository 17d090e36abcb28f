"""
Motor numérico do SimuRec: tensores densos float64 com diferenciação reversa

Cada operação cria um novo Tensor que guarda os pais e uma closure de backward.
O grafo é implícito; `Tensor.backward` ordena os nós topologicamente e percorre
a ordem reversa visitando cada nó exatamente uma vez.
"""
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, DomainError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

# Rótulo do nó que representa o termo KL gaussiano (auditoria da ELBO)
KL_OP = "gaussian_kl"


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Soma o gradiente nas dimensões que sofreram broadcast até voltar a `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(value: ArrayLike) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """Tensor denso (float64, row-major) com rastreamento de gradiente"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 _children: Tuple["Tensor", ...] = (), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        # Folhas com gradiente começam zeradas; nós internos alocam sob demanda
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad and not _children else None
        )
        self._backward: Optional[Callable[[], None]] = None
        self._prev = _children
        self._op = _op

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op='{self._op}', requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # Propriedades
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> List[float]:
        return self.data.ravel().tolist()

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() exige tensor escalar, formato recebido {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    # ------------------------------------------------------------------
    # Construção do grafo
    # ------------------------------------------------------------------
    @staticmethod
    def _node(data: np.ndarray, parents: Tuple["Tensor", ...], op: str) -> "Tensor":
        requires_grad = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=requires_grad,
                      _children=parents if requires_grad else (), _op=op)

    @staticmethod
    def _accumulate(target: "Tensor", grad: np.ndarray) -> None:
        if not target.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), target.data.shape)
        if target.grad is None:
            target.grad = np.array(grad, dtype=np.float64)
        else:
            target.grad = target.grad + grad

    # ------------------------------------------------------------------
    # Aritmética
    # ------------------------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor._node(self.data + other.data, (self, other), "add")

        def _backward():
            Tensor._accumulate(self, out.grad)
            Tensor._accumulate(other, out.grad)
        out._backward = _backward
        return out

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return self + other

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor._node(self.data - other.data, (self, other), "sub")

        def _backward():
            Tensor._accumulate(self, out.grad)
            Tensor._accumulate(other, -out.grad)
        out._backward = _backward
        return out

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return _as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        out = Tensor._node(-self.data, (self,), "neg")

        def _backward():
            Tensor._accumulate(self, -out.grad)
        out._backward = _backward
        return out

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor._node(self.data * other.data, (self, other), "mul")

        def _backward():
            Tensor._accumulate(self, out.grad * other.data)
            Tensor._accumulate(other, out.grad * self.data)
        out._backward = _backward
        return out

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self * other

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor._node(self.data / other.data, (self, other), "div")

        def _backward():
            Tensor._accumulate(self, out.grad / other.data)
            Tensor._accumulate(other, -out.grad * self.data / (other.data ** 2))
        out._backward = _backward
        return out

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return self.matmul(other)

    def matmul(self, other: ArrayLike) -> "Tensor":
        other = _as_tensor(other)
        if other.ndim < 2:
            raise DimensionError(f"matmul exige operando direito com 2+ dimensões, recebido {other.shape}")
        try:
            result = np.matmul(self.data, other.data)
        except ValueError as e:
            raise DimensionError(f"matmul com formatos incompatíveis {self.shape} @ {other.shape}: {e}")
        out = Tensor._node(result, (self, other), "matmul")

        def _backward():
            left = self.data if self.ndim > 1 else self.data[None, :]
            grad = out.grad if self.ndim > 1 else out.grad[None, :]
            grad_left = np.matmul(grad, np.swapaxes(other.data, -1, -2))
            Tensor._accumulate(self, grad_left if self.ndim > 1 else grad_left[..., 0, :])
            Tensor._accumulate(other, np.matmul(np.swapaxes(left, -1, -2), grad))
        out._backward = _backward
        return out

    def pow(self, exponent: float) -> "Tensor":
        out = Tensor._node(self.data ** exponent, (self,), "pow")

        def _backward():
            Tensor._accumulate(self, out.grad * exponent * self.data ** (exponent - 1))
        out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # Reduções
    # ------------------------------------------------------------------
    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None,
            keepdims: bool = False) -> "Tensor":
        out = Tensor._node(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def _backward():
            grad = out.grad
            if axis is not None and not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                axes = sorted(a % self.ndim for a in axes)
                for a in axes:
                    grad = np.expand_dims(grad, a)
            Tensor._accumulate(self, np.broadcast_to(grad, self.data.shape))
        out._backward = _backward
        return out

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None,
             keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ------------------------------------------------------------------
    # Funções elementares
    # ------------------------------------------------------------------
    def exp(self) -> "Tensor":
        out = Tensor._node(np.exp(self.data), (self,), "exp")

        def _backward():
            Tensor._accumulate(self, out.grad * out.data)
        out._backward = _backward
        return out

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise DomainError("log de valor não positivo")
        out = Tensor._node(np.log(self.data), (self,), "log")

        def _backward():
            Tensor._accumulate(self, out.grad / self.data)
        out._backward = _backward
        return out

    def clamp_max(self, upper: float) -> "Tensor":
        out = Tensor._node(np.minimum(self.data, upper), (self,), "clamp_max")

        def _backward():
            Tensor._accumulate(self, out.grad * (self.data < upper))
        out._backward = _backward
        return out

    def sigmoid(self) -> "Tensor":
        out = Tensor._node(expit(self.data), (self,), "sigmoid")

        def _backward():
            Tensor._accumulate(self, out.grad * out.data * (1.0 - out.data))
        out._backward = _backward
        return out

    def tanh(self) -> "Tensor":
        out = Tensor._node(np.tanh(self.data), (self,), "tanh")

        def _backward():
            Tensor._accumulate(self, out.grad * (1.0 - out.data ** 2))
        out._backward = _backward
        return out

    def relu(self) -> "Tensor":
        out = Tensor._node(np.maximum(self.data, 0.0), (self,), "relu")

        def _backward():
            Tensor._accumulate(self, out.grad * (self.data > 0))
        out._backward = _backward
        return out

    def softplus(self) -> "Tensor":
        out = Tensor._node(np.logaddexp(0.0, self.data), (self,), "softplus")

        def _backward():
            Tensor._accumulate(self, out.grad * expit(self.data))
        out._backward = _backward
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        exps = np.exp(shifted)
        out = Tensor._node(exps / exps.sum(axis=axis, keepdims=True), (self,), "softmax")

        def _backward():
            inner = (out.grad * out.data).sum(axis=axis, keepdims=True)
            Tensor._accumulate(self, out.data * (out.grad - inner))
        out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # Formato e indexação
    # ------------------------------------------------------------------
    def reshape(self, *shape: int) -> "Tensor":
        old_shape = self.data.shape
        out = Tensor._node(self.data.reshape(shape), (self,), "reshape")

        def _backward():
            Tensor._accumulate(self, out.grad.reshape(old_shape))
        out._backward = _backward
        return out

    def swap_last(self) -> "Tensor":
        """Transpõe as duas últimas dimensões"""
        out = Tensor._node(np.swapaxes(self.data, -1, -2), (self,), "transpose")

        def _backward():
            Tensor._accumulate(self, np.swapaxes(out.grad, -1, -2))
        out._backward = _backward
        return out

    def __getitem__(self, index) -> "Tensor":
        out = Tensor._node(self.data[index], (self,), "getitem")

        def _backward():
            full = np.zeros_like(self.data)
            np.add.at(full, index, out.grad)
            Tensor._accumulate(self, full)
        out._backward = _backward
        return out

    def take(self, indices: np.ndarray) -> "Tensor":
        """Seleciona linhas (eixo 0) por índices inteiros, como uma tabela de embeddings"""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.data.shape[0]):
            raise DimensionError(
                f"índice fora da tabela: faixa [{indices.min()}, {indices.max()}] para {self.data.shape[0]} linhas"
            )
        out = Tensor._node(self.data[indices], (self,), "take")

        def _backward():
            full = np.zeros_like(self.data)
            np.add.at(full, indices, out.grad)
            Tensor._accumulate(self, full)
        out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # Diferenciação reversa
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """
        Propaga gradientes a partir deste nó escalar

        Raises:
            ContractError: Se o tensor não for escalar
        """
        if self.data.size != 1:
            raise ContractError(f"backward exige perda escalar, formato recebido {self.shape}")
        if not self.requires_grad:
            return
        order = graph_nodes(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()


class Parameter(Tensor):
    """Parâmetro treinável: tensor nomeado com gradiente do mesmo formato"""

    def __init__(self, data: ArrayLike, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name='{self.name}', shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def graph_nodes(root: Tensor) -> List[Tensor]:
    """
    Ordem topológica (pais antes dos filhos) dos nós que exigem gradiente

    Args:
        root (Tensor): Nó final do grafo

    Returns:
        List[Tensor]: Nós alcançáveis, cada um uma única vez
    """
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def count_ops(root: Tensor, op: str) -> int:
    """Conta os nós do grafo com o rótulo de operação informado"""
    return sum(1 for node in graph_nodes(root) if node._op == op)


# ----------------------------------------------------------------------
# Funções sobre vários tensores
# ----------------------------------------------------------------------
def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatena tensores ao longo de um eixo"""
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat com formatos incompatíveis {[t.shape for t in tensors]}: {e}")
    out = Tensor._node(data, tuple(tensors), "concat")
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def _backward():
        for t, piece in zip(tensors, np.split(out.grad, splits, axis=axis)):
            Tensor._accumulate(t, piece)
    out._backward = _backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Empilha tensores de mesmo formato num novo eixo"""
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor._node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack")

    def _backward():
        for i, t in enumerate(tensors):
            Tensor._accumulate(t, np.take(out.grad, i, axis=axis))
    out._backward = _backward
    return out


def gaussian_kl_std(mu: ArrayLike, sigma: ArrayLike) -> Tensor:
    """
    KL(N(mu, sigma²) || N(0, 1)) somada na última dimensão

    0.5 · Σ (mu² + sigma² − log sigma² − 1), sempre ≥ 0.

    Args:
        mu (Tensor): Médias
        sigma (Tensor): Desvios padrão (estritamente positivos)

    Returns:
        Tensor: Escalar para entrada 1-D, um valor por linha para lotes
    """
    mu, sigma = _as_tensor(mu), _as_tensor(sigma)
    if np.any(sigma.data <= 0):
        raise DomainError("gaussian_kl_std exige sigma > 0 em todas as posições")
    variance = sigma * sigma
    kl = ((mu * mu + variance - variance.log() - 1.0) * 0.5).sum(axis=-1)
    kl._op = KL_OP
    return kl


def bernoulli_nll_logits(logits: Tensor, targets: ArrayLike) -> Tensor:
    """
    −log P(y | logit) elemento a elemento, estável numericamente

    Usa −log σ(x) = softplus(−x) e −log(1 − σ(x)) = softplus(x).
    """
    targets = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    signs = 1.0 - 2.0 * targets
    return (logits * signs).softplus()


def gradient_check(loss_fn: Callable[[], Tensor], params: Dict[str, Parameter],
                   step: float = 1e-5) -> Dict[str, float]:
    """
    Compara gradientes analíticos com diferenças finitas centrais

    Args:
        loss_fn (Callable): Recalcula a perda escalar a partir dos parâmetros atuais
        params (Dict[str, Parameter]): Parâmetros a verificar
        step (float): Passo das diferenças finitas

    Returns:
        Dict[str, float]: Erro relativo por parâmetro
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    errors = {}
    for name, p in params.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = loss_fn().item()
            flat[i] = original - step
            minus = loss_fn().item()
            flat[i] = original
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)
        diff = np.linalg.norm(analytic[name] - numeric)
        scale = np.linalg.norm(analytic[name]) + np.linalg.norm(numeric)
        errors[name] = 0.0 if scale < 1e-12 else float(diff / scale)
    return errors


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
