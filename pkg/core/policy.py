"""
Política contrastiva com correção de viés do sistema SimuRec

O histórico é dividido em sequências positiva e negativa, ambas codificadas pela
mesma GRU; o estado é a diferença o = o⁺ − o⁻ e Q(o, a) = exp(aᵀo), treinado com
alvos DQN ou Double-DQN.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ContractError, SimuRecError
from .layers import Embedding, GRUCell, Module, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .utils import SeedUtils

EMPTY = -1
# Expoente máximo de Q = exp(aᵀo)
MAX_EXPONENT = 700.0

VARIANT_CONTRASTIVE = "contrastive"
VARIANT_NAIVE = "naive-neg"
VARIANT_SEQUENCE = "sequence"
POLICY_VARIANTS = (VARIANT_CONTRASTIVE, VARIANT_NAIVE, VARIANT_SEQUENCE)

History = Tuple[Tuple[int, int], ...]


class PolicyError(SimuRecError):
    """Exceção personalizada para erros da política"""
    pass


@dataclass
class SplitSequence:
    """Sequências positiva e negativa alinhadas por posição (EMPTY onde não há evento)"""
    positive: List[int]
    negative: List[int]
    exclusive: bool = True

    def __post_init__(self):
        if len(self.positive) != len(self.negative):
            raise PolicyError("sequências positiva e negativa com tamanhos diferentes")
        if self.exclusive:
            for p, n in zip(self.positive, self.negative):
                if (p == EMPTY) == (n == EMPTY):
                    raise PolicyError("cada posição deve ter exatamente um item (positivo ou negativo)")

    def __len__(self) -> int:
        return len(self.positive)


@dataclass
class PolicyState:
    """o⁺, o⁻ e o = o⁺ − o⁻ de um lote"""
    o_plus: np.ndarray
    o_minus: np.ndarray
    o: np.ndarray


@dataclass(frozen=True)
class Transition:
    """(o_t, a_t, y_t, o_{t+1}) guardado como históricos, re-codificados a cada passo de treino"""
    user: int
    history: History
    action: int
    reward: float
    feedback: int
    next_history: History
    done: bool = False

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise PolicyError(f"recompensa fora de [0, 1]: {self.reward}")


def split_sequence(history: Sequence[Tuple[int, int]], memory_size: int = 20) -> SplitSequence:
    """
    Divide os últimos `memory_size` eventos em positivos e negativos

    Args:
        history (Sequence[Tuple[int, int]]): Pares (item, feedback) em ordem
        memory_size (int): Tamanho da memória

    Returns:
        SplitSequence: Feedback 1 ocupa a posição positiva, 0 a negativa
    """
    recent = list(history)[-memory_size:] if memory_size > 0 else []
    positive = [item if feedback == 1 else EMPTY for item, feedback in recent]
    negative = [item if feedback != 1 else EMPTY for item, feedback in recent]
    return SplitSequence(positive, negative)


def naive_split_sequence(history: Sequence[Tuple[int, int]], memory_size: int, n_items: int,
                         known: Set[int], seed: int = 0, user: int = 0) -> SplitSequence:
    """
    Divisão ingênua: itens desconhecidos do usuário fazem o papel de negativos

    Cada posição recebe um item amostrado uniformemente entre os que o usuário
    nunca viu; os negativos verdadeiros são descartados. A amostra de cada
    posição é fixa por (seed, usuário, posição absoluta).
    """
    history = list(history)
    offset = max(len(history) - memory_size, 0)
    recent = history[offset:] if memory_size > 0 else []
    unknown = np.setdiff1d(np.arange(n_items), np.fromiter(known, dtype=np.int64, count=len(known)))
    pool = unknown if len(unknown) else np.arange(n_items)
    positive, negative = [], []
    for position, (item, feedback) in enumerate(recent, start=offset):
        rng = SeedUtils.make_rng(seed, user, position)
        positive.append(item if feedback == 1 else EMPTY)
        negative.append(int(pool[rng.integers(0, len(pool))]))
    return SplitSequence(positive, negative, exclusive=False)


def contrastive_identity_check(a: np.ndarray, o_plus: np.ndarray, o_minus: np.ndarray) -> Tuple[float, float]:
    """
    Os dois lados da identidade contrastiva

    lhs = −log σ(aᵀo⁺ − aᵀo⁻) e rhs = −log(e^{aᵀo⁺} / (e^{aᵀo⁺} + e^{aᵀo⁻})),
    ambos em forma numericamente estável.
    """
    positive = float(np.dot(a, o_plus))
    negative = float(np.dot(a, o_minus))
    lhs = float(np.logaddexp(0.0, -(positive - negative)))
    rhs = float(np.logaddexp(positive, negative) - positive)
    return lhs, rhs


class QPolicy(Module):
    """Rede Q: GRU compartilhada sobre o histórico e Q(o, a) = exp(aᵀo)"""

    def __init__(self, n_items: int, dim: int = 64, memory_size: int = 20,
                 variant: str = VARIANT_CONTRASTIVE, seed: int = 0):
        """
        Inicializa a política

        Args:
            n_items (int): Tamanho do catálogo (ações)
            dim (int): Dimensão do estado
            memory_size (int): Eventos considerados do histórico
            variant (str): contrastive | naive-neg | sequence
            seed (int): Semente de inicialização
        """
        super().__init__()
        if variant not in POLICY_VARIANTS:
            raise PolicyError(f"variante de política desconhecida: {variant}")
        rng = np.random.default_rng(seed)
        self.n_items, self.dim, self.memory_size = n_items, dim, memory_size
        self.variant, self.seed = variant, seed
        # Última linha: embedding aprendido do slot EMPTY
        self.item_embedding = Embedding(n_items + 1, dim, rng)
        self.action_embedding = Embedding(n_items, dim, rng)
        self.gru = GRUCell(dim, dim, rng)
        if variant == VARIANT_SEQUENCE:
            self.feedback_embedding = Embedding(2, dim, rng)
        self.known_items: Dict[int, Set[int]] = {}
        self.clamped = 0

    # ------------------------------------------------------------------
    # Codificação
    # ------------------------------------------------------------------
    def _run_gru(self, tokens: Tensor, mask: np.ndarray) -> Tensor:
        """GRU sobre [B, L, d]; posições mascaradas mantêm o estado"""
        batch, length = mask.shape
        hidden = Tensor(np.zeros((batch, self.dim)))
        for step in range(length):
            keep = mask[:, step:step + 1].astype(np.float64)
            updated = self.gru(tokens[:, step, :], hidden)
            hidden = updated * keep + hidden * (1.0 - keep)
        return hidden

    def _slot_tokens(self, sequences: List[List[int]]) -> Tuple[Tensor, np.ndarray]:
        length = max([len(s) for s in sequences] + [0])
        index = np.full((len(sequences), length), self.n_items, dtype=np.int64)
        mask = np.zeros((len(sequences), length), dtype=bool)
        for row, seq in enumerate(sequences):
            for col, item in enumerate(seq):
                index[row, col] = self.n_items if item == EMPTY else item
                mask[row, col] = True
        return self.item_embedding(index), mask

    def encode_splits(self, splits: List[SplitSequence]) -> Tuple[Tensor, Tensor]:
        """Codifica (o⁺, o⁻) de um lote com a mesma GRU numa única passada"""
        sequences = [s.positive for s in splits] + [s.negative for s in splits]
        tokens, mask = self._slot_tokens(sequences)
        hidden = self._run_gru(tokens, mask)
        count = len(splits)
        return hidden[:count], hidden[count:]

    def encode_state(self, split: SplitSequence) -> PolicyState:
        """o⁺ e o⁻ de uma divisão; o = o⁺ − o⁻"""
        o_plus, o_minus = self.encode_splits([split])
        return PolicyState(o_plus=o_plus.data[0], o_minus=o_minus.data[0], o=(o_plus - o_minus).data[0])

    def _sequence_encode(self, histories: List[History]) -> Tensor:
        recent = [list(h)[-self.memory_size:] for h in histories]
        length = max([len(h) for h in recent] + [0])
        items = np.zeros((len(recent), length), dtype=np.int64)
        feedback = np.zeros((len(recent), length), dtype=np.int64)
        mask = np.zeros((len(recent), length), dtype=bool)
        for row, h in enumerate(recent):
            for col, (item, y) in enumerate(h):
                items[row, col], feedback[row, col], mask[row, col] = item, y, True
        tokens = self.item_embedding(items) + self.feedback_embedding(feedback)
        return self._run_gru(tokens, mask)

    def split(self, history: History, user: int) -> SplitSequence:
        if self.variant == VARIANT_NAIVE:
            known = self.known_items.get(user, set()) | {item for item, _ in history}
            return naive_split_sequence(history, self.memory_size, self.n_items, known, self.seed, user)
        return split_sequence(history, self.memory_size)

    def encode(self, histories: Sequence[History], users: Sequence[int]) -> Tensor:
        """
        Estado o de um lote de históricos, conforme a variante

        Returns:
            Tensor: [B, d]
        """
        histories = [tuple(h) for h in histories]
        if self.variant == VARIANT_SEQUENCE:
            return self._sequence_encode(histories)
        o_plus, o_minus = self.encode_splits([self.split(h, u) for h, u in zip(histories, users)])
        return o_plus - o_minus

    # ------------------------------------------------------------------
    # Valores e ações
    # ------------------------------------------------------------------
    def _exponent(self, logits: np.ndarray) -> np.ndarray:
        over = logits > MAX_EXPONENT
        if np.any(over):
            self.clamped += int(over.sum())
        return np.minimum(logits, MAX_EXPONENT)

    def q_values(self, o: np.ndarray) -> np.ndarray:
        """Q(o, a) para todo o catálogo: [B, M]"""
        logits = np.asarray(o, dtype=np.float64) @ self.action_embedding.table.data.T
        return np.exp(self._exponent(logits))

    def q_value(self, state: PolicyState, item: int) -> float:
        """Q = exp(aᵀo), expoente limitado a 700 (contado em `clamped`)"""
        if not 0 <= item < self.n_items:
            raise PolicyError(f"item fora do catálogo: {item}")
        logit = np.array([float(self.action_embedding.table.data[item] @ state.o)])
        return float(np.exp(self._exponent(logit))[0])

    def q_selected(self, o: Tensor, actions: np.ndarray) -> Tensor:
        """Q(o_i, a_i) diferenciável para cada linha do lote"""
        logits = (o * self.action_embedding(actions)).sum(axis=-1)
        self._exponent(logits.data)
        return logits.clamp_max(MAX_EXPONENT).exp()

    def select_action(self, state: PolicyState, candidates: Sequence[int], epsilon: float,
                      rng: np.random.Generator) -> int:
        """
        ε-greedy: com probabilidade ε um candidato uniforme, senão argmax Q

        Empates ficam com o menor id de item.
        """
        if len(candidates) == 0:
            raise ContractError("select_action exige pelo menos um candidato")
        candidates = np.sort(np.asarray(candidates, dtype=np.int64))
        if rng.random() < epsilon:
            return int(candidates[rng.integers(0, len(candidates))])
        scores = self.action_embedding.table.data[candidates] @ state.o
        return int(candidates[int(np.argmax(scores))])

    def select_actions(self, o: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
        """ε-greedy em lote sobre o catálogo inteiro"""
        greedy = np.argmax(np.asarray(o) @ self.action_embedding.table.data.T, axis=1)
        explore = rng.random(len(greedy)) < epsilon
        random_items = rng.integers(0, self.n_items, size=len(greedy))
        return np.where(explore, random_items, greedy).astype(np.int64)

    # ------------------------------------------------------------------
    # Cópia e checkpoints
    # ------------------------------------------------------------------
    def clone(self) -> "QPolicy":
        """Cópia com parâmetros idênticos (rede alvo)"""
        twin = QPolicy(self.n_items, self.dim, self.memory_size, self.variant, self.seed)
        twin.load_state_dict(self.state_dict())
        twin.known_items = self.known_items
        return twin

    def sync_from(self, other: "QPolicy") -> None:
        self.load_state_dict(other.state_dict())

    def config(self) -> Dict:
        return {"n_items": self.n_items, "dim": self.dim, "memory_size": self.memory_size,
                "variant": self.variant, "seed": self.seed}

    def save(self, path: str, meta: Optional[Dict] = None) -> str:
        return save_checkpoint(path, self.state_dict(), {"kind": "policy", **self.config(), **(meta or {})})

    @classmethod
    def load(cls, path: str) -> "QPolicy":
        state, meta = load_checkpoint(path)
        if meta.get("kind") != "policy":
            raise PolicyError(f"checkpoint {path} não é de política")
        policy = cls(meta["n_items"], meta["dim"], meta["memory_size"], meta["variant"], meta["seed"])
        policy.load_state_dict(state)
        return policy


def td_loss(policy: QPolicy, target: QPolicy, batch: Sequence[Transition], gamma: float,
            double: bool = True) -> Tensor:
    """
    Erro TD quadrático médio

    r_t = y_t + γ·Q_alvo(o_{t+1}, a*) (apenas y_t se done); a* é o argmax da rede
    online no modo Double-DQN e da própria rede alvo caso contrário.

    Returns:
        Tensor: Perda escalar
    """
    if not 0.0 <= gamma < 1.0:
        raise ContractError(f"gamma deve estar em [0, 1), recebido {gamma}")
    if len(batch) == 0:
        raise ContractError("td_loss exige lote não vazio")
    users = [t.user for t in batch]
    rewards = np.array([t.reward for t in batch])
    done = np.array([t.done for t in batch], dtype=np.float64)
    actions = np.array([t.action for t in batch], dtype=np.int64)

    next_target = target.q_values(target.encode([t.next_history for t in batch], users).data)
    if double:
        online_next = policy.encode([t.next_history for t in batch], users).data
        best = np.argmax(online_next @ policy.action_embedding.table.data.T, axis=1)
        bootstrap = next_target[np.arange(len(batch)), best]
    else:
        bootstrap = next_target.max(axis=1)
    targets = rewards + gamma * bootstrap * (1.0 - done)

    q = policy.q_selected(policy.encode([t.history for t in batch], users), actions)
    error = q - targets
    return (error * error).mean()


class ReplayBuffer:
    """Buffer circular de transições com amostragem uniforme sem reposição no lote"""

    def __init__(self, capacity: int = 50000, seed: int = 0):
        if capacity <= 0:
            raise ContractError(f"capacidade deve ser positiva, recebido {capacity}")
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self._items: List[Transition] = []
        self._cursor = 0
        self.pushed = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity
        self.pushed += 1

    def extend(self, transitions: Sequence[Transition]) -> None:
        for t in transitions:
            self.push(t)

    def sample(self, batch_size: int) -> List[Transition]:
        if not self._items:
            raise ContractError("buffer vazio")
        index = self.rng.choice(len(self._items), size=min(batch_size, len(self._items)), replace=False)
        return [self._items[i] for i in index]


@dataclass
class EpsilonSchedule:
    """ε linear de `start` até `end` ao longo da fração `decay_fraction` dos episódios"""
    start: float
    end: float = 0.05
    decay_fraction: float = 0.8
    total_episodes: int = 1

    def value(self, episode: int) -> float:
        decay_episodes = self.decay_fraction * self.total_episodes
        if decay_episodes <= 0:
            return self.end
        progress = min(max(episode, 0) / decay_episodes, 1.0)
        return self.start + (self.end - self.start) * progress
