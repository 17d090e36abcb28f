"""
Modelo de mundo causal com correção de viés do sistema SimuRec

Três redes: estado recursivo do usuário (f_s), codificador de contexto (f_c) e
preditor de feedback (f_y), treinadas pela ELBO. A recompensa entregue à política
é a estimativa Monte Carlo de P(y_t | do(a_t)) integrando o contexto s^c.
"""
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import POPULARITY_FEATURES, LoggedDataset
from .errors import ContractError, SimuRecError
from .layers import (Dropout, Embedding, FeedForward, GRUCell, LayerNorm, Linear, Module,
                     SelfAttention, load_checkpoint, masked_mean, save_checkpoint)
from .tensor import Tensor, bernoulli_nll_logits, concat, gaussian_kl_std

# Piso do desvio padrão do contexto
SIGMA_FLOOR = 1e-4


class WorldModelError(SimuRecError):
    """Exceção personalizada para erros do modelo de mundo"""
    pass


@dataclass
class WorldModelInput:
    """Entradas exógenas e ação de um lote de passos (z_t, G_t, a_t, y_t)"""
    users: np.ndarray
    buckets: np.ndarray
    items: np.ndarray
    feedback: np.ndarray
    popularity: np.ndarray
    neighbor_index: np.ndarray
    neighbor_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class UserState:
    """s_t^u de um lote de usuários; `t` é o índice do passo na trajetória"""
    vector: Tensor
    t: Union[int, np.ndarray]


@dataclass
class ContextPosterior:
    """Posterior gaussiana do contexto: sample = mu + δ·sigma"""
    mu: Tensor
    sigma: Tensor
    sample: Tensor


@dataclass
class ElboBatch:
    """Pares consecutivos (t−1, t) com o estado em cache anterior a t−1"""
    previous: WorldModelInput
    current: WorldModelInput
    cached_state: np.ndarray


@dataclass
class ElboTerms:
    """Perda −ELBO e seus três termos (médias do lote)"""
    loss: Tensor
    kl: Tensor
    nll_current: Tensor
    nll_previous: Tensor

    def as_dict(self) -> Dict[str, float]:
        return {
            "loss": self.loss.item(),
            "kl": self.kl.item(),
            "nll_current": self.nll_current.item(),
            "nll_previous": self.nll_previous.item(),
        }


def make_input(dataset: LoggedDataset, users: Sequence[int], buckets: Sequence[int],
               items: Sequence[int], feedback: Sequence[float]) -> WorldModelInput:
    """
    Monta as entradas do modelo lendo z_t e G_t do dataset

    Itens iguais a `dataset.n_items` representam o item nulo (sem ação anterior).
    """
    users = np.asarray(users, dtype=np.int64)
    buckets = np.asarray(buckets, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    index, mask = dataset.social.padded(buckets, users, null_index=dataset.n_users)
    return WorldModelInput(
        users=users,
        buckets=buckets,
        items=items,
        feedback=np.asarray(feedback, dtype=np.float64),
        popularity=dataset.popularity.features(buckets, items),
        neighbor_index=index,
        neighbor_mask=mask,
    )


def records_input(dataset: LoggedDataset, pairs: Sequence[Tuple[int, int]]) -> WorldModelInput:
    """Entradas dos registros (usuário, índice na trajetória)"""
    records = [dataset.user_records[u][k] for u, k in pairs]
    return make_input(
        dataset,
        [r.user_id for r in records],
        [dataset.bucket_of(r.timestamp) for r in records],
        [r.item_id for r in records],
        [r.feedback for r in records],
    )


def last_step_input(dataset: LoggedDataset, users: Sequence[int]) -> WorldModelInput:
    """Último passo observado de cada usuário; sem histórico, item nulo no último bucket"""
    buckets, items, feedback = [], [], []
    for user in users:
        records = dataset.user_records[user]
        if records:
            buckets.append(dataset.bucket_of(records[-1].timestamp))
            items.append(records[-1].item_id)
            feedback.append(records[-1].feedback)
        else:
            buckets.append(dataset.last_bucket)
            items.append(dataset.n_items)
            feedback.append(0)
    return make_input(dataset, users, buckets, items, feedback)


def elbo_from_terms(mu: Tensor, sigma: Tensor, logits_current: Tensor, y_current: np.ndarray,
                    logits_previous: Tensor, y_previous: np.ndarray) -> ElboTerms:
    """
    −ELBO = KL(q(s^c) || N(0, 1)) − log P(y_t | ...) − log P(y_{t−1} | ...)

    Não há termo KL sobre s^u: a posterior do estado do usuário é uma delta.
    """
    kl = gaussian_kl_std(mu, sigma).mean()
    nll_current = bernoulli_nll_logits(logits_current, y_current).mean()
    nll_previous = bernoulli_nll_logits(logits_previous, y_previous).mean()
    return ElboTerms(loss=kl + nll_current + nll_previous, kl=kl,
                     nll_current=nll_current, nll_previous=nll_previous)


class WorldModel(Module):
    """Modelo de mundo: f_s (estado do usuário), f_c (contexto) e f_y (feedback)"""

    def __init__(self, n_users: int, n_items: int, dim: int = 64, droprate: float = 0.3, seed: int = 0):
        """
        Inicializa as redes

        Args:
            n_users (int): Usuários (a tabela de vizinhos tem uma linha nula extra)
            n_items (int): Itens (a tabela de itens tem uma linha nula extra)
            dim (int): Dimensão oculta
            droprate (float): Taxa de dropout das FFNs
            seed (int): Semente de inicialização e do dropout
        """
        super().__init__()
        rng = np.random.default_rng(seed)
        self.n_users, self.n_items = n_users, n_items
        self.dim, self.droprate, self.seed = dim, droprate, seed

        self.item_embedding = Embedding(n_items + 1, dim, rng)
        self.neighbor_embedding = Embedding(n_users + 1, dim, rng)
        self.popularity = Linear(POPULARITY_FEATURES, dim, rng)

        # f_s
        self.state_attention = SelfAttention(dim, rng)
        self.state_neighbor_ffn = FeedForward(dim, dim, dim, rng, droprate)
        self.state_gru = GRUCell(3 * dim, dim, rng)
        self.state_out = Linear(dim, dim, rng)
        self.state_norm = LayerNorm(dim)

        # f_c
        self.context_attention = SelfAttention(dim, rng)
        self.context_ffn = FeedForward(4 * dim + 1, dim, dim, rng, droprate)
        self.context_norm = LayerNorm(dim)
        self.context_mu = Linear(dim, dim, rng)
        self.context_sigma = Linear(dim, dim, rng)

        # f_y
        self.feedback_hidden = Linear(4 * dim, dim, rng)
        self.feedback_dropout = Dropout(droprate, rng)
        self.feedback_out = Linear(dim, 1, rng)

    # ------------------------------------------------------------------
    # Blocos
    # ------------------------------------------------------------------
    @contextmanager
    def inference(self) -> Iterator["WorldModel"]:
        """Modo avaliação temporário (sem dropout)"""
        previous = self.training
        self.eval()
        try:
            yield self
        finally:
            self.train(previous)

    def zero_state(self, batch: int) -> UserState:
        return UserState(vector=Tensor(np.zeros((batch, self.dim))), t=0)

    def _neighbors(self, inp: WorldModelInput, attention: SelfAttention) -> Tensor:
        embedded = self.neighbor_embedding(inp.neighbor_index)
        return attention(embedded, inp.neighbor_mask)

    def _item_and_popularity(self, inp: WorldModelInput) -> Tuple[Tensor, Tensor]:
        return self.item_embedding(inp.items), self.popularity(Tensor(inp.popularity))

    def _state_step(self, previous: Tensor, inp: WorldModelInput) -> Tensor:
        attended = self.state_neighbor_ffn(self._neighbors(inp, self.state_attention))
        pooled = masked_mean(attended, inp.neighbor_mask)
        item, popularity = self._item_and_popularity(inp)
        x = concat([pooled, item, popularity], axis=-1)
        hidden = self.state_gru(x, previous)
        return self.state_norm(self.state_out(hidden))

    # ------------------------------------------------------------------
    # Operações
    # ------------------------------------------------------------------
    def user_state_update(self, previous: UserState, inp: WorldModelInput) -> UserState:
        """
        f_s: s_t^u a partir de s_{t−1}^u, G_t, a_t e z_t (determinístico)

        Vizinhos passam por atenção, FFN e média; o resultado é concatenado ao
        embedding do item e à projeção de popularidade e alimenta a GRU junto com
        o estado anterior; a saída passa por uma camada linear e layer norm.
        """
        vector = previous.vector if isinstance(previous.vector, Tensor) else Tensor(previous.vector)
        return UserState(vector=self._state_step(vector, inp), t=previous.t + 1)

    def context_encode(self, inp: WorldModelInput, state: Tensor,
                       rng: Optional[np.random.Generator] = None) -> ContextPosterior:
        """
        f_c: posterior de s^c a partir de (y_{t−1}, G_{t−1}, z_{t−1}, a_{t−1}) e s_{t−1}^u

        Sem gerador, δ = 0 e a amostra é a média.
        """
        state = state if isinstance(state, Tensor) else Tensor(state)
        pooled = masked_mean(self._neighbors(inp, self.context_attention), inp.neighbor_mask)
        item, popularity = self._item_and_popularity(inp)
        feedback = Tensor(inp.feedback.reshape(-1, 1))
        hidden = self.context_norm(self.context_ffn(concat([pooled, item, popularity, feedback, state], axis=-1)))
        mu = self.context_mu(hidden)
        sigma = self.context_sigma(hidden).softplus() + SIGMA_FLOOR
        delta = rng.standard_normal(mu.shape) if rng is not None else np.zeros(mu.shape)
        return ContextPosterior(mu=mu, sigma=sigma, sample=mu + sigma * delta)

    def feedback_logits(self, inp: WorldModelInput, state: Tensor, context: Optional[Tensor] = None) -> Tensor:
        """Logits de f_y; contexto ausente vira o vetor zero"""
        state = state if isinstance(state, Tensor) else Tensor(state)
        if context is None:
            context = Tensor(np.zeros(state.shape))
        item, popularity = self._item_and_popularity(inp)
        hidden = self.feedback_dropout(self.feedback_hidden(concat([popularity, item, state, context], axis=-1)).relu())
        return self.feedback_out(hidden).reshape(len(inp))

    def predict_feedback(self, inp: WorldModelInput, state: Tensor, context: Optional[Tensor] = None) -> Tensor:
        """f_y: probabilidade de feedback positivo, sempre em (0, 1)"""
        return self.feedback_logits(inp, state, context).sigmoid()

    def elbo_loss(self, batch: ElboBatch, rng: Optional[np.random.Generator] = None) -> ElboTerms:
        """
        −ELBO de um lote de pares consecutivos, com uma amostra reparametrizada de s^c

        s_{t−1}^u é recalculado a partir do estado em cache (constante), então o
        gradiente atravessa um passo de f_s antes de y_{t−1} e dois antes de y_t.
        """
        if len(batch.current) == 0:
            raise ContractError("elbo_loss exige lote não vazio")
        cached = Tensor(batch.cached_state)
        state_previous = self._state_step(cached, batch.previous)
        state_current = self._state_step(state_previous, batch.current)
        posterior = self.context_encode(batch.previous, state_previous, rng)
        return elbo_from_terms(
            posterior.mu, posterior.sigma,
            self.feedback_logits(batch.current, state_current, posterior.sample), batch.current.feedback,
            self.feedback_logits(batch.previous, state_previous), batch.previous.feedback,
        )

    def debiased_feedback(self, state: Union[Tensor, np.ndarray], previous: WorldModelInput,
                          proposed: WorldModelInput, n_samples: int = 8,
                          rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Estimativa Monte Carlo de P(y_t = 1 | do(a_t))

        Média, sobre amostras de s^c da posterior de f_c, da probabilidade de f_y
        com o estado s_t^u obtido de f_s para a ação proposta.

        Args:
            state: s_{t−1}^u [B, d]
            previous (WorldModelInput): Passo t−1 (ação e feedback observados)
            proposed (WorldModelInput): Passo t com a ação proposta
            n_samples (int): Amostras de s^c
            rng (np.random.Generator, optional): Sem gerador, δ = 0

        Returns:
            np.ndarray: Probabilidades em [0, 1], uma por linha
        """
        if n_samples < 1:
            raise ContractError(f"n_samples deve ser >= 1, recebido {n_samples}")
        state = state if isinstance(state, Tensor) else Tensor(state)
        with self.inference():
            next_state = self._state_step(state, proposed).detach()
            posterior = self.context_encode(previous, state)
            mu, sigma = posterior.mu.data, posterior.sigma.data
            total = np.zeros(len(proposed))
            for _ in range(n_samples):
                delta = rng.standard_normal(mu.shape) if rng is not None else 0.0
                sample = Tensor(mu + sigma * delta)
                total += self.predict_feedback(proposed, next_state, sample).data
        return np.clip(total / n_samples, 0.0, 1.0)

    # ------------------------------------------------------------------
    # Trajetórias completas
    # ------------------------------------------------------------------
    def fold_states(self, dataset: LoggedDataset) -> List[np.ndarray]:
        """
        Aplica f_s sobre cada trajetória a partir de s_0^u = 0

        Returns:
            List[np.ndarray]: Por usuário, matriz [n + 1, d]; a linha k é o estado
            antes do registro k e a última é o estado após todo o histórico
        """
        lengths = [len(r) for r in dataset.user_records]
        states = [np.zeros((n + 1, self.dim)) for n in lengths]
        with self.inference():
            for k in range(max(lengths, default=0)):
                active = [u for u, n in enumerate(lengths) if n > k]
                current = np.stack([states[u][k] for u in active])
                updated = self._state_step(Tensor(current), records_input(dataset, [(u, k) for u in active])).data
                for row, u in enumerate(active):
                    states[u][k + 1] = updated[row]
        return states

    def pair_batch(self, dataset: LoggedDataset, pairs: Sequence[Tuple[int, int]],
                   states: List[np.ndarray]) -> ElboBatch:
        """Lote da ELBO para pares (usuário, t) com t >= 1"""
        return ElboBatch(
            previous=records_input(dataset, [(u, t - 1) for u, t in pairs]),
            current=records_input(dataset, pairs),
            cached_state=np.stack([states[u][t - 1] for u, t in pairs]),
        )

    def history_nll(self, dataset: LoggedDataset, batch_size: int = 1024,
                    pairs: Optional[Sequence[Tuple[int, int]]] = None) -> float:
        """
        NLL média de y_t dado o histórico (s^c na média da posterior), pares t >= 1

        Args:
            dataset (LoggedDataset): Trajetórias usadas para dobrar os estados
            batch_size (int): Pares por lote
            pairs (Sequence[Tuple[int, int]], optional): Subconjunto avaliado (padrão: todos)

        Returns:
            float: NLL por registro (nan se não houver pares)
        """
        pairs = dataset.pairs() if pairs is None else list(pairs)
        if not pairs:
            return float("nan")
        states = self.fold_states(dataset)
        total = 0.0
        with self.inference():
            for start in range(0, len(pairs), batch_size):
                chunk = pairs[start:start + batch_size]
                batch = self.pair_batch(dataset, chunk, states)
                state_previous = Tensor(np.stack([states[u][t] for u, t in chunk]))
                state_current = Tensor(np.stack([states[u][t + 1] for u, t in chunk]))
                posterior = self.context_encode(batch.previous, state_previous)
                logits = self.feedback_logits(batch.current, state_current, posterior.mu)
                total += float(bernoulli_nll_logits(logits, batch.current.feedback).data.sum())
        return total / len(pairs)

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------
    def config(self) -> Dict[str, Union[int, float]]:
        return {"n_users": self.n_users, "n_items": self.n_items, "dim": self.dim,
                "droprate": self.droprate, "seed": self.seed}

    def save(self, path: str, meta: Optional[Dict] = None) -> str:
        return save_checkpoint(path, self.state_dict(), {"kind": "world_model", **self.config(), **(meta or {})})

    @classmethod
    def load(cls, path: str) -> "WorldModel":
        state, meta = load_checkpoint(path)
        if meta.get("kind") != "world_model":
            raise WorldModelError(f"checkpoint {path} não é de modelo de mundo")
        model = cls(meta["n_users"], meta["n_items"], meta["dim"], meta["droprate"], meta["seed"])
        model.load_state_dict(state)
        return model


def simulate_feedback(model: WorldModel, dataset: LoggedDataset, seed: int = 0) -> LoggedDataset:
    """
    Regrava o feedback de um dataset amostrando o modelo de mundo

    Mantém usuários, itens e instantes; o feedback de cada registro é amostrado de
    f_y dado o histórico já regenerado, com uma amostra de s^c por passo.

    Returns:
        LoggedDataset: Dataset com feedback sintético
    """
    rng = np.random.default_rng(seed)
    states = model.fold_states(dataset)
    regenerated = [list(records) for records in dataset.user_records]
    lengths = [len(r) for r in regenerated]
    for k in range(max(lengths, default=0)):
        active = [u for u, n in enumerate(lengths) if n > k]
        proposed = records_input(dataset.with_records(regenerated), [(u, k) for u in active])
        if k == 0:
            previous = make_input(dataset, active, proposed.buckets,
                                  np.full(len(active), dataset.n_items), np.zeros(len(active)))
        else:
            previous = records_input(dataset.with_records(regenerated), [(u, k - 1) for u in active])
        state = np.stack([states[u][k] for u in active])
        probability = model.debiased_feedback(state, previous, proposed, n_samples=1, rng=rng)
        sampled = rng.random(len(active)) < probability
        for row, u in enumerate(active):
            regenerated[u][k] = replace(regenerated[u][k], feedback=int(sampled[row]))
    return dataset.with_records(regenerated)
