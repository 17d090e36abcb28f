"""
Módulo de ingestão de dados do sistema SimuRec

Lê logs de interação e grafos de confiança, divide o tempo em buckets e monta o
conjunto de trajetórias D com as séries exógenas de popularidade (z_t) e de
grafo social (G_t).
"""
import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import ContractError, SimuRecError

DATASET_FORMAT = "simurec-dataset"
DATASET_VERSION = 1
INTERACTION_COLUMNS = ["user", "item", "rating", "timestamp"]
TRUST_COLUMNS = ["truster", "trustee"]
# Atributos de popularidade por (bucket, item): z relativo, média e entropia do bucket
POPULARITY_FEATURES = 3


class DataIngestError(SimuRecError):
    """Exceção personalizada para erros de ingestão de dados"""
    pass


class ParseError(DataIngestError):
    """Linha malformada em arquivo de entrada"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"linha {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class InteractionRecord:
    """Evento (usuário, item, feedback binário, instante em segundos)"""
    user_id: int
    item_id: int
    feedback: int
    timestamp: int

    def __post_init__(self):
        if self.user_id < 0 or self.item_id < 0:
            raise DataIngestError(f"ids devem ser não negativos: {self}")
        if self.feedback not in (0, 1):
            raise DataIngestError(f"feedback deve ser binário: {self}")


@dataclass(frozen=True)
class TrustEdge:
    """Aresta de confiança truster -> trustee (timestamp 0 para fontes estáticas)"""
    truster: int
    trustee: int
    timestamp: int = 0

    def __post_init__(self):
        if self.truster == self.trustee:
            raise DataIngestError(f"aresta de confiança em laço: {self}")


@dataclass
class IdMap:
    """Mapeamento id original -> id denso (0..N-1) de usuários e itens"""
    users: Dict[int, int] = field(default_factory=dict)
    items: Dict[int, int] = field(default_factory=dict)

    @staticmethod
    def identity(n_users: int, n_items: int) -> "IdMap":
        return IdMap({u: u for u in range(n_users)}, {i: i for i in range(n_items)})

    def original_user(self, dense: int) -> int:
        return self._inverse(self.users)[dense]

    def original_item(self, dense: int) -> int:
        return self._inverse(self.items)[dense]

    @staticmethod
    def _inverse(mapping: Dict[int, int]) -> Dict[int, int]:
        return {v: k for k, v in mapping.items()}

    @staticmethod
    def _extend(mapping: Dict[int, int], originals: Iterable[int]) -> None:
        for original in sorted(set(originals) - set(mapping)):
            mapping[original] = len(mapping)

    def to_dict(self) -> Dict[str, Dict[str, int]]:
        return {
            "users": {str(k): v for k, v in self.users.items()},
            "items": {str(k): v for k, v in self.items.items()},
        }

    @staticmethod
    def from_dict(values: Dict[str, Dict[str, int]]) -> "IdMap":
        return IdMap(
            users={int(k): int(v) for k, v in values.get("users", {}).items()},
            items={int(k): int(v) for k, v in values.get("items", {}).items()},
        )


@dataclass
class PopularitySeries:
    """Vetores de popularidade z_t por bucket (cada linha é uma distribuição sobre itens)"""
    buckets: np.ndarray

    def __len__(self) -> int:
        return self.buckets.shape[0]

    @property
    def n_items(self) -> int:
        return self.buckets.shape[1]

    def vector(self, t: int) -> np.ndarray:
        return self.buckets[t]

    def features(self, buckets: np.ndarray, items: np.ndarray) -> np.ndarray:
        """
        Atributos de popularidade para pares (bucket, item)

        O z do item é multiplicado pelo número de itens (1 = popularidade uniforme);
        as estatísticas do bucket são a média (também escalada) e a entropia
        normalizada por log M.

        Args:
            buckets (np.ndarray): Índices de bucket [B]
            items (np.ndarray): Índices de item [B]; índices >= M (item nulo) recebem z = 0

        Returns:
            np.ndarray: Matriz [B, POPULARITY_FEATURES]
        """
        buckets = np.asarray(buckets, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        m = self.n_items
        rows = self.buckets[buckets]
        valid = items < m
        item_z = np.where(valid, rows[np.arange(len(items)), np.minimum(items, m - 1)], 0.0)
        entropy = -(rows * np.log(np.clip(rows, 1e-300, None))).sum(axis=1)
        return np.stack([item_z * m, rows.mean(axis=1) * m, entropy / math.log(max(m, 2))], axis=1)


@dataclass
class SocialGraphSeries:
    """Instantâneos cumulativos G_t do grafo social"""
    adjacency: List[Dict[int, Set[int]]]
    neighbor_lists: List[Dict[int, List[int]]]

    def __len__(self) -> int:
        return len(self.adjacency)

    def neighbors(self, t: int, user: int) -> List[int]:
        """Vizinhos (truncados) do usuário no bucket t"""
        return self.neighbor_lists[t].get(user, [])

    def edge_set(self, t: int) -> Set[Tuple[int, int]]:
        return {(u, v) for u, nbrs in self.adjacency[t].items() for v in nbrs}

    def padded(self, buckets: Sequence[int], users: Sequence[int],
               null_index: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Índices de vizinhos com preenchimento para processamento em lote

        Usuários sem vizinhos recebem um único token nulo válido.

        Args:
            buckets (Sequence[int]): Bucket de cada linha
            users (Sequence[int]): Usuário de cada linha
            null_index (int): Índice do token nulo na tabela de vizinhos

        Returns:
            Tuple[np.ndarray, np.ndarray]: (índices [B, L], máscara booleana [B, L])
        """
        lists = [self.neighbors(int(t), int(u)) for t, u in zip(buckets, users)]
        width = max([len(x) for x in lists] + [1])
        index = np.full((len(lists), width), null_index, dtype=np.int64)
        mask = np.zeros((len(lists), width), dtype=bool)
        for row, nbrs in enumerate(lists):
            if nbrs:
                index[row, :len(nbrs)] = nbrs
                mask[row, :len(nbrs)] = True
            else:
                mask[row, 0] = True
        return index, mask


@dataclass
class LoggedDataset:
    """Conjunto D de trajetórias logadas com as séries exógenas por bucket"""
    user_records: List[List[InteractionRecord]]
    popularity: PopularitySeries
    social: SocialGraphSeries
    n_users: int
    n_items: int
    boundaries: List[int]
    start: int
    bucket_width: int
    edges: List[TrustEdge] = field(default_factory=list)
    id_map: IdMap = field(default_factory=IdMap)
    smoothing: float = 1.0
    max_neighbors: int = 50
    undirected: bool = True

    def __post_init__(self):
        if len(self.user_records) != self.n_users:
            raise DataIngestError(
                f"esperadas {self.n_users} listas de usuário, recebidas {len(self.user_records)}"
            )
        for user, records in enumerate(self.user_records):
            stamps = [r.timestamp for r in records]
            if stamps != sorted(stamps):
                raise DataIngestError(f"registros do usuário {user} fora de ordem temporal")
            for r in records:
                if r.user_id != user or r.item_id >= self.n_items:
                    raise DataIngestError(f"registro com id fora da faixa: {r}")

    @property
    def n_buckets(self) -> int:
        return len(self.boundaries)

    @property
    def last_bucket(self) -> int:
        return self.n_buckets - 1

    @property
    def n_records(self) -> int:
        return sum(len(r) for r in self.user_records)

    def bucket_of(self, timestamp: int) -> int:
        index = (int(timestamp) - self.start) // self.bucket_width
        return int(min(max(index, 0), self.n_buckets - 1))

    def records(self) -> List[InteractionRecord]:
        return [r for records in self.user_records for r in records]

    def pairs(self) -> List[Tuple[int, int]]:
        """Pares consecutivos (usuário, t) com t >= 1 usados pela ELBO"""
        return [(u, t) for u, records in enumerate(self.user_records) for t in range(1, len(records))]

    def with_records(self, user_records: List[List[InteractionRecord]]) -> "LoggedDataset":
        """Cópia com outras trajetórias e as mesmas séries exógenas"""
        return replace(self, user_records=user_records)


# ----------------------------------------------------------------------
# Leitura de arquivos
# ----------------------------------------------------------------------
def _read_csv(path: str, required: Sequence[str]) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataIngestError(f"Arquivo não encontrado: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(f"linha malformada em {path}: {e}", int(match.group(1)) if match else None)
    except pd.errors.EmptyDataError:
        raise ParseError(f"arquivo vazio: {path}", 1)
    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    missing = [c for c in required if c not in columns]
    if missing:
        raise ParseError(f"cabeçalho sem as colunas {missing} em {path}", 1)
    return frame


def _numeric_column(frame: pd.DataFrame, column: str, integer: bool) -> np.ndarray:
    raw = frame[column].replace("", np.nan)
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna().to_numpy()
    if integer:
        bad |= ~bad & (values.fillna(0) % 1 != 0).to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        # +2: cabeçalho na linha 1 e linhas numeradas a partir de 1
        raise ParseError(f"valor inválido '{frame[column].iloc[row]}' na coluna '{column}'", row + 2)
    return values.to_numpy(dtype=np.float64)


def parse_interactions(path: str, threshold: float = 4.0,
                       id_map: Optional[IdMap] = None) -> Tuple[List[InteractionRecord], IdMap]:
    """
    Lê um CSV `user,item,rating,timestamp` e binariza as notas

    Args:
        path (str): Caminho do CSV
        threshold (float): Nota mínima para feedback positivo
        id_map (IdMap, optional): Mapeamento existente (estendido com ids novos)

    Returns:
        Tuple[List[InteractionRecord], IdMap]: Registros na ordem do arquivo e o mapeamento
    """
    frame = _read_csv(path, INTERACTION_COLUMNS)
    users = _numeric_column(frame, "user", integer=True).astype(np.int64)
    items = _numeric_column(frame, "item", integer=True).astype(np.int64)
    ratings = _numeric_column(frame, "rating", integer=False)
    stamps = _numeric_column(frame, "timestamp", integer=True).astype(np.int64)

    for column, values in (("user", users), ("item", items)):
        if len(values) and values.min() < 0:
            row = int(np.argmin(values))
            raise ParseError(f"id negativo na coluna '{column}'", row + 2)

    id_map = id_map if id_map is not None else IdMap()
    IdMap._extend(id_map.users, users.tolist())
    IdMap._extend(id_map.items, items.tolist())

    records = [
        InteractionRecord(id_map.users[int(u)], id_map.items[int(i)], int(r >= threshold), int(t))
        for u, i, r, t in zip(users, items, ratings, stamps)
    ]
    return records, id_map


def parse_trust(path: str, id_map: IdMap) -> List[TrustEdge]:
    """
    Lê um CSV `truster,trustee[,timestamp]`

    Usuários ainda desconhecidos são acrescentados ao mapeamento; laços são descartados.

    Args:
        path (str): Caminho do CSV
        id_map (IdMap): Mapeamento de ids (modificado no lugar)

    Returns:
        List[TrustEdge]: Arestas com ids densos
    """
    frame = _read_csv(path, TRUST_COLUMNS)
    trusters = _numeric_column(frame, "truster", integer=True).astype(np.int64)
    trustees = _numeric_column(frame, "trustee", integer=True).astype(np.int64)
    if "timestamp" in frame.columns:
        stamps = _numeric_column(frame, "timestamp", integer=True).astype(np.int64)
    else:
        stamps = np.zeros(len(frame), dtype=np.int64)

    IdMap._extend(id_map.users, trusters.tolist() + trustees.tolist())
    return [
        TrustEdge(id_map.users[int(a)], id_map.users[int(b)], int(t))
        for a, b, t in zip(trusters, trustees, stamps) if a != b
    ]


# ----------------------------------------------------------------------
# Séries por bucket
# ----------------------------------------------------------------------
def compute_popularity(records: Sequence[InteractionRecord], bucket_width: int,
                       smoothing: float = 1.0, n_items: Optional[int] = None,
                       start: Optional[int] = None, n_buckets: Optional[int] = None) -> PopularitySeries:
    """
    Popularidade suavizada por bucket

    z_t[i] = (contagem de i no bucket t + ε) / (total do bucket + ε·|itens|);
    um bucket vazio sem suavização vira o vetor uniforme.

    Args:
        records (Sequence[InteractionRecord]): Interações
        bucket_width (int): Largura do bucket em segundos
        smoothing (float): ε de Laplace
        n_items (int, optional): Número de itens (padrão: maior id + 1)
        start (int, optional): Início do primeiro bucket (padrão: menor timestamp)
        n_buckets (int, optional): Número de buckets (padrão: cobre todos os registros)

    Returns:
        PopularitySeries: Matriz [T, M]
    """
    if bucket_width <= 0:
        raise ContractError(f"bucket_width deve ser positivo, recebido {bucket_width}")
    stamps = np.array([r.timestamp for r in records], dtype=np.int64)
    items = np.array([r.item_id for r in records], dtype=np.int64)
    if n_items is None:
        n_items = int(items.max()) + 1 if len(items) else 1
    if start is None:
        start = int(stamps.min()) if len(stamps) else 0
    if n_buckets is None:
        n_buckets = int((stamps.max() - start) // bucket_width) + 1 if len(stamps) else 1

    counts = np.zeros((n_buckets, n_items))
    if len(stamps):
        buckets = np.clip((stamps - start) // bucket_width, 0, n_buckets - 1)
        np.add.at(counts, (buckets, items), 1.0)
    denominators = counts.sum(axis=1, keepdims=True) + smoothing * n_items
    uniform = np.full_like(counts, 1.0 / n_items)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(denominators > 0, (counts + smoothing) / denominators, uniform)
    return PopularitySeries(buckets=z)


def snapshot_graph(edges: Sequence[TrustEdge], boundaries: Sequence[int], n_users: int,
                   undirected: bool = True, max_neighbors: int = 50) -> SocialGraphSeries:
    """
    Instantâneos cumulativos do grafo: o bucket t contém toda aresta com timestamp <= fim do bucket

    Args:
        edges (Sequence[TrustEdge]): Arestas de confiança
        boundaries (Sequence[int]): Fim (inclusivo) de cada bucket, em ordem
        n_users (int): Número de usuários
        undirected (bool): Simetriza as arestas
        max_neighbors (int): Limite de vizinhos por usuário (maiores graus primeiro)

    Returns:
        SocialGraphSeries: Adjacências completas e listas truncadas por bucket
    """
    if list(boundaries) != sorted(boundaries):
        raise ContractError("boundaries devem estar ordenados")
    ordered = sorted(edges, key=lambda e: e.timestamp)
    adjacency: Dict[int, Set[int]] = {}
    cursor = 0
    snapshots, neighbor_lists = [], []
    for end in boundaries:
        while cursor < len(ordered) and ordered[cursor].timestamp <= end:
            edge = ordered[cursor]
            if edge.truster < n_users and edge.trustee < n_users:
                adjacency.setdefault(edge.truster, set()).add(edge.trustee)
                if undirected:
                    adjacency.setdefault(edge.trustee, set()).add(edge.truster)
            cursor += 1
        snapshot = {u: set(nbrs) for u, nbrs in adjacency.items()}
        degree = {u: len(nbrs) for u, nbrs in snapshot.items()}
        neighbor_lists.append({
            u: sorted(nbrs, key=lambda v: (-degree.get(v, 0), v))[:max_neighbors]
            for u, nbrs in snapshot.items()
        })
        snapshots.append(snapshot)
    return SocialGraphSeries(adjacency=snapshots, neighbor_lists=neighbor_lists)


# ----------------------------------------------------------------------
# Montagem e divisão do dataset
# ----------------------------------------------------------------------
def build_dataset(records: Sequence[InteractionRecord], edges: Sequence[TrustEdge],
                  id_map: Optional[IdMap] = None, n_users: Optional[int] = None,
                  n_items: Optional[int] = None, n_buckets: int = 12,
                  bucket_width: Optional[int] = None, start: Optional[int] = None,
                  smoothing: float = 1.0, max_neighbors: int = 50,
                  undirected: bool = True) -> LoggedDataset:
    """
    Monta o dataset D: trajetórias por usuário, buckets, z_t e G_t

    A largura padrão do bucket é o intervalo total dos timestamps dividido por
    `n_buckets`.

    Returns:
        LoggedDataset: Dataset pronto para treino
    """
    if not records:
        raise DataIngestError("dataset sem interações")
    id_map = id_map if id_map is not None else IdMap()
    n_users = n_users if n_users is not None else max(
        [len(id_map.users), max(r.user_id for r in records) + 1]
        + [max(e.truster, e.trustee) + 1 for e in edges]
    )
    n_items = n_items if n_items is not None else max(len(id_map.items), max(r.item_id for r in records) + 1)

    stamps = [r.timestamp for r in records]
    start = start if start is not None else min(stamps)
    span = max(stamps) - start + 1
    width = bucket_width or max(1, math.ceil(span / n_buckets))
    bucket_count = max(1, math.ceil(span / width))
    if bucket_width:
        # largura explícita: pelo menos n_buckets, mesmo com buckets finais vazios
        bucket_count = max(bucket_count, n_buckets)
    boundaries = [start + (k + 1) * width - 1 for k in range(bucket_count)]

    user_records: List[List[InteractionRecord]] = [[] for _ in range(n_users)]
    for record in records:
        user_records[record.user_id].append(record)
    for lst in user_records:
        lst.sort(key=lambda r: r.timestamp)

    popularity = compute_popularity(records, width, smoothing, n_items, start, bucket_count)
    social = snapshot_graph(edges, boundaries, n_users, undirected, max_neighbors)
    return LoggedDataset(
        user_records=user_records, popularity=popularity, social=social,
        n_users=n_users, n_items=n_items, boundaries=boundaries, start=start,
        bucket_width=width, edges=list(edges), id_map=id_map, smoothing=smoothing,
        max_neighbors=max_neighbors, undirected=undirected,
    )


def split_train_test(dataset: LoggedDataset, ratio: float = 0.8) -> Tuple[LoggedDataset, LoggedDataset]:
    """
    Divisão temporal por usuário: os primeiros ⌊ratio·n⌋ registros vão para treino

    Usuários com menos de 2 registros ficam inteiros no treino. As séries de
    buckets são compartilhadas.

    Returns:
        Tuple[LoggedDataset, LoggedDataset]: (treino, teste)
    """
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"ratio deve estar em (0, 1), recebido {ratio}")
    train, test = [], []
    for records in dataset.user_records:
        cut = len(records) if len(records) < 2 else int(math.floor(ratio * len(records)))
        train.append(list(records[:cut]))
        test.append(list(records[cut:]))
    return dataset.with_records(train), dataset.with_records(test)


# ----------------------------------------------------------------------
# Formato canônico em disco
# ----------------------------------------------------------------------
def save_dataset(dataset: LoggedDataset, directory: str) -> str:
    """
    Grava o dataset canônico: interactions.csv, trust.csv e meta.json

    As notas são gravadas já binarizadas (limiar 1 na releitura) e com ids densos.

    Returns:
        str: Diretório gravado
    """
    os.makedirs(directory, exist_ok=True)
    records = dataset.records()
    pd.DataFrame(
        [(r.user_id, r.item_id, r.feedback, r.timestamp) for r in records],
        columns=INTERACTION_COLUMNS,
    ).to_csv(os.path.join(directory, "interactions.csv"), index=False)
    pd.DataFrame(
        [(e.truster, e.trustee, e.timestamp) for e in dataset.edges],
        columns=TRUST_COLUMNS + ["timestamp"],
    ).to_csv(os.path.join(directory, "trust.csv"), index=False)

    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_records": len(records),
        "start": dataset.start,
        "bucket_width": dataset.bucket_width,
        "boundaries": list(dataset.boundaries),
        "smoothing": dataset.smoothing,
        "max_neighbors": dataset.max_neighbors,
        "undirected": dataset.undirected,
        "binarized": True,
        "id_map": dataset.id_map.to_dict(),
    }
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    return directory


def load_dataset(directory: str) -> LoggedDataset:
    """
    Lê um dataset canônico gravado por `save_dataset`

    Returns:
        LoggedDataset: Dataset idêntico ao gravado
    """
    meta_path = os.path.join(directory, "meta.json")
    if not os.path.exists(meta_path):
        raise DataIngestError(f"meta.json não encontrado em {directory}")
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("format") != DATASET_FORMAT or meta.get("version") != DATASET_VERSION:
        raise DataIngestError(f"formato de dataset não suportado em {directory}")

    identity = IdMap.identity(meta["n_users"], meta["n_items"])
    records, _ = parse_interactions(os.path.join(directory, "interactions.csv"), threshold=1.0, id_map=identity)
    edges = parse_trust(os.path.join(directory, "trust.csv"), identity)
    boundaries = meta["boundaries"]
    dataset = build_dataset(
        records, edges, id_map=IdMap.from_dict(meta["id_map"]),
        n_users=meta["n_users"], n_items=meta["n_items"], n_buckets=len(boundaries),
        bucket_width=meta["bucket_width"], start=meta["start"], smoothing=meta["smoothing"],
        max_neighbors=meta["max_neighbors"], undirected=meta["undirected"],
    ) if records else None
    if dataset is None:
        raise DataIngestError(f"dataset vazio em {directory}")
    if dataset.boundaries != boundaries:
        raise DataIngestError("buckets relidos diferem do meta.json")
    return dataset


# ----------------------------------------------------------------------
# Dataset sintético embutido
# ----------------------------------------------------------------------
def generate_logged_dataset(n_users: int = 50, n_items: int = 100, n_buckets: int = 12,
                            records_per_user: int = 40, latent_dim: int = 8,
                            communities: int = 5, seed: int = 0,
                            bucket_width: int = 1000) -> LoggedDataset:
    """
    Gera um log sintético com viés de popularidade e influência social

    Usuários pertencem a comunidades (preferências parecidas e arestas de
    confiança internas, criadas ao longo do tempo); a exposição aos itens segue
    uma popularidade que deriva entre buckets; o feedback é Bernoulli de
    σ(uᵀv) mais um efeito de popularidade.

    Returns:
        LoggedDataset: Dataset com ids densos idênticos aos originais
    """
    rng = np.random.default_rng(seed)
    community = rng.integers(0, communities, size=n_users)
    centers = rng.normal(0.0, 1.0, size=(communities, latent_dim))
    user_vecs = (centers[community] + 0.6 * rng.normal(size=(n_users, latent_dim))) / math.sqrt(latent_dim)
    item_vecs = rng.normal(0.0, 1.5, size=(n_items, latent_dim)) / math.sqrt(latent_dim) * 2.0
    pop_logits = rng.normal(0.0, 1.0, size=n_items)

    records: List[InteractionRecord] = []
    per_bucket = max(1, records_per_user // n_buckets)
    for t in range(n_buckets):
        pop_logits = pop_logits + rng.normal(0.0, 0.5, size=n_items)
        exposure = np.exp(pop_logits - pop_logits.max())
        exposure /= exposure.sum()
        for u in range(n_users):
            items = rng.choice(n_items, size=per_bucket, replace=False, p=exposure)
            offsets = np.sort(rng.integers(0, bucket_width, size=per_bucket))
            logits = item_vecs[items] @ user_vecs[u] * 2.0 + 0.3 * (pop_logits[items] - pop_logits.mean())
            feedback = rng.random(per_bucket) < expit(logits)
            for item, off, y in zip(items, offsets, feedback):
                records.append(InteractionRecord(u, int(item), int(y), t * bucket_width + int(off)))

    edges: List[TrustEdge] = []
    span = n_buckets * bucket_width
    for u in range(n_users):
        peers = np.flatnonzero((community == community[u]) & (np.arange(n_users) != u))
        if len(peers) == 0:
            continue
        for v in rng.choice(peers, size=min(3, len(peers)), replace=False):
            edges.append(TrustEdge(u, int(v), int(rng.integers(0, span))))

    return build_dataset(
        records, edges, id_map=IdMap.identity(n_users, n_items), n_users=n_users,
        n_items=n_items, n_buckets=n_buckets, bucket_width=bucket_width, start=0,
    )
