"""
Módulo de treinamento do sistema SimuRec

Orquestra o ciclo completo: pré-treino do modelo de mundo, e então, a cada
volta, coleta de trajetórias simuladas, treino da rede Q e ajuste fino do modelo
de mundo sobre as trajetórias coletadas.
"""
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import TrainConfig
from .data import InteractionRecord, LoggedDataset
from .errors import SimuRecError
from .layers import Adam
from .logger import LoggerManager, quiet_logger
from .policy import (VARIANT_CONTRASTIVE, VARIANT_NAIVE, VARIANT_SEQUENCE, EpsilonSchedule,
                     QPolicy, ReplayBuffer, Transition, td_loss)
from .utils import FileUtils, ReportUtils, SeedUtils
from .world_model import UserState, WorldModel, last_step_input, make_input

# Variante de avaliação -> variante da rede Q (None: sem modelo de mundo ou sem treino)
TRAINED_VARIANTS = {
    "dmir": VARIANT_CONTRASTIVE,
    "dqn-naive-neg": VARIANT_NAIVE,
    "dqn+wm": VARIANT_SEQUENCE,
    "dmir-d": VARIANT_CONTRASTIVE,
}

PHASE_PRETRAIN = "pretrain"
PHASE_COLLECT = "collect"
PHASE_POLICY = "policy"
PHASE_FINETUNE = "finetune"


class TrainingError(SimuRecError):
    """Exceção personalizada para erros de treinamento"""
    pass


class DivergenceError(TrainingError):
    """Perda não finita durante a otimização"""
    pass


@dataclass
class RunManifest:
    """Registro reprodutível de uma execução de treinamento"""
    config: Dict[str, Any]
    seed: int
    variant: str = "dmir"
    phases: List[str] = field(default_factory=list)
    curves: Dict[str, List[float]] = field(default_factory=dict)
    loop_rewards: List[float] = field(default_factory=list)
    checkpoints: Dict[str, str] = field(default_factory=dict)
    checksums: Dict[str, str] = field(default_factory=dict)
    loops: int = 0
    converged: bool = False
    status: str = "running"
    error: Optional[str] = None
    summary: Dict[str, Any] = field(default_factory=dict)

    def record(self, key: str, values: Sequence[float]) -> None:
        self.curves.setdefault(key, []).extend(float(v) for v in values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def curves_frame(self) -> pd.DataFrame:
        rows = [(key, step, value) for key, values in self.curves.items() for step, value in enumerate(values)]
        return pd.DataFrame(rows, columns=["curve", "step", "value"])

    def write(self, directory: str) -> str:
        """Grava manifest.json e curves.csv"""
        os.makedirs(directory, exist_ok=True)
        self.curves_frame().to_csv(os.path.join(directory, "curves.csv"), index=False)
        return FileUtils.write_json(os.path.join(directory, "manifest.json"), self.to_dict())


def logged_transitions(dataset: LoggedDataset, memory_size: int = 20) -> List[Transition]:
    """
    Transições dos próprios logs (recompensa = feedback observado)

    Returns:
        List[Transition]: Uma transição por registro, em ordem por usuário
    """
    transitions = []
    for user, records in enumerate(dataset.user_records):
        history: Tuple[Tuple[int, int], ...] = ()
        for k, record in enumerate(records):
            following = (history + ((record.item_id, record.feedback),))[-memory_size:]
            transitions.append(Transition(
                user=user, history=history, action=record.item_id, reward=float(record.feedback),
                feedback=record.feedback, next_history=following, done=k == len(records) - 1,
            ))
            history = following
    return transitions


def simulated_dataset(dataset: LoggedDataset, transitions: Sequence[Transition]) -> Tuple[LoggedDataset, List[Tuple[int, int]]]:
    """
    D_s: trajetórias simuladas anexadas ao histórico logado de cada usuário

    Os registros simulados recebem o instante final do último bucket.

    Returns:
        Tuple: (dataset estendido, pares (usuário, t) que pertencem às trajetórias simuladas)
    """
    stamp = dataset.boundaries[-1]
    extended = [list(records) for records in dataset.user_records]
    for t in transitions:
        extended[t.user].append(InteractionRecord(t.user, t.action, t.feedback, stamp))
    pairs = [
        (u, k)
        for u, records in enumerate(extended)
        for k in range(max(len(dataset.user_records[u]), 1), len(records))
    ]
    return dataset.with_records(extended), pairs


class TrainerManager:
    """Gerenciador do treinamento baseado em modelo"""

    def __init__(self, config: TrainConfig, logger: Optional[LoggerManager] = None,
                 progress: bool = True):
        """
        Inicializa o treinador

        Args:
            config (TrainConfig): Hiperparâmetros
            logger (LoggerManager, optional): Logger (padrão: silencioso)
            progress (bool): Exibe barras de progresso
        """
        self.config = config
        self.logger = logger or quiet_logger()
        self.progress = progress
        self.world_model: Optional[WorldModel] = None
        self.policy: Optional[QPolicy] = None
        self.target: Optional[QPolicy] = None
        self.buffer = ReplayBuffer(config.buffer_size, seed=SeedUtils.derive_seed(config.seed, 11))
        self.policy_steps = 0
        self.target_syncs: List[int] = []
        self._wm_optimizer: Optional[Adam] = None
        self._q_optimizer: Optional[Adam] = None

    # ------------------------------------------------------------------
    # Construção
    # ------------------------------------------------------------------
    def build_world_model(self, dataset: LoggedDataset) -> WorldModel:
        cfg = self.config
        self.world_model = WorldModel(dataset.n_users, dataset.n_items, cfg.dim, cfg.droprate, cfg.seed)
        self._wm_optimizer = Adam(self.world_model.parameters(), cfg.lr,
                                  weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
        return self.world_model

    def build_policy(self, dataset: LoggedDataset, variant: str = VARIANT_CONTRASTIVE) -> QPolicy:
        cfg = self.config
        self.policy = QPolicy(dataset.n_items, cfg.dim, cfg.memory_size, variant, cfg.seed)
        self.policy.known_items = {u: {r.item_id for r in records} for u, records in enumerate(dataset.user_records)}
        self.target = self.policy.clone()
        self._q_optimizer = Adam(self.policy.parameters(), cfg.lr,
                                 weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
        self.policy_steps = 0
        self.target_syncs = []
        return self.policy

    def _bar(self, total: int, desc: str):
        return tqdm(range(total), desc=desc, disable=not self.progress, leave=False)

    # ------------------------------------------------------------------
    # Modelo de mundo
    # ------------------------------------------------------------------
    def _elbo_steps(self, dataset: LoggedDataset, pairs: Sequence[Tuple[int, int]],
                    steps: int, phase: str, rng: np.random.Generator) -> List[float]:
        model, optimizer = self.world_model, self._wm_optimizer
        curve: List[float] = []
        if steps == 0:
            return curve
        if not pairs:
            raise TrainingError(f"{phase}: nenhum par consecutivo disponível para a ELBO")
        states = model.fold_states(dataset)
        model.train()
        for step in self._bar(steps, f"ELBO ({phase})"):
            if step > 0 and step % self.config.state_refresh == 0:
                states = model.fold_states(dataset)
                self.logger.debug(f"{phase}: estados em cache recalculados no passo {step}")
            index = rng.choice(len(pairs), size=min(self.config.batch_size, len(pairs)), replace=False)
            batch = model.pair_batch(dataset, [pairs[i] for i in index], states)
            terms = model.elbo_loss(batch, rng)
            if not terms.loss.is_finite():
                diagnostics = {k: v for k, v in terms.as_dict().items()}
                raise DivergenceError(f"{phase}: perda não finita no passo {step}: {diagnostics}")
            optimizer.zero_grad()
            terms.loss.backward()
            optimizer.step()
            curve.append(terms.loss.item())
        model.eval()
        self.logger.metrics(f"{phase}:", {"steps": steps, "loss_inicial": curve[0], "loss_final": curve[-1]})
        return curve

    def pretrain_world_model(self, dataset: LoggedDataset, steps: Optional[int] = None) -> List[float]:
        """
        K_c passos da ELBO sobre pares consecutivos do dataset logado

        Returns:
            List[float]: Curva de perda
        """
        if dataset.n_records == 0:
            raise TrainingError("dataset vazio: impossível pré-treinar o modelo de mundo")
        if self.world_model is None:
            self.build_world_model(dataset)
        self.logger.phase(PHASE_PRETRAIN)
        rng = SeedUtils.make_rng(self.config.seed, 1)
        steps = self.config.k_c if steps is None else steps
        return self._elbo_steps(dataset, dataset.pairs(), steps, PHASE_PRETRAIN, rng)

    def finetune_world_model(self, dataset: LoggedDataset, transitions: Sequence[Transition],
                             loop: int = 0) -> List[float]:
        """
        K_c passos adicionais da ELBO sobre as trajetórias simuladas D_s

        Returns:
            List[float]: Curva de perda
        """
        if not transitions:
            raise TrainingError("D_s vazio: nada para ajuste fino")
        self.logger.phase(PHASE_FINETUNE)
        extended, pairs = simulated_dataset(dataset, transitions)
        rng = SeedUtils.make_rng(self.config.seed, 4, loop)
        return self._elbo_steps(extended, pairs, self.config.k_c, PHASE_FINETUNE, rng)

    # ------------------------------------------------------------------
    # Coleta
    # ------------------------------------------------------------------
    def collect_trajectories(self, dataset: LoggedDataset, users: Sequence[int], horizon: int,
                             epsilon: float, rng: np.random.Generator) -> List[Transition]:
        """
        Um episódio por usuário contra o modelo de mundo

        A política escolhe a_t (ε-greedy); a recompensa é a estimativa corrigida
        de P(y_t | do(a_t)); o feedback binário amostrado dela atualiza o
        histórico. Ambos ficam registrados em cada transição.

        Returns:
            List[Transition]: usuários × horizonte transições, passo a passo
        """
        self.logger.phase(PHASE_COLLECT)
        model, policy, cfg = self.world_model, self.policy, self.config
        users = list(users)
        if horizon == 0 or not users:
            return []
        last_bucket = dataset.last_bucket
        folded = model.fold_states(dataset)
        state = np.stack([folded[u][-1] for u in users])
        previous = last_step_input(dataset, users)
        histories = [tuple((r.item_id, r.feedback) for r in dataset.user_records[u])[-cfg.memory_size:] for u in users]

        transitions: List[Transition] = []
        for step in range(horizon):
            o = policy.encode(histories, users).data
            actions = policy.select_actions(o, epsilon, rng)
            proposed = make_input(dataset, users, np.full(len(users), last_bucket), actions, np.zeros(len(users)))
            reward = model.debiased_feedback(state, previous, proposed, cfg.n_samples, rng)
            feedback = (rng.random(len(users)) < reward).astype(np.int64)
            proposed.feedback = feedback.astype(np.float64)
            with model.inference():
                state = model.user_state_update(UserState(state, step), proposed).vector.data
            previous = proposed
            for row, user in enumerate(users):
                following = (histories[row] + ((int(actions[row]), int(feedback[row])),))[-cfg.memory_size:]
                value = float(reward[row]) if cfg.reward_mode == "probability" else float(feedback[row])
                transitions.append(Transition(
                    user=user, history=histories[row], action=int(actions[row]), reward=value,
                    feedback=int(feedback[row]), next_history=following, done=step == horizon - 1,
                ))
                histories[row] = following
        return transitions

    # ------------------------------------------------------------------
    # Política
    # ------------------------------------------------------------------
    def train_policy(self, buffer: Optional[ReplayBuffer] = None, steps: Optional[int] = None,
                     update_size: Optional[int] = None) -> List[float]:
        """
        K_q passos TD com sincronização da rede alvo a cada `target_update` passos

        Com o buffer abaixo de `update_size`, nenhum passo é dado.

        Returns:
            List[float]: Curva de perda TD
        """
        self.logger.phase(PHASE_POLICY)
        cfg = self.config
        buffer = buffer if buffer is not None else self.buffer
        update_size = cfg.update_size if update_size is None else update_size
        if len(buffer) < update_size:
            self.logger.info(f"Buffer com {len(buffer)} transições (< {update_size}): aguardando mais dados")
            return []
        steps = cfg.k_q if steps is None else steps
        curve: List[float] = []
        for _ in self._bar(steps, "TD"):
            batch = buffer.sample(cfg.batch_size)
            loss = td_loss(self.policy, self.target, batch, cfg.gamma, cfg.double_dqn)
            if not loss.is_finite():
                raise DivergenceError(f"perda TD não finita no passo {self.policy_steps}")
            self._q_optimizer.zero_grad()
            loss.backward()
            self._q_optimizer.step()
            self.policy_steps += 1
            if self.policy_steps % cfg.target_update == 0:
                self.target.sync_from(self.policy)
                self.target_syncs.append(self.policy_steps)
                self.logger.debug(f"Rede alvo sincronizada no passo {self.policy_steps}")
            curve.append(loss.item())
        if self.policy.clamped:
            self.logger.warning(f"Expoente de Q limitado em {self.policy.clamped} avaliações")
        if curve:
            self.logger.metrics("policy:", {"steps": len(curve), "loss_final": curve[-1]})
        return curve

    # ------------------------------------------------------------------
    # Ciclo completo
    # ------------------------------------------------------------------
    def _converged(self, rewards: List[float]) -> bool:
        patience, tolerance = self.config.convergence_patience, self.config.convergence_tolerance
        if len(rewards) < patience + 1:
            return False
        recent = rewards[-(patience + 1):]
        changes = [abs(b - a) / max(abs(a), 1e-12) for a, b in zip(recent, recent[1:])]
        return all(c < tolerance for c in changes)

    def run(self, dataset: LoggedDataset, out_dir: Optional[str] = None,
            variant: str = "dmir", config_snapshot: Optional[Dict[str, Any]] = None) -> RunManifest:
        """
        Executa pré-treino e as voltas (coleta → política → ajuste fino)

        Para ao atingir `episodes` voltas ou quando a recompensa média por
        episódio varia menos que `convergence_tolerance` por
        `convergence_patience` voltas seguidas.

        Returns:
            RunManifest: Manifesto (também gravado em `out_dir`, se informado)
        """
        cfg = self.config
        manifest = RunManifest(config=config_snapshot or {"training": asdict(cfg)}, seed=cfg.seed, variant=variant)
        first_phase = len(self.logger.phases)
        start = datetime.now()
        started = time.perf_counter()
        try:
            self.build_world_model(dataset)
            self.build_policy(dataset, TRAINED_VARIANTS.get(variant, VARIANT_CONTRASTIVE))
            manifest.record(PHASE_PRETRAIN, self.pretrain_world_model(dataset))
            schedule = EpsilonSchedule(cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_decay_fraction, cfg.episodes)
            users = list(range(dataset.n_users))
            for loop in range(cfg.episodes):
                rng = SeedUtils.make_rng(cfg.seed, 2, loop)
                epsilon = schedule.value(loop)
                simulated = self.collect_trajectories(dataset, users, cfg.horizon, epsilon, rng)
                self.buffer.extend(simulated)
                mean_reward = float(np.sum([t.reward for t in simulated]) / max(len(users), 1))
                manifest.loop_rewards.append(mean_reward)
                self.logger.metrics(f"Volta {loop + 1}/{cfg.episodes}:",
                                    {"epsilon": epsilon, "recompensa_media": mean_reward, "buffer": len(self.buffer)})
                manifest.record(PHASE_POLICY, self.train_policy())
                if simulated:
                    manifest.record(PHASE_FINETUNE, self.finetune_world_model(dataset, simulated, loop))
                manifest.loops = loop + 1
                if self._converged(manifest.loop_rewards):
                    manifest.converged = True
                    self.logger.info(f"Convergência declarada após {loop + 1} voltas")
                    break
            manifest.status = "completed"
        except SimuRecError as e:
            manifest.status = "failed"
            manifest.error = str(e)
            self.logger.error(f"Erro no treinamento: {e}")
            raise TrainingError(f"Falha no treinamento: {e}") from e
        finally:
            manifest.phases = self.logger.phases[first_phase:]
            manifest.summary = ReportUtils.generate_execution_summary(
                start, datetime.now(), manifest.loops, cfg.episodes
            )
            manifest.summary["wall_clock_seconds"] = time.perf_counter() - started
            if out_dir:
                self._write_outputs(manifest, out_dir)
        return manifest

    def train_variant(self, variant: str, dataset: LoggedDataset, out_dir: Optional[str] = None,
                      config_snapshot: Optional[Dict[str, Any]] = None) -> Tuple[Optional[QPolicy], Optional[RunManifest]]:
        """
        Treina a política de uma variante de avaliação

        `dmir-d` dispensa o modelo de mundo e treina a rede Q direto sobre as
        transições logadas; `random` não treina nada.

        Returns:
            Tuple: (política treinada ou None, manifesto ou None)
        """
        if variant == "random":
            return None, None
        if variant not in TRAINED_VARIANTS:
            raise TrainingError(f"variante desconhecida: {variant}")
        if variant != "dmir-d":
            manifest = self.run(dataset, out_dir, variant, config_snapshot)
            return self.policy, manifest

        cfg = self.config
        manifest = RunManifest(config=config_snapshot or {"training": asdict(cfg)}, seed=cfg.seed, variant=variant)
        first_phase = len(self.logger.phases)
        # dmir-d não usa modelo de mundo; descarta o de uma execução anterior
        self.world_model, self._wm_optimizer = None, None
        self.build_policy(dataset, VARIANT_CONTRASTIVE)
        logged =ReplayBuffer(max(cfg.buffer_size, 1), seed=SeedUtils.derive_seed(cfg.seed, 12))
        logged.extend(logged_transitions(dataset, cfg.memory_size))
        if len(logged) == 0:
            raise TrainingError("dataset sem transições logadas")
        for loop in range(cfg.episodes):
            manifest.record(PHASE_POLICY, self.train_policy(logged, update_size=min(cfg.update_size, len(logged))))
            manifest.loops = loop + 1
        manifest.status = "completed"
        manifest.phases = self.logger.phases[first_phase:]
        if out_dir:
            self._write_outputs(manifest, out_dir)
        return self.policy, manifest

    def _write_outputs(self, manifest: RunManifest, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        if self.world_model is not None:
            manifest.checkpoints["world_model"] = self.world_model.save(os.path.join(out_dir, "world_model.ckpt"))
        if self.policy is not None:
            manifest.checkpoints["policy"] = self.policy.save(os.path.join(out_dir, "policy.ckpt"))
        manifest.checksums = {name: FileUtils.generate_checksum(path) for name, path in manifest.checkpoints.items()}
        path = manifest.write(out_dir)
        self.logger.info(f"Manifesto gravado em {path}")

