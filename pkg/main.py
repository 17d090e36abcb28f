#!/usr/bin/env python3
"""
SimuRec - Recomendação Interativa Baseada em Modelo
Versão: 1.0.0

Sistema para treinar e avaliar recomendadores interativos com:
- Modelo de mundo causal com correção de viés de popularidade
- Política Q contrastiva treinada em trajetórias simuladas
- Ambiente ground truth com decaimento de interesse
- Bancada sintética de identificabilidade
- Menu interativo e linha de comando
"""

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

try:
    from core import __version__
    from core.config import ConfigManager
    from core.data import (build_dataset, generate_logged_dataset, load_dataset, parse_interactions,
                           parse_trust, save_dataset, split_train_test)
    from core.environment import fit_ground_truth, load_environment, save_environment
    from core.errors import SimuRecError
    from core.evaluation import EvaluationManager, emit_report, format_report_table
    from core.ident_bench import BenchManager
    from core.logger import LoggerManager
    from core.trainer import TrainerManager
except ImportError as e:
    print(f"❌ Erro ao importar módulos: {e}")
    print("💡 Verifique se as dependências estão instaladas:")
    print("   pip install -r requirements.txt")
    sys.exit(1)


class SimuRecApp:
    """Ações do sistema, compartilhadas pela linha de comando e pelo menu"""

    def __init__(self, config_path: Optional[str] = None):
        """
        Inicializa a aplicação

        Args:
            config_path (str, optional): JSON de configuração; sem arquivo valem os padrões
        """
        if config_path is None and os.path.exists("config.json"):
            config_path = "config.json"
        self.config = ConfigManager(config_path)
        self.logger = LoggerManager(logs_path=self.config.get_logs_path(), level=self.config.get_log_level())

    # ------------------------------------------------------------------
    # Dados e ambiente
    # ------------------------------------------------------------------
    def load_training_data(self):
        """
        Dataset de treino conforme a seção `data`

        Um diretório canônico em `data.path` é lido; na falta dele, o dataset
        sintético embutido é gerado. A divisão temporal mantém a parte de treino.
        """
        cfg = self.config.get_data_config()
        if cfg.path:
            self.logger.info(f"Carregando dataset de {cfg.path}")
            dataset = load_dataset(cfg.path)
        else:
            self.logger.info(f"Gerando dataset sintético ({cfg.users} usuários, {cfg.items} itens, seed {cfg.seed})")
            dataset = generate_logged_dataset(n_users=cfg.users, n_items=cfg.items, seed=cfg.seed)
        train, _ = split_train_test(dataset, cfg.split_ratio)
        self.logger.metrics("Dataset:", {"usuarios": train.n_users, "itens": train.n_items,
                                         "registros": train.n_records, "buckets": train.n_buckets})
        return train

    def load_environment(self, dataset):
        """Ambiente salvo em `environment.path` ou ajustado agora sobre o treino"""
        cfg = self.config.get_env_config()
        if cfg.path:
            return load_environment(cfg.path)
        return fit_ground_truth(dataset, rank=cfg.rank, epochs=cfg.epochs, lr=cfg.lr,
                                negatives=cfg.negatives, l2=cfg.l2, seed=cfg.seed, alpha=cfg.alpha,
                                horizon=cfg.horizon, logger=self.logger)

    def make_data(self, out: str, users: int, items: int, seed: int) -> str:
        dataset = generate_logged_dataset(n_users=users, n_items=items, seed=seed)
        path = save_dataset(dataset, out)
        self.logger.info(f"✅ Dataset sintético gravado em {path} ({dataset.n_records} registros)")
        return path

    def ingest(self, interactions: str, trust: Optional[str], out: str, threshold: float) -> str:
        cfg = self.config.get_data_config()
        records, id_map = parse_interactions(interactions, threshold)
        edges = parse_trust(trust, id_map) if trust else []
        dataset = build_dataset(records, edges, id_map=id_map, n_buckets=cfg.n_buckets,
                                bucket_width=cfg.bucket_width, smoothing=cfg.smoothing,
                                max_neighbors=cfg.max_neighbors, undirected=cfg.undirected)
        path = save_dataset(dataset, out)
        self.logger.info(f"✅ Dataset canônico gravado em {path} ({dataset.n_users} usuários, "
                         f"{dataset.n_items} itens, {len(dataset.edges)} arestas)")
        return path

    def fit_env(self, data: str, out: str, rank: int, alpha: float, seed: int) -> str:
        cfg = self.config.get_env_config()
        train, _ = split_train_test(load_dataset(data), self.config.get_data_config().split_ratio)
        env = fit_ground_truth(train, rank=rank, epochs=cfg.epochs, lr=cfg.lr, negatives=cfg.negatives,
                               l2=cfg.l2, seed=seed, alpha=alpha, horizon=cfg.horizon, logger=self.logger)
        path = save_environment(env, out)
        self.logger.metrics("✅ Ambiente ajustado:", {k: v for k, v in env.fit_report.items() if isinstance(v, float)})
        return path

    # ------------------------------------------------------------------
    # Treino e avaliação
    # ------------------------------------------------------------------
    def pretrain(self, out: str) -> str:
        dataset = self.load_training_data()
        trainer = TrainerManager(self.config.get_train_config(), self.logger)
        curve = trainer.pretrain_world_model(dataset)
        os.makedirs(out, exist_ok=True)
        path = trainer.world_model.save(os.path.join(out, "world_model.ckpt"),
                                        {"loss_final": curve[-1] if curve else None})
        self.logger.info(f"✅ Modelo de mundo gravado em {path}")
        return path

    def train(self, out: str) -> str:
        dataset = self.load_training_data()
        trainer = TrainerManager(self.config.get_train_config(), self.logger)
        manifest = trainer.run(dataset, out, config_snapshot=self.config.snapshot())
        self.logger.info(f"✅ Treino concluído: {manifest.loops} voltas, convergiu={manifest.converged}")
        return os.path.join(out, "manifest.json")

    def evaluate(self, variants: List[str], seeds: Optional[int], ks: Optional[List[int]], out: str) -> str:
        dataset = self.load_training_data()
        env = self.load_environment(dataset)
        eval_config = self.config.get_eval_config()
        manager = EvaluationManager(self.config.get_train_config(), eval_config, self.logger)
        report = manager.run_eval(
            variants or eval_config.variants, env, dataset,
            seeds=list(range(seeds)) if seeds else None, ks=ks, out_dir=out,
        )
        paths = emit_report(report, out)
        print(format_report_table(report))
        self.logger.info(f"✅ Relatório gravado em {paths['json']}")
        return paths["json"]

    def ident_bench(self, out: str, n_u: Optional[int] = None, n_c: Optional[int] = None,
                    regimes: Optional[int] = None, seeds: Optional[int] = None) -> str:
        cfg = self.config.get_bench_config()
        overrides = {k: v for k, v in {"n_u": n_u, "n_c": n_c, "regimes": regimes, "seeds": seeds}.items()
                     if v is not None}
        cfg = replace(cfg, **overrides)
        result = BenchManager(cfg, self.logger).run(out)
        self.logger.metrics("✅ Bancada:", result["mean"])
        return os.path.join(out, "recovery.json")


class SimuRecMenu:
    """Menu interativo principal do SimuRec"""

    def __init__(self):
        """Inicializa o menu"""
        self.config_path = "config.json"
        self.app: Optional[SimuRecApp] = None

    def clear_screen(self):
        """Limpa a tela"""
        os.system('cls' if os.name == 'nt' else 'clear')

    def print_header(self):
        """Imprime cabeçalho do sistema"""
        print("\n" + "=" * 70)
        print(f"🚀 SimuRec - Recomendação Interativa Baseada em Modelo v{__version__}")
        print("   Modelo de mundo causal + política Q contrastiva")
        print("=" * 70)

    def print_main_menu(self):
        """Imprime menu principal"""
        print("\n📋 MENU PRINCIPAL")
        print("-" * 50)
        print("📦 DADOS E AMBIENTE:")
        print("  [1] - Gerar Dataset Sintético")
        print("  [2] - Importar Logs (CSV)")
        print("  [3] - Ajustar Ambiente Ground Truth")
        print()
        print("🧠 TREINAMENTO:")
        print("  [4] - Pré-treinar Modelo de Mundo")
        print("  [5] - Treinar Política (ciclo completo)")
        print()
        print("📊 AVALIAÇÃO:")
        print("  [6] - Avaliar Variantes")
        print("  [7] - Bancada de Identificabilidade")
        print()
        print("🔧 CONFIGURAÇÕES E LOGS:")
        print("  [8] - Ver Configuração Atual")
        print("  [9] - Ver Logs")
        print()
        print("  [0] - ❌ Sair")
        print("-" * 50)

    def wait_for_user(self):
        """Aguarda input do usuário"""
        print("\n" + "=" * 70)
        input("📌 Pressione Enter para continuar...")

    def get_user_choice(self, min_val: int = 0, max_val: int = 9) -> int:
        """Obtém escolha do usuário"""
        while True:
            try:
                choice = input(f"\n🎯 Digite sua escolha ({min_val}-{max_val}): ").strip()
                if choice == "":
                    continue

                choice_int = int(choice)
                if min_val <= choice_int <= max_val:
                    return choice_int
                else:
                    print(f"❌ Escolha deve estar entre {min_val} e {max_val}")
            except ValueError:
                print("❌ Digite apenas números")
            except KeyboardInterrupt:
                print("\n\n👋 Sistema encerrado pelo usuário")
                sys.exit(0)

    def ask(self, prompt: str, default: str) -> str:
        """Pergunta com valor padrão"""
        answer = input(f"{prompt} [{default}]: ").strip()
        return answer or default

    def initialize_app(self) -> bool:
        """Carrega a configuração e inicializa a aplicação"""
        try:
            if not os.path.exists(self.config_path):
                print(f"⚠️  {self.config_path} não encontrado: usando configurações padrão")
            self.app = SimuRecApp(self.config_path if os.path.exists(self.config_path) else None)
            return True
        except SimuRecError as e:
            print(f"❌ Erro ao inicializar sistema: {e}")
            return False

    def option_make_data(self):
        """Opção 1: Gerar dataset sintético"""
        out = self.ask("📁 Diretório de saída", "data/synthetic")
        users = int(self.ask("👥 Usuários", "50"))
        items = int(self.ask("🎬 Itens", "100"))
        seed = int(self.ask("🎲 Semente", "0"))
        self.app.make_data(out, users, items, seed)

    def option_ingest(self):
        """Opção 2: Importar logs"""
        interactions = input("📄 CSV de interações (user,item,rating,timestamp): ").strip()
        trust = input("🤝 CSV de confiança (opcional): ").strip() or None
        out = self.ask("📁 Diretório de saída", "data/ingested")
        threshold = float(self.ask("⭐ Nota mínima para feedback positivo", "4"))
        self.app.ingest(interactions, trust, out, threshold)

    def option_fit_env(self):
        """Opção 3: Ajustar ambiente"""
        data = self.ask("📁 Diretório do dataset", "data/synthetic")
        out = self.ask("📁 Diretório de saída", "data/env")
        env_cfg = self.app.config.get_env_config()
        self.app.fit_env(data, out, env_cfg.rank, env_cfg.alpha, env_cfg.seed)

    def option_pretrain(self):
        """Opção 4: Pré-treinar modelo de mundo"""
        self.app.pretrain(self.ask("📁 Diretório de saída", self.app.config.get_runs_path("pretrain")))

    def option_train(self):
        """Opção 5: Treinar política"""
        self.app.train(self.ask("📁 Diretório de saída", self.app.config.get_runs_path("train")))

    def option_evaluate(self):
        """Opção 6: Avaliar variantes"""
        variants = self.ask("🧪 Variantes (dmir, dmir-d, dqn-naive-neg, dqn+wm, random)", "dmir,random")
        seeds = int(self.ask("🎲 Número de sementes", "5"))
        out = self.ask("📁 Diretório de saída", self.app.config.get_runs_path("eval"))
        self.app.evaluate(_split_list(variants), seeds, None, out)

    def option_ident_bench(self):
        """Opção 7: Bancada de identificabilidade"""
        self.app.ident_bench(self.ask("📁 Diretório de saída", self.app.config.get_runs_path("ident-bench")))

    def option_show_config(self):
        """Opção 8: Ver configuração atual"""
        print(f"\n⚙️  CONFIGURAÇÃO ATUAL ({self.config_path if os.path.exists(self.config_path) else 'padrões'})")
        for section, values in self.app.config.snapshot().items():
            print(f"\n📋 {section.upper()}:")
            for key, value in values.items():
                print(f"   {key}: {value}")

    def option_view_logs(self):
        """Opção 9: Ver logs"""
        logs_dir = self.app.config.get_logs_path()
        log_files = sorted((f for f in os.listdir(logs_dir) if f.endswith('.log')), reverse=True)
        if not log_files:
            print("📭 Nenhum arquivo de log encontrado")
            return
        print(f"\n📋 {len(log_files)} arquivos de log encontrados:")
        for i, log_file in enumerate(log_files[:5], 1):
            print(f"  [{i}] - {log_file}")
        if len(log_files) > 5:
            print(f"  ... e mais {len(log_files) - 5} arquivos")
        print(f"\n💡 Para ver logs detalhados, abra a pasta: {logs_dir}")

    def run(self):
        """Executa o menu principal"""
        if not self.initialize_app():
            return
        actions = {
            1: self.option_make_data,
            2: self.option_ingest,
            3: self.option_fit_env,
            4: self.option_pretrain,
            5: self.option_train,
            6: self.option_evaluate,
            7: self.option_ident_bench,
            8: self.option_show_config,
            9: self.option_view_logs,
        }
        while True:
            try:
                self.clear_screen()
                self.print_header()
                self.print_main_menu()

                choice = self.get_user_choice(0, len(actions))
                if choice == 0:
                    print("\n👋 Obrigado por usar o SimuRec!")
                    break
                actions[choice]()
                self.wait_for_user()

            except KeyboardInterrupt:
                print("\n\n👋 Sistema encerrado pelo usuário")
                break
            except (SimuRecError, OSError, ValueError) as e:
                print(f"\n❌ Erro: {e}")
                self.wait_for_user()


def _split_list(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _int_list(value: str) -> List[int]:
    try:
        return [int(part) for part in _split_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"lista de inteiros inválida: {value}")


def build_parser() -> argparse.ArgumentParser:
    """Parser da linha de comando (sem argumentos, abre o menu interativo)"""
    parser = argparse.ArgumentParser(prog="simurec", description="SimuRec - recomendação interativa baseada em modelo")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="gera o dataset sintético embutido")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ingest", help="converte logs CSV para o formato canônico")
    p.add_argument("--interactions", required=True)
    p.add_argument("--trust")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=4.0)
    p.add_argument("--config")

    p = sub.add_parser("fit-env", help="ajusta e grava o ambiente ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")

    for name, text in (("pretrain", "pré-treina o modelo de mundo"), ("train", "executa o ciclo completo de treino")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config")
        p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="treina e avalia variantes contra o ambiente")
    p.add_argument("--config")
    p.add_argument("--variant", type=_split_list)
    p.add_argument("--seeds", type=int)
    p.add_argument("--k", type=_int_list)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ident-bench", help="bancada sintética de identificabilidade")
    p.add_argument("--config")
    p.add_argument("--nu", type=int)
    p.add_argument("--nc", type=int)
    p.add_argument("--regimes", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--out", required=True)
    return parser


def run_command(args: argparse.Namespace) -> None:
    """Executa um subcomando já validado pelo parser"""
    app = SimuRecApp(getattr(args, "config", None))
    if args.command == "make-data":
        app.make_data(args.out, args.users, args.items, args.seed)
    elif args.command == "ingest":
        app.ingest(args.interactions, args.trust, args.out, args.threshold)
    elif args.command == "fit-env":
        app.fit_env(args.data, args.out, args.rank, args.alpha, args.seed)
    elif args.command == "pretrain":
        app.pretrain(args.out)
    elif args.command == "train":
        app.train(args.out)
    elif args.command == "eval":
        app.evaluate(args.variant, args.seeds, args.k, args.out)
    elif args.command == "ident-bench":
        app.ident_bench(args.out, args.nu, args.nc, args.regimes, args.seeds)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Função principal do sistema

    Returns:
        int: 0 em sucesso, 1 em erro do SimuRec, 2 em erro de uso
    """
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        SimuRecMenu().run()
        return 0
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        run_command(args)
    except SimuRecError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
