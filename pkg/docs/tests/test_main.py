#!/usr/bin/env python3
"""
Testes da linha de comando (parser, códigos de saída e subcomandos rápidos)
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from helpers import run_tests
from core.data import load_dataset
from core.environment import load_environment
from main import build_parser, main


def _with_tmp_logs(fn):
    def wrapper():
        with tempfile.TemporaryDirectory() as tmp:
            os.environ["SIMUREC_LOGS_PATH"] = os.path.join(tmp, "logs")
            try:
                fn(tmp)
            finally:
                os.environ.pop("SIMUREC_LOGS_PATH", None)
    wrapper.__name__ = fn.__name__
    return wrapper


def test_parser_subcommands():
    parser = build_parser()
    args = parser.parse_args(["eval", "--variant", "dmir,random", "--k", "20,50", "--seeds", "2", "--out", "x"])
    assert args.variant == ["dmir", "random"] and args.k == [20, 50] and args.seeds == 2
    args = parser.parse_args(["ident-bench", "--nu", "3", "--out", "y"])
    assert args.nu == 3 and args.nc is None


def test_usage_errors_exit_with_two():
    assert main(["comando-inexistente"]) == 2
    assert main(["eval"]) == 2
    assert main(["eval", "--k", "a,b", "--out", "x"]) == 2


@_with_tmp_logs
def test_missing_config_exits_with_one(tmp):
    assert main(["train", "--config", os.path.join(tmp, "nao-existe.json"), "--out", tmp]) == 1


@_with_tmp_logs
def test_make_data_and_fit_env(tmp):
    data = os.path.join(tmp, "data")
    env_dir = os.path.join(tmp, "env")
    assert main(["make-data", "--out", data, "--users", "8", "--items", "10", "--seed", "1"]) == 0
    dataset = load_dataset(data)
    assert (dataset.n_users, dataset.n_items) == (8, 10)

    config = os.path.join(tmp, "config.json")
    with open(config, "w", encoding="utf-8") as f:
        json.dump({"environment": {"epochs": 2, "horizon": 5}}, f)
    assert main(["fit-env", "--data", data, "--out", env_dir, "--rank", "3", "--alpha", "0.8",
                 "--config", config]) == 0
    env = load_environment(env_dir)
    assert env.user_embeddings.shape == (8, 3)
    assert env.alpha == 0.8 and env.horizon == 5


@_with_tmp_logs
def test_ingest_from_csv(tmp):
    interactions = os.path.join(tmp, "ratings.csv")
    trust = os.path.join(tmp, "trust.csv")
    with open(interactions, "w", encoding="utf-8") as f:
        f.write("user,item,rating,timestamp\n10,5,5,100\n10,6,2,200\n11,5,4,150\n")
    with open(trust, "w", encoding="utf-8") as f:
        f.write("truster,trustee\n10,11\n11,11\n")
    out = os.path.join(tmp, "ingested")
    assert main(["ingest", "--interactions", interactions, "--trust", trust, "--out", out]) == 0
    dataset = load_dataset(out)
    assert dataset.n_records == 3
    assert len(dataset.edges) == 1
    assert sorted(r.feedback for records in dataset.user_records for r in records) == [0, 1, 1]


if __name__ == "__main__":
    print("🔧 TESTE: Linha de comando")
    print("=" * 50)
    sys.exit(run_tests(dict(globals())))
