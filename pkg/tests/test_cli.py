"""Command-line pipeline and configuration handling."""

import json
import shutil

import numpy as np
import pytest

from conftest import TOY_CONFIG, run, write_toy_workspace
from tagrec.config import PipelineConfig, config_from_dict, load_config
from tagrec.corpus import InteractionMatrix
from tagrec.encoder import init_params
from tagrec.encoder.training import load_encoder
from tagrec.errors import ConfigError
from tagrec.evaluation import rank_candidates
from tagrec.factorization import FactorizationModel

MODELS = [("bpr", "identity"), ("warp", "identity"), ("warp", "tfidf"), ("warp", "tags"), ("warp", "han")]


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = load_config(write_toy_workspace(tmp_path))
        (tmp_path / "again.toml").write_text(cfg.to_toml())
        again = load_config(tmp_path / "again.toml")
        assert again == cfg
        assert again.to_toml() == cfg.to_toml()

    def test_defaults_match_documented_settings(self):
        cfg = PipelineConfig()
        assert (cfg.mf.d, cfg.mf.l2, cfg.mf.epochs, cfg.mf.max_warp_trials) == (200, 1e-5, 100, 100)
        assert (cfg.split.p, cfg.corpus.n_tags, cfg.corpus.s_max, cfg.corpus.w_max) == (10, 300, 10, 50)
        assert cfg.eval.ks == [50, 100, 150, 200]

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"mf": {"dims": 3}})

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            config_from_dict({"model": {}})

    def test_out_of_range(self):
        with pytest.raises(ConfigError, match="mf.loss"):
            config_from_dict({"mf": {"loss": "hinge"}})
        with pytest.raises(ConfigError, match="split.p"):
            config_from_dict({"split": {"p": 0}})

    def test_malformed_file(self, tmp_path):
        (tmp_path / "bad.toml").write_text("[mf\nd = 3")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.toml")

    def test_relative_paths(self, tmp_path):
        cfg = load_config(write_toy_workspace(tmp_path))
        assert cfg.out_dir == tmp_path / "out"


class TestIngest:
    def test_stats_line(self, tmp_path, capsys):
        config = write_toy_workspace(tmp_path)
        assert run(config, "ingest") == 0
        line = capsys.readouterr().out.strip()
        assert line == "60 users, 120 items, 960 pairs, density 13.33%"
        stats = json.loads((tmp_path / "out" / "stats.json").read_text())
        assert stats["tags"] == 14 and stats["documents"] == 120

    def test_idempotent(self, tmp_path):
        config = write_toy_workspace(tmp_path)
        names = ["interactions.tsv", "documents.jsonl", "tags.txt", "stats.json"]
        assert run(config, "ingest") == 0
        first = {n: (tmp_path / "out" / n).read_bytes() for n in names}
        assert run(config, "ingest") == 0
        assert first == {n: (tmp_path / "out" / n).read_bytes() for n in names}

    def test_missing_tags_file(self, tmp_path, capsys):
        config = write_toy_workspace(tmp_path)
        (tmp_path / "tags.dat").unlink()
        assert run(config, "ingest") == 2
        assert str(tmp_path / "tags.dat") in capsys.readouterr().err

    def test_malformed_interactions(self, tmp_path, capsys):
        config = write_toy_workspace(tmp_path)
        with open(tmp_path / "users.dat", "a") as fh:
            fh.write("3 1 oops 2\n")
        assert run(config, "ingest") == 3
        assert "users.dat:61" in capsys.readouterr().err


class TestTrainEncoder:
    def test_zero_epochs_is_initialisation(self, workspace):
        config = workspace / "pipeline.toml"
        config.write_text(TOY_CONFIG.replace("epochs = 2", "epochs = 0"))
        assert run(config, "train-encoder", "--model-out", str(workspace / "init.ckpt")) == 0
        params, words, tags, log = load_encoder(workspace / "init.ckpt")
        assert log == []
        expected = init_params(params.config, len(words))
        assert all(np.array_equal(params.weights[k], expected.weights[k]) for k in expected.weights)

    def test_tag_count_mismatch_fails_before_training(self, workspace, capsys):
        config = workspace / "pipeline.toml"
        config.write_text(TOY_CONFIG.replace("n_tags = 10", "n_tags = 8"))
        before = (workspace / "out" / "encoder.ckpt").read_bytes()
        assert run(config, "train-encoder") == 2
        assert "n_tags=8" in capsys.readouterr().err
        assert (workspace / "out" / "encoder.ckpt").read_bytes() == before

    def test_embed_rejects_mismatched_encoder(self, workspace, capsys):
        config = workspace / "pipeline.toml"
        config.write_text(TOY_CONFIG.replace("n_tags = 10", "n_tags = 8"))
        assert run(config, "embed") == 2
        assert "predicts 10 tags" in capsys.readouterr().err

    def test_seed_recorded(self, workspace):
        config = workspace / "pipeline.toml"
        assert run(config, "train-encoder", "--seed", "7", "--model-out", str(workspace / "s7.ckpt")) == 0
        params, *_ = load_encoder(workspace / "s7.ckpt")
        assert params.config.seed == 7


class TestTrainMF:
    def test_han_without_embeddings(self, workspace, capsys):
        (workspace / "out" / "embeddings.txt").unlink()
        assert run(workspace / "pipeline.toml", "train-mf", "--features", "han") == 2
        assert "embeddings" in capsys.readouterr().err

    def test_warp_identity_checkpoint(self, workspace):
        assert run(workspace / "pipeline.toml", "train-mf", "--loss", "warp") == 0
        model, meta, train_part = FactorizationModel.load(workspace / "out" / "mf_warp_identity.ckpt")
        assert meta["name"] == "WARP"
        assert meta["train_config"]["loss"] == "warp" and meta["train_config"]["seed"] == 0
        assert meta["split"] == {"p": 10, "seed": 0}
        assert len(meta["log"]) == 5
        assert model.metadata == "none"
        assert model.item_features.shape == (120, 120)
        assert (workspace / "out" / "mf_warp_identity.log.tsv").exists()
        assert (workspace / "out" / "mf_warp_identity.loss.png").exists()

    def test_numerical_failure_exit_code(self, workspace, capsys):
        lines = (workspace / "out" / "embeddings.txt").read_text().splitlines()
        header, rows = lines[0], lines[1:]
        # differences between items overflow to inf, the gradient to nan
        huge = [" ".join([str(j)] + [f"{(-1) ** (j + k) * 1e308:.9g}" for k in range(len(r.split()) - 1)])
                for j, r in enumerate(rows)]
        (workspace / "out" / "embeddings.txt").write_text("\n".join([header, *huge]) + "\n")
        assert run(workspace / "pipeline.toml", "train-mf", "--features", "han") == 4
        assert "epoch 1" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory, prepared_workspace):
    root = tmp_path_factory.mktemp("trained") / "ws"
    shutil.copytree(prepared_workspace, root)
    for loss, features in MODELS:
        assert run(root / "pipeline.toml", "train-mf", "--loss", loss, "--features", features) == 0
    return root


def _ckpt(root, loss, features):
    return str(root / "out" / f"mf_{loss}_{features}.ckpt")


class TestEvaluate:
    def test_five_models(self, trained, tmp_path):
        argv = [_ckpt(trained, *m) for m in MODELS]
        assert run(trained / "pipeline.toml", "evaluate", *argv, "--report-dir", str(tmp_path)) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert [r["name"] for r in report["models"]] == ["BPR", "WARP", "WARP + TFIDF", "WARP + Tags", "WARP + HAN"]
        assert all(len(r["recall"]) == 4 for r in report["models"])
        assert report["baseline"] == "BPR"
        assert report["models"][0]["ttest_vs_baseline"] is None
        assert all(set(r["ttest_vs_baseline"]) == {"5", "10", "15", "20"} for r in report["models"][1:])
        table = (tmp_path / "report.txt").read_text().splitlines()
        assert table[0].split()[:5] == ["Models", "@5", "@10", "@15", "@20"]
        assert len(table) == 2 + 5
        tsv = (tmp_path / "report.tsv").read_text().splitlines()
        assert len(tsv) == 6 and tsv[0].startswith("model\trecall@5")
        assert (tmp_path / "recall_at_k.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_single_checkpoint(self, trained, tmp_path):
        assert run(trained / "pipeline.toml", "evaluate", _ckpt(trained, "bpr", "identity"),
                   "--report-dir", str(tmp_path)) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert len(report["models"]) == 1 and report["baseline"] is None
        assert "ttest_vs_baseline" not in report["models"][0]

    def test_identical_checkpoints(self, trained, tmp_path):
        path = _ckpt(trained, "warp", "tags")
        assert run(trained / "pipeline.toml", "evaluate", path, path, "--report-dir", str(tmp_path)) == 0
        a, b = json.loads((tmp_path / "report.json").read_text())["models"]
        assert a["recall"] == b["recall"]
        assert b["name"] == "WARP + Tags #2"
        assert all(v["p"] == 1.0 for v in b["ttest_vs_baseline"].values())

    def test_split_mismatch(self, trained, tmp_path, capsys):
        config = trained / "pipeline.toml"
        other = str(tmp_path / "other.ckpt")
        assert run(config, "train-mf", "--loss", "warp", "--split-seed", "3", "--model-out", other) == 0
        assert run(config, "evaluate", _ckpt(trained, "bpr", "identity"), other, "--report-dir", str(tmp_path)) == 2
        assert "split" in capsys.readouterr().err

    def test_split_averaging(self, trained, tmp_path):
        config = trained / "pipeline.toml"
        paths = []
        for seed in (1, 2):
            for loss in ("bpr", "warp"):
                paths.append(str(tmp_path / f"{loss}{seed}.ckpt"))
                assert run(config, "train-mf", "--loss", loss, "--split-seed", str(seed), "--model-out", paths[-1]) == 0
        assert run(config, "evaluate", *paths, "--report-dir", str(tmp_path / "avg")) == 0
        report = json.loads((tmp_path / "avg" / "report.json").read_text())
        assert [r["name"] for r in report["models"]] == ["BPR", "WARP"]
        assert report["splits"] == [{"p": 10, "seed": 1}, {"p": 10, "seed": 2}]
        singles = []
        for seed in (1, 2):
            assert run(config, "evaluate", str(tmp_path / f"warp{seed}.ckpt"),
                       "--report-dir", str(tmp_path / f"s{seed}")) == 0
            singles.append(json.loads((tmp_path / f"s{seed}" / "report.json").read_text())["models"][0]["recall"])
        for k in ("5", "20"):
            assert report["models"][1]["recall"][k] == pytest.approx((singles[0][k] + singles[1][k]) / 2, abs=1e-15)

    def test_unknown_baseline(self, trained, tmp_path):
        argv = [_ckpt(trained, "bpr", "identity"), _ckpt(trained, "warp", "identity")]
        assert run(trained / "pipeline.toml", "evaluate", *argv, "--baseline", "nope",
                   "--report-dir", str(tmp_path)) == 2


class TestRecommend:
    def _lines(self, capsys):
        return [line.split("\t") for line in capsys.readouterr().out.splitlines()]

    def test_matches_rank_candidates(self, trained, capsys):
        path = _ckpt(trained, "warp", "han")
        assert run(trained / "pipeline.toml", "recommend", "--checkpoint", path, "--user", "4", "--k", "7") == 0
        lines = self._lines(capsys)
        model, _, train_part = FactorizationModel.load(path)
        seen = InteractionMatrix(train_part.n_users, train_part.n_items, train_part.indptr, train_part.indices,
                                 np.ones(train_part.n_pairs, bool), np.zeros(train_part.n_users, bool))
        expected = rank_candidates(model, 4, seen, 7)
        assert [int(x[1]) for x in lines] == expected.ranked_items.tolist()
        assert [x[0] for x in lines] == [str(r) for r in range(1, 8)]
        assert all(x[3] for x in lines)  # titles come from the ingested documents

    def test_k_clamped(self, trained, capsys):
        path = _ckpt(trained, "bpr", "identity")
        assert run(trained / "pipeline.toml", "recommend", "--checkpoint", path, "--user", "0", "--k", "1000") == 0
        _, _, train_part = FactorizationModel.load(path)
        assert len(self._lines(capsys)) == 120 - train_part.user_items(0).size

    def test_unknown_user(self, trained, capsys):
        path = _ckpt(trained, "bpr", "identity")
        assert run(trained / "pipeline.toml", "recommend", "--checkpoint", path, "--user", "60") != 0
        assert "unknown user" in capsys.readouterr().err
