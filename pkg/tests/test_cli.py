import json

import numpy as np
import pytest

from sithlm import cli
from sithlm.evaluator import synthetic_lag_task


def write_config(tmp_path, **extra):
    lines = {
        "model.d_model": 16, "model.n_layers": 1, "model.n_heads": 2,
        "model.d_mlp": 32, "model.window": 8, "model.n_slots": 4,
        "model.vocab_size": 64, "filter.k": 50,
        "train.total_steps": 4, "train.peak_lr": 1e-3, "train.final_lr": 1e-4,
        "train.warmup_steps": 1, "train.tokens_per_step": 32,
        "train.eval_interval": 4, "train.seed": 0,
    }
    lines.update(extra)
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in lines.items()))
    return path


@pytest.fixture
def corpora(tmp_path):
    train = synthetic_lag_task(2, 64, 500, seed=0)
    valid = synthetic_lag_task(2, 64, 200, seed=1)
    tp = tmp_path / "train.bin"
    vp = tmp_path / "valid.bin"
    tp.write_bytes(train.ids.astype(np.uint8).tobytes())
    vp.write_bytes(valid.ids.astype(np.uint8).tobytes())
    return tp, vp


class TestInspectFilters:
    def test_writes_csv_with_geometric_peaks(self, tmp_path, capsys):
        out = tmp_path / "filters"
        rc = cli.main(["inspect-filters", "--k", "50", "--L", "10", "--c", "0.19",
                       "--tau-min", "4", "--out", str(out)])
        assert rc == 0
        rows = [l.split(",") for l in (out / "filters.csv").read_text().splitlines()[1:]]
        peaks = []
        for i in range(10):
            mine = [(float(r[3]), int(r[2])) for r in rows if int(r[0]) == i]
            peaks.append(max(mine)[1])
        ratios = np.array(peaks[1:]) / np.array(peaks[:-1])
        # discrete argmax of geometrically spaced peaks tracks the 1.19 ratio
        assert np.abs(np.median(ratios) - 1.19) < 0.05
        meta = json.loads((out / "filters_meta.json").read_text())
        assert meta["tau_max_actual"] == pytest.approx(4 * 1.19 ** 9, rel=1e-9)
        assert "tau_max" in capsys.readouterr().out

    def test_bad_flags_exit_2(self):
        assert cli.main(["inspect-filters", "--k", "0", "--L", "5",
                         "--out", "/tmp/x"]) == 2


class TestGenSynthetic:
    def test_lag_stream(self, tmp_path):
        out = tmp_path / "lag.bin"
        rc = cli.main(["gen-synthetic", "--kind", "lag", "--lag", "5",
                       "--vocab", "64", "--length", "1000", "--seed", "3",
                       "--out", str(out)])
        assert rc == 0
        ids = np.frombuffer(out.read_bytes(), dtype=np.uint8)
        assert len(ids) == 1000
        want = synthetic_lag_task(5, 64, 1000, seed=3).ids
        np.testing.assert_array_equal(ids, want)

    def test_text(self, tmp_path):
        out = tmp_path / "doc.txt"
        rc = cli.main(["gen-synthetic", "--kind", "text", "--length", "5000",
                       "--seed", "1", "--out", str(out)])
        assert rc == 0
        assert len(out.read_text()) == 5000

    def test_big_vocab_rejected(self, tmp_path):
        rc = cli.main(["gen-synthetic", "--kind", "lag", "--vocab", "1000",
                       "--out", str(tmp_path / "x.bin")])
        assert rc == 2


class TestTrainEval:
    def test_train_writes_run_dir(self, tmp_path, corpora, capsys):
        tp, vp = corpora
        cfg = write_config(tmp_path, **{"data.train_path": tp, "data.valid_path": vp})
        out = tmp_path / "run"
        rc = cli.main(["train", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        assert (out / "config.txt").exists()
        assert (out / "metrics.jsonl").exists()
        assert (out / "last.ckpt").exists()
        echoed = dict(l.split("=", 1) for l in
                      (out / "config.txt").read_text().splitlines())
        assert echoed["train.seed"] == "0"
        assert echoed["model.n_slots"] == "4"

    def test_override_wins(self, tmp_path, corpora):
        tp, vp = corpora
        cfg = write_config(tmp_path, **{"data.train_path": tp, "data.valid_path": vp})
        out = tmp_path / "run"
        rc = cli.main(["train", "--config", str(cfg), "--out", str(out),
                       "--set", "train.total_steps=2", "--seed", "5"])
        assert rc == 0
        lines = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
        assert lines[-1]["step"] == 2
        echoed = dict(l.split("=", 1) for l in
                      (out / "config.txt").read_text().splitlines())
        assert echoed["train.seed"] == "5"

    def test_eval_prints_both_ppls(self, tmp_path, corpora, capsys):
        tp, vp = corpora
        cfg = write_config(tmp_path, **{"data.train_path": tp, "data.valid_path": vp})
        out = tmp_path / "run"
        assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        capsys.readouterr()
        rc = cli.main(["eval", "--checkpoint", str(out / "last.ckpt"),
                       "--data", str(vp)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "raw perplexity" in text
        assert "per-word perplexity" in text

    def test_unknown_key_exit_2(self, tmp_path, corpora):
        tp, vp = corpora
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("model.unknown=5\n")
        assert cli.main(["train", "--config", str(cfg), "--out",
                         str(tmp_path / "r")]) == 2

    def test_missing_data_exit_2(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["train", "--config", str(cfg), "--out",
                         str(tmp_path / "r")]) == 2

    def test_missing_corpus_file_exit_4(self, tmp_path):
        cfg = write_config(tmp_path, **{"data.train_path": tmp_path / "absent.txt"})
        rc = cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")])
        assert rc == 4


class TestSweep:
    def test_creates_run_dir_per_l(self, tmp_path, corpora):
        tp, vp = corpora
        cfg = write_config(tmp_path, **{"data.train_path": tp, "data.valid_path": vp,
                                        "train.total_steps": 2})
        out = tmp_path / "sweep"
        rc = cli.main(["sweep", "--config", str(cfg), "--L-list", "2,4,6",
                       "--out", str(out)])
        assert rc == 0
        for n in (2, 4, 6):
            assert (out / f"L{n}" / "metrics.jsonl").exists()
        summary = (out / "sweep_summary.csv").read_text().splitlines()
        assert summary[0] == "n_slots,final_val_ce,final_val_raw_ppl"
        assert len(summary) == 4


class TestCompare:
    def test_single_seed_table(self, tmp_path, corpora):
        tp, vp = corpora
        cfg = write_config(tmp_path, **{"data.train_path": tp, "data.valid_path": vp,
                                        "train.total_steps": 2})
        out = tmp_path / "cmp"
        rc = cli.main(["compare", "--config", str(cfg), "--seeds", "0",
                       "--out", str(out)])
        assert rc == 0
        table = (out / "comparison.csv").read_text().splitlines()
        assert len(table) == 3
