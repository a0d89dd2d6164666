import json

import numpy as np
import pytest

from metaprompt.cli import main
from metaprompt.metalearn import TrainConfig, init_state, meta_train
from metaprompt.optim import Adam, SGD, make_optimizer
from metaprompt.store import decode_array, encode_array, load_checkpoint, read_metrics, save_checkpoint


def test_array_codec_bit_exact():
    a = np.random.default_rng(0).standard_normal((3, 5)) * 1e-300
    a[0, 0] = -0.0
    b = decode_array(encode_array(a))
    assert b.tobytes() == a.tobytes()


def test_checkpoint_roundtrip_and_resume(tmp_path, backbone, bundle):
    cfg = TrainConfig(max_steps=5, seed=2)
    res = meta_train(bundle.train, cfg, backbone)
    save_checkpoint(tmp_path / "c.json", res.final, cfg)
    state, cfg2, best = load_checkpoint(tmp_path / "c.json")
    assert cfg2 == cfg and best is None and state.step == 5
    assert state.theta.tobytes() == res.final.theta.tobytes()
    more = TrainConfig(**{**cfg.to_dict(), "max_steps": 3})
    a = meta_train(bundle.train, more, backbone, state=res.final.copy())
    b = meta_train(bundle.train, more, backbone, state=state)
    assert a.final.theta.tobytes() == b.final.theta.tobytes()


def test_checkpoint_digest_guard(tmp_path, backbone):
    cfg = TrainConfig()
    save_checkpoint(tmp_path / "c.json", init_state(cfg, backbone), cfg)
    rec = json.loads((tmp_path / "c.json").read_text())
    rec["config"]["alpha1"] = 9.0
    (tmp_path / "c.json").write_text(json.dumps(rec))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.json")


def test_optimizers():
    p = {"x": np.array([1.0, -2.0])}
    g = {"x": np.array([0.5, 0.5])}
    assert np.allclose(SGD(0.1).step(p, g)["x"], [0.95, -2.05])
    out = Adam(0.1).step(p, g)["x"]  # first Adam step moves each coordinate by ~lr
    assert np.allclose(out, [0.9, -2.1], atol=1e-6)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)


def test_unknown_subcommand_exit_2(capsys):
    assert main(["bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exit_2():
    assert main(["gen-corpus", "--nope"]) == 2


def test_empty_validation_pool_exit_1(tmp_path):
    d = str(tmp_path)
    assert main(["gen-corpus", "--seed", "3", "--n-docs", "20", "--out", d]) == 0
    assert main(["build-tasks", "--corpus", d + "/corpus.txt", "--seed", "3", "--out", d]) == 1


def test_missing_file_exit_1(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_bad_config_exit_2(tmp_path):
    (tmp_path / "c.cfg").write_text("nonsense_key = 3\n")
    assert main(["meta-train", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path)]) == 2


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("SUPMER_SEED", "5")
    assert main(["gen-corpus", "--n-docs", "3", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "corpus_info.json").read_text())["seed"] == 5


def test_pipeline_and_plot_rows(tmp_path):
    d = str(tmp_path)
    assert main(["gen-corpus", "--seed", "3", "--n-docs", "120", "--out", d]) == 0
    assert main(["build-tasks", "--corpus", d + "/corpus.txt", "--seed", "3", "--out", d]) == 0
    (tmp_path / "t.cfg").write_text("# small run\nvalidate_every = 4\n")
    assert main(["meta-train", "--tasks", d, "--config", d + "/t.cfg", "--max-steps", "8", "--seed", "3", "--out", d]) == 0
    assert main(["eval", "--checkpoint", d + "/checkpoint.json", "--tasks", d, "--seed", "3", "--out", d]) == 0
    assert 0 <= json.loads((tmp_path / "eval.json").read_text())["query_acc"] <= 1
    assert main(["emit-plots", "--metrics", d + "/metrics.jsonl", "--out", d]) == 0
    rows = (tmp_path / "inner_product_vs_step.csv").read_text().strip().splitlines()
    assert len(rows) - 1 == len(read_metrics(d + "/metrics.jsonl")) == 8


def test_max_steps_zero_checkpoint(tmp_path, backbone):
    assert main(["meta-train", "--max-steps", "0", "--seed", "1", "--out", str(tmp_path)]) == 0
    state, cfg, best = load_checkpoint(tmp_path / "checkpoint.json")
    init = init_state(cfg, backbone)
    assert state.step == 0 and np.array_equal(state.theta, init.theta)
    assert np.array_equal(best[1].flat(), init.phi.flat())


def test_tune_and_report_plots(tmp_path):
    d = str(tmp_path)
    cfg = tmp_path / "b.cfg"
    cfg.write_text("shift.tune_steps = 10\nshift.eval_interval = 5\nshift.n_test = 20\nshift.meta_steps = 3\n")
    assert main(["tune", "--vanilla", "--config", str(cfg), "--seed", "2", "--out", d]) == 0
    tune = json.loads((tmp_path / "tune.json").read_text())
    assert len(tune["curve"]["in_domain"]) == len(tune["steps"]) == 3
    assert main(["tune", "--config", str(cfg), "--seed", "2", "--out", d]) == 2  # needs a checkpoint
    assert main(["bench-dg", "--config", str(cfg), "--n-seeds", "2", "--seed", "1", "--out", d]) == 0
    assert main(["emit-plots", "--report", d + "/report.json", "--out", d]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    rows = (tmp_path / "accuracy_vs_step.csv").read_text().strip().splitlines()
    n_curves = sum(len(per_seed) for doms in rep["curves"].values() for per_seed in doms.values())
    assert len(rows) - 1 == n_curves * len(rep["steps"])
