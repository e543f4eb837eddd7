import csv

import numpy as np
import pytest

from diffprune import checkpoint as ckpt_io
from diffprune import pipeline
from diffprune.checkpoint import same_weights
from diffprune.config import from_dict
from diffprune.importance import PruningError
from diffprune.training import validation_loss


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = from_dict({
        "dataset": {"kind": "gauss8", "n": 3000},
        "model": {"family": "mlp", "widths": [64, 64, 64]},
        "schedule": {"T": 50},
        "optim": {"lr": 2e-3, "steps": 800, "batch_size": 128, "checkpoint_every": 400},
        "prune": {"target_kind": "param_ratio", "target": 0.3, "grad_batch": 64},
        "finetune": {"steps": 200},
        "eval": {"n_seeds": 4, "n_samples": 300, "steps": 20},
        "out_dir": str(out),
    })
    pipeline.gen_data(cfg)
    teacher, history = pipeline.train(cfg, save_to=out / "teacher.dpck")
    ckpt_io.save(out / "teacher.dpck", teacher)
    return cfg, teacher, history


def test_train_writes_checkpoint_and_steps(setup):
    cfg, teacher, history = setup
    assert teacher.step == 800 and len(history) == 800
    assert ckpt_io.load(cfg.out_dir + "/teacher.dpck").step == 800


def test_train_resume_matches_straight_run(setup, tmp_path):
    cfg, teacher, _ = setup
    short = cfg.replace(optim={"steps": 500})
    half, _ = pipeline.train(cfg.replace(optim={"steps": 250}))
    ckpt_io.save(tmp_path / "half.dpck", half)
    resumed, _ = pipeline.train(short, resume=ckpt_io.load(tmp_path / "half.dpck"))
    straight, _ = pipeline.train(short)
    assert resumed.step == 500 and same_weights(resumed.model, straight.model)


def test_prune_report_and_reload(setup, tmp_path):
    cfg, teacher, _ = setup
    student, report = pipeline.prune(teacher, cfg)
    assert report.params_after < report.params_before and report.macs_after < report.macs_before
    assert 0.3 <= report.metrics["param_reduction"] <= 0.32
    assert 0 < report.kept_steps <= 50
    ckpt_io.save(tmp_path / "p.dpck", student)
    back = ckpt_io.load(tmp_path / "p.dpck")
    out = pipeline.sample(back, cfg, tmp_path, n=128)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["x", "y"] and len(rows) == 129
    report.save(tmp_path)
    assert (tmp_path / "prune_report.csv").exists() and "params_after" in (tmp_path / "prune_report.txt").read_text()


def test_random_ratio_zero_is_identity(setup):
    cfg, teacher, _ = setup
    student, report = pipeline.prune(teacher, cfg.replace(prune={"criterion": "random", "target": 0.0}))
    assert same_weights(student.model, teacher.model) and report.removed_groups == []


def test_prune_is_deterministic(setup):
    cfg, teacher, _ = setup
    a = pipeline.prune(teacher, cfg)[1].numbers()
    b = pipeline.prune(teacher, cfg)[1].numbers()
    assert a == b


def test_prune_errors_propagate(setup):
    cfg, teacher, _ = setup
    with pytest.raises(PruningError):
        pipeline.prune(teacher, cfg.replace(prune={"threshold": 1.0}))
    with pytest.raises(PruningError):
        pipeline.prune(teacher, cfg.replace(prune={"target": 0.95}))


def test_finetune_improves_validation_loss(setup):
    cfg, teacher, _ = setup
    student, _ = pipeline.prune(teacher, cfg)
    tuned, report = pipeline.finetune(student, cfg)
    data = pipeline.load_data(cfg)
    before = validation_loss(student.model, data, student.schedule)
    after = validation_loss(tuned.model, data, tuned.schedule)
    assert after < before
    assert report.finetune_steps == 200 and tuned.meta["finetune_steps"] == 200

    same, rep0 = pipeline.finetune(student, cfg.replace(finetune={"steps": 0}))
    assert same_weights(same.model, student.model) and rep0.finetune_steps == 0


def test_evaluate_self_and_pruned(setup):
    cfg, teacher, _ = setup
    self_report = pipeline.evaluate(teacher, teacher, cfg)
    assert self_report.metrics["consistency_mean"] == 1.0
    assert self_report.metrics["mmd_teacher_student"] < 1e-3
    assert self_report.params_before == self_report.params_after == teacher.model.param_count()

    student, _ = pipeline.prune(teacher, cfg)
    rep = pipeline.evaluate(teacher, student, cfg)
    assert rep.params_after < rep.params_before and rep.macs_after < rep.macs_before
    assert rep.metrics["consistency_mean"] < 1.0
    assert rep.numbers() == pipeline.evaluate(teacher, student, cfg).numbers()


def test_scratch_baseline_matches_architecture(setup):
    cfg, teacher, _ = setup
    student, _ = pipeline.prune(teacher, cfg)
    base, report = pipeline.scratch(student, cfg)
    assert base.model.arch == student.model.arch and report.finetune_steps == cfg.finetune_steps
    assert not same_weights(base.model, student.model)


def test_threshold_sweep(setup, monkeypatch):
    monkeypatch.setenv("DIFFPRUNE_THREADS", "1")
    cfg, _, _ = setup
    rows = pipeline.sweep(cfg, cfg.out_dir + "/teacher.dpck", [0, 0.01, 0.02, 0.05, 0.1, 1.0])
    kept = [r["kept_steps"] for r in rows[:5]]
    assert all(a >= b for a, b in zip(kept, kept[1:])) and kept[0] == 50
    assert "PruningError" in rows[5]["error"]


def test_ratio_and_criterion_sweeps(setup, tmp_path, monkeypatch):
    monkeypatch.setenv("DIFFPRUNE_THREADS", "2")
    cfg, _, _ = setup
    teacher = cfg.out_dir + "/teacher.dpck"
    ratio = pipeline.sweep(cfg.replace(sweep={"axis": "ratio"}), teacher, [0.16, 0.44, 0.56, 0.70])
    params = [r["params_after"] for r in ratio]
    assert all(a > b for a, b in zip(params, params[1:])), ratio
    crit = pipeline.sweep(cfg.replace(sweep={"axis": "criterion"}), teacher,
                          ["random", "magnitude", "taylor", "diff_pruning"])
    pipeline.write_sweep_csv(tmp_path / "s.csv", crit)
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert [r["criterion"] for r in rows] == ["random", "magnitude", "taylor", "diff_pruning"]
    assert all(r["error"] == "" for r in rows)


def test_pgm_grid(tmp_path):
    imgs = np.random.default_rng(0).uniform(size=(5, 1, 4, 4))
    pipeline.write_pgm_grid(tmp_path / "g.pgm", imgs)
    grid = pipeline.read_pgm(tmp_path / "g.pgm")
    assert grid.shape == (2 * 5 + 1, 3 * 5 + 1)
    np.testing.assert_array_equal(grid[1:5, 1:5], np.round(imgs[0, 0] * 255).astype(np.uint8))
