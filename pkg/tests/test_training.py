import numpy as np
import pytest

from diffprune.data import generate_dataset
from diffprune.diffusion import make_linear_schedule, timestep_loss
from diffprune.models import build_model, mlp_arch
from diffprune.tensor import Tape
from diffprune.training import Adam, TrainingDiverged, new_state, train_steps

SCHED = make_linear_schedule(100)
DATA = generate_dataset("gauss8", 2000, 0)


def test_loss_decreases_on_gauss8():
    state = new_state(build_model(mlp_arch(), seed=0), lr=2e-3, seed=0)
    losses = train_steps(state, DATA, SCHED, 1000, 128)
    assert np.mean(losses[-100:]) < 0.8 * np.mean(losses[:100])
    assert state.step == 1000


def test_overfits_single_triple():
    model = build_model(mlp_arch((32, 32)), seed=1)
    opt = Adam(model.params, lr=1e-2)
    x0 = np.array([[1.5, -0.5]], dtype=np.float32)
    eps = np.array([[0.3, 1.2]], dtype=np.float32)
    for _ in range(400):
        with Tape() as tape:
            loss = timestep_loss(model, x0, 40, eps, SCHED)
        tape.backward(loss)
        opt.step()
        model.zero_grad()
    assert timestep_loss(model, x0, 40, eps, SCHED).item() < 1e-4


def test_resume_is_identical():
    def fresh():
        return new_state(build_model(mlp_arch((16, 16)), seed=2), lr=1e-3, seed=5)

    straight = fresh()
    train_steps(straight, DATA, SCHED, 20, 32)

    first = fresh()
    train_steps(first, DATA, SCHED, 10, 32)
    saved = {
        "params": {k: v.data.copy() for k, v in first.model.params.items()},
        "opt": {"t": first.optimizer.t, "m": {k: v.copy() for k, v in first.optimizer.m.items()},
                "v": {k: v.copy() for k, v in first.optimizer.v.items()}},
        "rng": first.rng.bit_generator.state,
    }
    second = fresh()
    second.model = second.model.with_arch(second.model.arch, saved["params"])
    second.optimizer = Adam(second.model.params, lr=1e-3)
    second.optimizer.load_state(saved["opt"])
    second.rng.bit_generator.state = saved["rng"]
    second.step = 10
    train_steps(second, DATA, SCHED, 10, 32)
    for k in straight.model.params:
        np.testing.assert_array_equal(second.model.params[k].data, straight.model.params[k].data)


def test_nan_loss_aborts():
    bad = DATA.copy()
    bad[:] = np.nan
    state = new_state(build_model(mlp_arch((8,)), seed=0), lr=1e-3, seed=0)
    with pytest.raises(TrainingDiverged, match="step 1"):
        train_steps(state, bad, SCHED, 5, 16)
