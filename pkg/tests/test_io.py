import io
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from diffprune import checkpoint as ckpt_io
from diffprune import dtns
from diffprune.checkpoint import Checkpoint, same_weights
from diffprune.diffusion import make_linear_schedule
from diffprune.models import build_model, mlp_arch, randomize_params, unet_arch
from diffprune.structure import groups_for, slice_model


@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_dtns_round_trip(arr):
    back = dtns.loads(dtns.dumps(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_dtns_layout():
    blob = dtns.dumps(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert blob[:4] == b"DTNS"
    assert struct.unpack("<II", blob[4:12]) == (1, 2)
    assert struct.unpack("<2Q", blob[12:28]) == (1, 3)
    assert blob[28] == 0
    assert np.frombuffer(blob[29:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_dtns_errors():
    with pytest.raises(dtns.FormatError):
        dtns.loads(b"XXXX" + b"\0" * 20)
    good = dtns.dumps(np.zeros(3))
    with pytest.raises(dtns.FormatError):
        dtns.loads(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(dtns.FormatError):
        dtns.loads(good[:-1])
    with pytest.raises(dtns.FormatError):
        dtns.dumps(np.zeros(3, dtype=np.int32))


@pytest.mark.parametrize("arch", [mlp_arch((8, 8)), unet_arch((8, 16), image_size=8, temb_dim=8, temb_hidden=16)],
                         ids=["mlp", "unet"])
def test_checkpoint_round_trip(tmp_path, arch):
    model = randomize_params(build_model(arch), 0)
    sched = make_linear_schedule(37, 2e-4, 0.03)
    rng = np.random.default_rng(9)
    opt = {"t": 5, "m": {k: v.data * 0.5 for k, v in model.params.items()},
           "v": {k: v.data ** 2 for k, v in model.params.items()}}
    ck = Checkpoint(model, sched, 123, rng.bit_generator.state, opt, {"note": "x"})
    ckpt_io.save(tmp_path / "m.dpck", ck)
    back = ckpt_io.load(tmp_path / "m.dpck")
    assert same_weights(back.model, model)
    np.testing.assert_array_equal(back.schedule.beta, sched.beta)
    assert back.step == 123 and back.meta == {"note": "x"} and back.optimizer["t"] == 5
    assert back.rng_state == rng.bit_generator.state
    for k in model.params:
        np.testing.assert_array_equal(back.optimizer["m"][k], opt["m"][k])


def test_sliced_checkpoint_round_trip(tmp_path):
    model = build_model(unet_arch())
    small = slice_model(model, groups_for(model), [0, 17, 40])
    ckpt_io.save(tmp_path / "s.dpck", Checkpoint(small, make_linear_schedule(10)))
    back = ckpt_io.load(tmp_path / "s.dpck")
    assert back.model.arch == small.arch and same_weights(back.model, small)
    assert back.optimizer is None


def test_checkpoint_version_checked(tmp_path):
    path = tmp_path / "m.dpck"
    ckpt_io.save(path, Checkpoint(build_model(mlp_arch((4,))), make_linear_schedule(5)))
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(dtns.FormatError, match="version"):
        ckpt_io.load(path)
    path.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(dtns.FormatError):
        ckpt_io.load(path)
