"""MLP noise predictor for 2-D point data."""

from __future__ import annotations

from .. import ops
from ..tensor import Tensor
from .base import Denoiser, Layer, timestep_embedding


def mlp_arch(hidden=(64, 64, 64), in_dim: int = 2, temb_dim: int = 32, temb_hidden: int = 64,
             dtype: str = "float32") -> dict:
    """Descriptor for an MLP; ``temb_dim=0`` builds an unconditioned stack."""
    hidden = list(hidden)
    if not hidden or min(hidden) < 1:
        raise ValueError("every hidden width must be >= 1")
    return {
        "family": "mlp",
        "in_dim": in_dim,
        "n_hidden": len(hidden),
        "widths": {f"h{i + 1}": int(w) for i, w in enumerate(hidden)},
        "temb_dim": temb_dim,
        "temb_hidden": temb_hidden,
        "dtype": dtype,
    }


class MlpDenoiser(Denoiser):
    """Hidden layers ``silu(W_i h + P_i temb)``; time features added into every hidden layer."""

    family = "mlp"

    @classmethod
    def layers(cls, arch: dict) -> list[Layer]:
        widths = arch["widths"]
        n, d = arch["n_hidden"], arch["in_dim"]
        td, th = arch["temb_dim"], arch["temb_hidden"]
        layers = []
        if td:
            layers += [
                Layer("temb.lin1", "linear", ((None, td),), (None, th)),
                Layer("temb.lin2", "linear", ((None, th),), (None, th)),
            ]
        prev = (None, d)
        for i in range(1, n + 1):
            fam = f"h{i}"
            layers.append(Layer(f"l{i}", "linear", (prev,), (fam, widths[fam])))
            if td:
                layers.append(Layer(f"tproj{i}", "linear", ((None, th),), (fam, widths[fam])))
            prev = (fam, widths[fam])
        layers.append(Layer("out", "linear", (prev,), (None, d)))
        return layers

    @property
    def sample_shape(self) -> tuple:
        return (self.arch["in_dim"],)

    def forward(self, x, t) -> Tensor:
        x, t = self._prep(x, t)
        p = self.params
        te = None
        if self.arch["temb_dim"]:
            e = Tensor(timestep_embedding(t, self.arch["temb_dim"], self.dtype))
            e = ops.silu(ops.linear(e, p["temb.lin1.weight"], p["temb.lin1.bias"]))
            e = ops.linear(e, p["temb.lin2.weight"], p["temb.lin2.bias"])
            te = ops.silu(e)
        h = x
        for i in range(1, self.arch["n_hidden"] + 1):
            h = ops.linear(h, p[f"l{i}.weight"], p[f"l{i}.bias"])
            if te is not None:
                h = ops.add(h, ops.linear(te, p[f"tproj{i}.weight"], p[f"tproj{i}.bias"]))
            h = ops.silu(h)
        return ops.linear(h, p["out.weight"], p["out.bias"])
