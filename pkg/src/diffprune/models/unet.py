"""Miniature skip-connected UNet for 16x16 single-channel images.

Two resolution stages plus a bottleneck, each a block of
``conv -> +time -> group_norm -> silu -> conv -> group_norm -> silu``.
Downsampling is a 2x2 mean pool, upsampling is nearest-neighbour, and
encoder outputs are concatenated onto the decoder inputs.
"""

from __future__ import annotations

from .. import ops
from ..tensor import Tensor
from .base import Denoiser, Layer, timestep_embedding

BLOCKS = ("enc1", "enc2", "mid", "up2", "up1")
FAMILIES = tuple(f"{b}.{s}" for b in BLOCKS for s in ("a", "b"))


def unet_arch(channels=(32, 64), image_size: int = 16, in_channels: int = 1, temb_dim: int = 32,
              temb_hidden: int = 128, max_groups: int = 8, dtype: str = "float32") -> dict:
    c1, c2 = channels
    if image_size % 4:
        raise ValueError("image_size must be divisible by 4")
    widths = {}
    for fam in FAMILIES:
        widths[fam] = c1 if fam.split(".")[0] in ("enc1", "up1") else c2
    group_size = {fam: w // min(max_groups, w) for fam, w in widths.items()}
    for fam, w in widths.items():
        if w % min(max_groups, w):
            raise ValueError(f"{fam}: width {w} not divisible by {min(max_groups, w)} norm groups")
    return {
        "family": "unet",
        "image_size": image_size,
        "in_channels": in_channels,
        "widths": widths,
        "group_size": group_size,
        "temb_dim": temb_dim,
        "temb_hidden": temb_hidden,
        "dtype": dtype,
    }


class TinyUnet(Denoiser):
    family = "unet"
    output_layer = "out"

    @classmethod
    def layers(cls, arch: dict) -> list[Layer]:
        w = arch["widths"]
        s = arch["image_size"]
        td, th = arch["temb_dim"], arch["temb_hidden"]
        pos = {"enc1": s * s, "enc2": (s // 2) ** 2, "mid": (s // 4) ** 2, "up2": (s // 2) ** 2, "up1": s * s}
        inputs = {
            "enc1": ((None, arch["in_channels"]),),
            "enc2": (("enc1.b", w["enc1.b"]),),
            "mid": (("enc2.b", w["enc2.b"]),),
            "up2": (("mid.b", w["mid.b"]), ("enc2.b", w["enc2.b"])),
            "up1": (("up2.b", w["up2.b"]), ("enc1.b", w["enc1.b"])),
        }
        layers = [
            Layer("temb.lin1", "linear", ((None, td),), (None, th)),
            Layer("temb.lin2", "linear", ((None, th),), (None, th)),
        ]
        for blk in BLOCKS:
            fa, fb = f"{blk}.a", f"{blk}.b"
            layers += [
                Layer(f"{blk}.conv_a", "conv", inputs[blk], (fa, w[fa]), kernel=3, positions=pos[blk]),
                Layer(f"{blk}.tproj", "linear", ((None, th),), (fa, w[fa])),
                Layer(f"{blk}.norm_a", "norm", ((fa, w[fa]),), (fa, w[fa])),
                Layer(f"{blk}.conv_b", "conv", ((fa, w[fa]),), (fb, w[fb]), kernel=3, positions=pos[blk]),
                Layer(f"{blk}.norm_b", "norm", ((fb, w[fb]),), (fb, w[fb])),
            ]
        layers.append(
            Layer("out", "conv", (("up1.b", w["up1.b"]),), (None, arch["in_channels"]), kernel=3, positions=s * s)
        )
        return layers

    @classmethod
    def granularity(cls, arch: dict) -> dict[str, int]:
        return dict(arch["group_size"])

    @property
    def sample_shape(self) -> tuple:
        s = self.arch["image_size"]
        return (self.arch["in_channels"], s, s)

    def _block(self, blk: str, x: Tensor, te: Tensor) -> Tensor:
        p = self.params
        gs = self.arch["group_size"]
        h = ops.conv2d(x, p[f"{blk}.conv_a.weight"], p[f"{blk}.conv_a.bias"], pad=1)
        tp = ops.linear(te, p[f"{blk}.tproj.weight"], p[f"{blk}.tproj.bias"])
        h = ops.add(h, ops.reshape(tp, tp.shape + (1, 1)))
        ca = h.shape[1]
        h = ops.silu(ops.group_norm(h, ca // gs[f"{blk}.a"], p[f"{blk}.norm_a.weight"], p[f"{blk}.norm_a.bias"]))
        h = ops.conv2d(h, p[f"{blk}.conv_b.weight"], p[f"{blk}.conv_b.bias"], pad=1)
        cb = h.shape[1]
        return ops.silu(ops.group_norm(h, cb // gs[f"{blk}.b"], p[f"{blk}.norm_b.weight"], p[f"{blk}.norm_b.bias"]))

    def forward(self, x, t) -> Tensor:
        x, t = self._prep(x, t)
        p = self.params
        e = Tensor(timestep_embedding(t, self.arch["temb_dim"], self.dtype))
        e = ops.silu(ops.linear(e, p["temb.lin1.weight"], p["temb.lin1.bias"]))
        te = ops.silu(ops.linear(e, p["temb.lin2.weight"], p["temb.lin2.bias"]))

        h1 = self._block("enc1", x, te)
        h2 = self._block("enc2", ops.avg_pool2(h1), te)
        m = self._block("mid", ops.avg_pool2(h2), te)
        u2 = self._block("up2", ops.concat([ops.upsample_nearest(m), h2]), te)
        u1 = self._block("up1", ops.concat([ops.upsample_nearest(u2), h1]), te)
        return ops.conv2d(u1, p["out.weight"], p["out.bias"], pad=1)
