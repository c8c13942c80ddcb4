"""Parallel residual and densely-connected stacks of operator blocks.

The residual path iterates u_{k+1} = B_k(u_k) + u_k at a fixed width d_v.
The dense path iterates v_{k+1} = B_k([v_0, ..., v_k]), so block k consumes
(k+1)*d_v channels and emits d_v; its output is the full concatenated stack
[v_0, ..., v_K] so later consumers can reuse every depth's features. A
pointwise two-layer merge network combines both paths.

Blocks are anything callable Tensor -> Tensor with ``named_parameters``;
Fourier blocks and MLP blocks both qualify, which is how the same core
serves both operator families.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import Mlp

__all__ = ["res_path", "dense_path", "DualPathCore"]


def res_path(u0: Tensor, blocks: list) -> Tensor:
    """Apply the residual recurrence; zero blocks make this the identity."""
    u = u0
    for block in blocks:
        u = ad.add(block(u), u)
    return u


def dense_path(v0: Tensor, blocks: list) -> Tensor:
    """Apply the dense recurrence and return the concatenated feature stack
    [v_0, v_1, ..., v_K] (width (K+1)*d_v)."""
    feats = [v0]
    for k, block in enumerate(blocks):
        stacked = ad.concat_channels(feats)
        expected = (k + 1) * v0.shape[-1]
        if stacked.shape[-1] != expected:
            raise ValueError(
                f"dense block {k}: input width {stacked.shape[-1]} != (k+1)*d_v = {expected}"
            )
        feats.append(block(stacked))
    return ad.concat_channels(feats)


class DualPathCore:
    """Residual blocks + dense blocks + merge network over a shared input.

    ``merge_mode`` selects what the merge sees from the dense side: the full
    stack [v_0..v_K] ('full', default) or only the last feature v_K ('last').
    """

    def __init__(self, res_blocks: list, dense_blocks: list, merge: Mlp,
                 merge_mode: str = "full"):
        if merge_mode not in ("full", "last"):
            raise ValueError(f"unknown merge_mode '{merge_mode}'")
        self.res_blocks = res_blocks
        self.dense_blocks = dense_blocks
        self.merge = merge
        self.merge_mode = merge_mode

    @staticmethod
    def merge_input_width(d_v: int, n_dense: int, merge_mode: str = "full") -> int:
        dense_width = (n_dense + 1) * d_v if merge_mode == "full" else d_v
        return d_v + dense_width

    def __call__(self, a0: Tensor) -> Tensor:
        u_res = res_path(a0, self.res_blocks)
        stack = dense_path(a0, self.dense_blocks)
        if self.merge_mode == "last":
            d_v = a0.shape[-1]
            n = len(self.dense_blocks)
            # slice out v_K from the stack via a constant selector-free view
            stack = _last_slice(stack, n * d_v, (n + 1) * d_v)
        return self.merge(ad.concat_channels([u_res, stack]))

    def named_parameters(self, prefix: str):
        for i, b in enumerate(self.res_blocks):
            yield from b.named_parameters(f"{prefix}.res.{i}")
        for i, b in enumerate(self.dense_blocks):
            yield from b.named_parameters(f"{prefix}.dense.{i}")
        yield from self.merge.named_parameters(f"{prefix}.merge")


def _last_slice(x: Tensor, lo: int, hi: int) -> Tensor:
    """Channel slice [..., lo:hi] with split-style backward."""
    out, tape = ad._make_output(np.ascontiguousarray(x.data[..., lo:hi]), (x,), "channel_slice")
    if tape is not None:
        def _bw():
            g = out.grad
            if g is None:
                return
            full = np.zeros_like(x.data)
            full[..., lo:hi] = g
            x.accumulate_grad(full)
        tape.record(_bw)
    return out
