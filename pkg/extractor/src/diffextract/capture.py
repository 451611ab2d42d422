"""Forward hooks capturing attention projections during a denoising step."""

from __future__ import annotations

import torch


class LayerTagError(ValueError):
    """The configured capture layer does not exist in the model."""


class AttentionCapture:
    """Context manager hooking one U-Net layer's attention projections.

    Captures, at full multi-head-concatenated width:
      q_sa, k_sa    query/key projections of the layer's self-attention
      q_ca          query projection of the adjacent cross-attention
      token_keys    key-projected text tokens of that cross-attention
    """

    def __init__(self, unet, layer_tag: str):
        modules = dict(unet.named_modules())
        if layer_tag == "decoder.last":
            indices = sorted(
                int(name.split(".")[1]) for name in modules
                if name.startswith("decoder.") and name.count(".") == 1
            )
            if not indices:
                raise LayerTagError("model has no decoder layers")
            layer_tag = f"decoder.{indices[-1]}"
        self.layer_tag = layer_tag
        self._targets = {}
        for key, sub in (("q_sa", "attn_self.to_q"), ("k_sa", "attn_self.to_k"),
                         ("q_ca", "attn_cross.to_q"),
                         ("token_keys", "attn_cross.to_k")):
            name = f"{layer_tag}.{sub}"
            if name not in modules:
                raise LayerTagError(f"layer tag {layer_tag!r} not found "
                                    f"(missing module {name!r})")
            self._targets[key] = modules[name]
        self.tensors: dict[str, torch.Tensor] = {}
        self._handles = []

    def __enter__(self):
        for key, module in self._targets.items():
            def hook(mod, args, output, key=key):
                self.tensors[key] = output.detach()
            self._handles.append(module.register_forward_hook(hook))
        return self

    def __exit__(self, *exc):
        for handle in self._handles:
            handle.remove()
        self._handles.clear()
        return False

    def grids(self, h: int, w: int) -> dict:
        """Spatial tensors reshaped to (h, w, d) float32 numpy arrays."""
        out = {}
        for key in ("q_sa", "k_sa", "q_ca"):
            tokens = self.tensors[key][0]          # (h*w, d)
            if tokens.shape[0] != h * w:
                raise ValueError(
                    f"{key} has {tokens.shape[0]} tokens, expected {h * w}"
                )
            out[key] = tokens.reshape(h, w, -1).numpy().astype("float32")
        out["token_keys"] = (
            self.tensors["token_keys"][0].numpy().astype("float32")
        )
        return out
