"""Full network: frozen ViT + FBNM/FBFE adapter + decoder head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import FBFE, FBNM, AdapterConfig, FeaturePyramid
from .backbone import BackboneConfig, ViTBackbone, freeze_backbone
from .head import Decoder, PredictionMask
from .nn import Module
from .optim import ParamSet
from .tensor import as_tensor


@dataclass
class ForwardTrace:
    """Attention maps of every FGSAttn instance, in execution order."""
    fbnm: list
    fbfe: list

    def attention_maps(self) -> list[tuple[str, object]]:
        out = [(f"fbnm_level{i + 1}", tr["attn"]) for i, tr in enumerate(self.fbnm)]
        out += [(f"fbfe_group{i + 1}", tr["attn"]) for i, tr in enumerate(self.fbfe)]
        return out


class FGSANet(Module):
    def __init__(self, bb_cfg: BackboneConfig, ad_cfg: AdapterConfig, seed: int = 0,
                 backbone: ViTBackbone | None = None):
        self.bb_cfg = bb_cfg
        self.ad_cfg = ad_cfg
        self.backbone = backbone if backbone is not None else ViTBackbone(bb_cfg)
        rng = np.random.default_rng(seed)
        self.adapter = _AdapterBundle(rng, bb_cfg, ad_cfg)
        self.head = Decoder(rng, ad_cfg.D)
        self.backbone.set_trainable(False)

    def param_set(self) -> ParamSet:
        ps = ParamSet(self.named_parameters())
        return freeze_backbone(ps)

    def trainable_set(self) -> ParamSet:
        return ParamSet((k, v) for k, v in self.param_set().items() if v.requires_grad)

    def features(self, image, trace: ForwardTrace | None = None) -> FeaturePyramid:
        """Final adapter pyramid for one [S, S, 3] image."""
        image = as_tensor(image)
        seq = self.backbone.embed(image)
        fbnm_traces = trace.fbnm if trace is not None else None
        seq, pyr = self.adapter.fbnm(image, seq, fbnm_traces)
        for gid, step in enumerate(self.adapter.fbfe):
            seq = self.backbone.run_group(seq, gid)
            tr = {} if trace is not None else None
            seq, pyr = step(seq, pyr, tr)
            if trace is not None:
                trace.fbfe.append(tr)
        return pyr

    def __call__(self, image, trace: ForwardTrace | None = None) -> PredictionMask:
        pyr = self.features(image, trace)
        s = self.bb_cfg.image_size
        return self.head(pyr, (s, s))


class _AdapterBundle(Module):
    def __init__(self, rng, bb_cfg: BackboneConfig, ad_cfg: AdapterConfig):
        self.fbnm = FBNM(rng, ad_cfg, bb_cfg.image_size, bb_cfg.embed_dim)
        m = bb_cfg.group_count
        self.fbfe = [FBFE(rng, ad_cfg, bb_cfg.grid, is_last=(i == m - 1)) for i in range(m)]


def full_forward(image, model: FGSANet, trace: ForwardTrace | None = None) -> FeaturePyramid:
    return model.features(image, trace)
