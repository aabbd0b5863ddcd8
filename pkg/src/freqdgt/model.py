"""The assembled network: FAP -> ADGL -> MSTT -> disentanglement head."""

from __future__ import annotations

import torch
from torch import nn

from .adgl import ADGL
from .config import RunConfig
from .disentangle import DisentangleHead, aggregate
from .fap import FAP
from .mstt import MSTT


class FreqDGT(nn.Module):
    def __init__(self, cfg: RunConfig, masks, n_channels: int, subject_ids):
        super().__init__()
        masks = torch.as_tensor(masks)
        n_bins = masks.shape[-1]
        self.fap = FAP(masks, cfg.fap_hidden, cfg.fap_attention, cfg.fap_softmax,
                       cfg.fap_importance)
        self.adgl = ADGL(n_bins, cfg.d_r, cfg.d_g, cfg.cheb_order, cfg.gcn_mode, cfg.adjacency,
                         cfg.lmax_method)
        self.mstt = MSTT(n_channels * cfg.d_g, cfg.d_h, cfg.scales, cfg.n_heads, cfg.n_blocks,
                         cfg.mask_mode)
        # rPSD rows sum to 1; scaling by the bin count puts the mean bin value at 1
        self.input_scale = float(n_bins) if cfg.input_scale == "bins" else 1.0
        self.head = DisentangleHead(cfg.d_h, cfg.d_e, cfg.d_s, cfg.n_classes, subject_ids,
                                    cfg.disc_hidden, cfg.subject_probe)

    def embed(self, X: torch.Tensor) -> torch.Tensor:
        """``(..., S, C, F)`` features to the pooled representation ``(..., d_h)``."""
        return aggregate(self.mstt(self.adgl(self.fap(X * self.input_scale))))

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        """Emotion logits; uses only the subject-agnostic path."""
        return self.head.classifier(self.head.emotion_encode(self.embed(X)))

    def main_parameters(self):
        disc = {id(p) for p in self.head.disc_parameters()}
        return [p for p in self.parameters() if id(p) not in disc]

    @torch.no_grad()
    def inspect(self, X: torch.Tensor) -> dict:
        """Intermediate quantities for plots: band weights, adjacencies, scale weights."""
        Y, A, W = self.fap(X * self.input_scale, return_weights=True)
        H, A_s, A_d = self.adgl(Y, return_adjacency=True)
        _, details = self.mstt(H, return_details=True)
        return {"band_attention": A, "band_importance": W, "adj_shallow": A_s,
                "adj_deep": A_d, "scale_alpha": details[-1]["alpha"],
                "scale_attention": details[-1]["attention"]}
