"""Full segmentation network: encoder-decoder over wavelet subbands with an
anatomical prior pyramid, plus the ablation toggles that strip each
mechanism back to a plain max-pool U-Net."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .blocks import (DecoderStage, InverseWaveletUpsample, MultiScaleFusion,
                     PriorProjector, ResidualAttentionBlock, TrilinearUpsample,
                     WaveletDownsample)
from .errors import ConfigError, DimensionError
from .layers import Conv3d, ConvBNReLU, DoubleConv, Module, ModuleList


@dataclass
class NetworkConfig:
    base_width: int = 8
    scales: int = 4
    use_mpe: bool = True
    use_rfe: bool = True
    use_msff: bool = True
    use_wt_iwt: bool = True
    scale_init: float = 0.1
    alpha_init: float = 0.5
    in_channels: int = 1
    out_channels: int = 1

    def validate(self):
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")
        if self.scales < 2:
            raise ConfigError(f"scales must be >= 2, got {self.scales}")
        if not 0.0 < self.alpha_init < 1.0:
            raise ConfigError(f"alpha_init must lie in (0, 1), got {self.alpha_init}")
        return self

    @property
    def stage_channels(self):
        """Width at stage i (1-based): C * 2**(i-1)."""
        return [self.base_width * 2 ** i for i in range(self.scales)]

    @property
    def divisor(self):
        return 2 ** self.scales

    def toggles(self):
        return {"use_mpe": self.use_mpe, "use_rfe": self.use_rfe,
                "use_msff": self.use_msff, "use_wt_iwt": self.use_wt_iwt}


class MaxPoolDownsample(Module):
    """Baseline downsampling; returns no subbands for the skip path."""

    def forward(self, x):
        return ad.max_pool3d(x), None


class WaveSegNet(Module):
    """Encoder-decoder segmentation network over (B, 1, D, H, W) volumes.

    forward(volume, prior) -> single-channel logits at input resolution.
    The prior is a processed anatomy mask with the same spatial dims; it is
    projected down a learnable pyramid and added to each encoder input from
    stage 2 through the bottleneck (stage 1 runs at full resolution, one
    level above the first pyramid output). Toggles swap each mechanism for
    its plain counterpart.
    """

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        C = cfg.base_width
        S = cfg.scales
        widths = cfg.stage_channels  # [C, 2C, ..., C*2**(S-1)]

        self.stem = ConvBNReLU(cfg.in_channels, C, 3, rng, padding=1)

        enc_block = ResidualAttentionBlock if cfg.use_rfe else DoubleConv
        ins = [C] + widths[:-1]
        self.encoder = ModuleList([enc_block(ins[i], widths[i], rng) for i in range(S)])
        if cfg.use_wt_iwt:
            self.down = ModuleList([WaveletDownsample(widths[i], rng) for i in range(S)])
        else:
            self.down = ModuleList([MaxPoolDownsample() for _ in range(S)])
        self.bottleneck = enc_block(widths[-1], widths[-1], rng)

        if cfg.use_mpe:
            self.prior_scale = Parameter(np.asarray(cfg.scale_init, dtype=np.float32))
            proj_ins = [cfg.in_channels] + widths[:-1]
            self.prior_proj = ModuleList(
                [PriorProjector(proj_ins[i], widths[i], rng) for i in range(S)])

        deep = widths[-1:] + widths[:0:-1]  # deep-feature width at decoder stage S..1
        if cfg.use_wt_iwt:
            ups = [InverseWaveletUpsample(deep[j], widths[S - 1 - j], rng, cfg.alpha_init)
                   for j in range(S)]
        else:
            ups = [TrilinearUpsample(deep[j], widths[S - 1 - j], rng) for j in range(S)]
        self.up = ModuleList(ups)  # index 0 = deepest stage
        self.refine = ModuleList([DecoderStage(widths[S - 1 - j], rng) for j in range(S)])

        if cfg.use_msff:
            self.head = MultiScaleFusion(widths, rng)
        else:
            self.head = Conv3d(C, cfg.out_channels, 1, rng)

    # -- helpers ----------------------------------------------------------
    def _check_input(self, volume, prior):
        if volume.ndim != 5 or volume.shape[1] != self.cfg.in_channels:
            raise ConfigError(
                f"volume must be (B, {self.cfg.in_channels}, D, H, W), got {volume.shape}")
        for name, n in zip("DHW", volume.shape[2:]):
            if n % self.cfg.divisor:
                raise ConfigError(
                    f"axis {name} = {n} not divisible by 2**scales = {self.cfg.divisor}")
        if self.cfg.use_mpe:
            if prior is None:
                raise ConfigError("use_mpe=True requires a prior mask")
            if prior.shape[0] != volume.shape[0] or prior.shape[1] != 1 \
                    or prior.shape[2:] != volume.shape[2:]:
                raise DimensionError(
                    f"prior shape {prior.shape} incompatible with volume {volume.shape}")

    def _prior_pyramid(self, prior):
        levels = []
        m = prior
        for proj in self.prior_proj:
            m = proj(m, self.prior_scale)
            levels.append(m)
        return levels

    # -- forward ----------------------------------------------------------
    def forward(self, volume, prior=None):
        volume = ad._wrap(volume)
        prior = ad._wrap(prior) if prior is not None else None
        self._check_input(volume, prior)
        cfg = self.cfg
        S = cfg.scales
        widths = cfg.stage_channels

        priors = self._prior_pyramid(prior) if cfg.use_mpe else None

        x = self.stem(volume)
        skips, wskips = [], []
        for i in range(S):
            if i > 0 and priors is not None:
                x = x + priors[i - 1]
            r = self.encoder[i](x)
            assert r.shape[1] == widths[i], (r.shape, widths[i])
            x, w = self.down[i](r)
            skips.append(r)
            wskips.append(w)
        if priors is not None:
            x = x + priors[S - 1]
        x = self.bottleneck(x)

        dfs = [None] * S
        for j in range(S):  # j = 0 is the deepest decoder stage
            stage = S - 1 - j
            y = self.up[j](x, wskips[stage])
            x = self.refine[j](y, skips[stage])
            dfs[stage] = x

        if cfg.use_msff:
            return self.head(dfs)
        return self.head(dfs[0])
