"""Architecture blocks: prior projection, residual-attention encoding,
wavelet down/up-sampling, decoder refinement, and multi-scale fusion.

Channel convention per stage i (1-based): width C * 2**(i-1). Wavelet
downsampling preserves the channel count and halves resolution; channel
doubling happens at the next stage's encoder block.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import DimensionError
from .layers import BatchNorm3d, Conv3d, ConvBNReLU, Module, ModuleList
from .wavelet import channels_to_subbands, dwt3, iwt3, subbands_to_channels


class PriorProjector(Module):
    """One pyramid step: 1x1x1 channel adjustment, scaling by the shared
    learnable scalar, then 2x max pooling. The result matches the encoder
    input one stage deeper, where it is added elementwise."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv = Conv3d(cin, cout, 1, rng)

    def forward(self, m_prev, scale_param):
        return ad.max_pool3d(ad.scale(self.conv(m_prev), scale_param))


class ResidualAttentionBlock(Module):
    """Residual double conv with parallel channel and spatial attention.

    R = F(x) + skip(x) with F two 3x3x3 conv-BN-ReLU units; the skip is a
    1x1x1 projection when the channel count changes, identity otherwise.
    Output = sigmoid(conv1(GAP(R))) * R + sigmoid(conv7(mean_c ++ max_c)) * R.
    With all branch conv weights at zero the block is an exact identity
    (both gates land on 0.5).
    """

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.block1 = ConvBNReLU(cin, cout, 3, rng, padding=1)
        self.block2 = ConvBNReLU(cout, cout, 3, rng, padding=1)
        self.skip = Conv3d(cin, cout, 1, rng) if cin != cout else None
        self.ch_att = Conv3d(cout, cout, 1, rng)
        self.sp_att = Conv3d(2, 1, 7, rng, padding=3)

    def forward(self, x):
        r = self.block2(self.block1(x))
        r = r + (self.skip(x) if self.skip is not None else x)
        g_ch = ad.sigmoid(self.ch_att(ad.global_avg_pool(r)))
        sp_in = ad.concat_channels(ad.channel_mean(r), ad.channel_max(r))
        g_sp = ad.sigmoid(self.sp_att(sp_in))
        return ad.mul(g_ch, r) + ad.mul(g_sp, r)


class WaveletDownsample(Module):
    """Wavelet-domain downsampling at one encoder stage.

    Decomposes the stage feature into 8 subbands (kept raw for the skip
    path), packs them subband-major into 8C channels, refines with a
    grouped 3x3x3 conv (one group per subband) + BN + ReLU, unpacks, and
    fuses the refined subbands with per-subband scalar attention:
    a_k = sigmoid(conv1(GAP(subband k))) with the conv shared across k.
    Returns (fused half-resolution feature, raw subbands).
    """

    def __init__(self, channels, rng):
        super().__init__()
        self.grouped = Conv3d(8 * channels, 8 * channels, 3, rng, padding=1, groups=8)
        self.bn = BatchNorm3d(8 * channels)
        self.att = Conv3d(channels, 1, 1, rng)
        self.channels = channels

    def forward(self, x):
        w_raw = dwt3(x)
        packed = subbands_to_channels(w_raw)
        refined = ad.relu(self.bn(self.grouped(packed)))
        sub = channels_to_subbands(refined)
        fused = None
        for k in range(8):
            band = _take_subband(sub, k)
            a_k = ad.sigmoid(self.att(ad.global_avg_pool(band)))
            term = ad.mul(a_k, band)
            fused = term if fused is None else fused + term
        return fused, w_raw


def _take_subband(s, k):
    """Select subband k from a rank-6 tensor as a rank-5 tensor."""
    data = s.data[:, :, k]
    out = ad._make(data, (s,), "take_subband")
    if out.requires_grad:
        shape = s.shape

        def _bwd(g):
            gs = np.zeros(shape, dtype=g.dtype)
            gs[:, :, k] = g
            return (gs,)

        out._backward = _bwd
    return out


class InverseWaveletUpsample(Module):
    """Decoder upsampling through the synthesis filter bank.

    A 1x1x1 conv projects the deep feature into 8*Cout predicted subbands;
    these are blended with the encoder's raw subbands through a learnable
    alpha in [0, 1] (stored pre-sigmoid), and the blend is reconstructed to
    double resolution.
    """

    def __init__(self, cin, cout, rng, alpha_init=0.5):
        super().__init__()
        self.project = Conv3d(cin, 8 * cout, 1, rng)
        raw = float(np.log(alpha_init / (1.0 - alpha_init)))
        self.raw_alpha = Parameter(np.asarray(raw, dtype=np.float32))
        self.cout = cout

    def forward(self, x_deep, w_skip):
        if w_skip.shape[1] != self.cout or w_skip.shape[2] != 8:
            raise DimensionError(
                f"skip subbands {w_skip.shape} incompatible with {self.cout} output channels")
        if w_skip.shape[3:] != x_deep.shape[2:]:
            raise DimensionError(
                f"skip subband spatial dims {w_skip.shape[3:]} != deep feature {x_deep.shape[2:]}")
        s_pred = channels_to_subbands(self.project(x_deep))
        alpha = ad.sigmoid(self.raw_alpha)
        blend = ad.mul(alpha, s_pred) + ad.mul(1.0 - alpha, w_skip)
        return iwt3(blend)


class TrilinearUpsample(Module):
    """Baseline decoder upsampling: trilinear 2x followed by a 1x1x1 conv."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv = Conv3d(cin, cout, 1, rng)

    def forward(self, x_deep, w_skip=None):
        return self.conv(ad.trilinear_upsample(x_deep, 2))


class DecoderStage(Module):
    """Concatenate the upsampled feature with the stage skip and refine with
    two 3x3x3 conv-BN-ReLU units down to the stage width."""

    def __init__(self, channels, rng):
        super().__init__()
        self.block1 = ConvBNReLU(2 * channels, channels, 3, rng, padding=1)
        self.block2 = ConvBNReLU(channels, channels, 3, rng, padding=1)

    def forward(self, y, sk):
        return self.block2(self.block1(ad.concat_channels(y, sk)))


class MultiScaleFusion(Module):
    """Top-down fusion of the decoder features into single-channel logits.

    Every decoder feature is compressed to a unified width of 8. From the
    deepest level down: upsample the running feature, concatenate with the
    current compressed feature, derive voxel weights with a 1x1x1 conv +
    sigmoid, gate the current feature with them, refine with a 3x3x3 conv.
    The deeper signal steers the gate only; it never joins the content path
    directly. A final 1x1x1 conv yields the logits.
    """

    UNIFIED = 8

    def __init__(self, stage_channels, rng):
        super().__init__()
        u = self.UNIFIED
        self.compress = ModuleList([Conv3d(c, u, 1, rng) for c in stage_channels])
        self.gates = ModuleList(
            [Conv3d(2 * u, u, 1, rng) for _ in range(len(stage_channels) - 1)])
        self.refine = ModuleList(
            [Conv3d(u, u, 3, rng, padding=1) for _ in range(len(stage_channels) - 1)])
        self.head = Conv3d(u, 1, 1, rng)

    def forward(self, decoder_features):
        comp = [c(df) for c, df in zip(self.compress, decoder_features)]
        fused = comp[-1]
        for i in range(len(comp) - 2, -1, -1):
            up = ad.trilinear_upsample(fused, 2)
            w = ad.sigmoid(self.gates[i](ad.concat_channels(up, comp[i])))
            fused = self.refine[i](ad.mul(w, comp[i]))
        return self.head(fused)
