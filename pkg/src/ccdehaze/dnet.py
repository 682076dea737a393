"""Dehazing generator: 8-down / 8-up encoder-decoder with symmetric skips.

Every layer is a 4x4, stride-2, pad-1 (transposed) convolution. Encoder
layers are conv + batch norm + LeakyReLU, decoder layers deconv + batch norm +
ReLU. The first encoder layer and the last decoder layer carry no batch norm;
the last decoder layer ends in ``(tanh + 1) / 2`` so outputs lie in [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError

FULL_ENCODER = (64, 128, 256, 512, 512, 512, 512, 512)
FULL_DECODER = (512, 512, 512, 512, 256, 128, 64, 3)
SKIP_MODES = ("concatenate", "add")


def scale_width(channels: int, width_scale: float) -> int:
    return max(1, int(round(channels * width_scale)))


@dataclass
class GeneratorConfig:
    encoder_channels: tuple = FULL_ENCODER
    decoder_channels: tuple = FULL_DECODER
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    leaky_slope: float = 0.2
    skip_mode: str = "concatenate"
    width_scale: float = 1.0
    input_size: int = 256

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        if len(self.encoder_channels) != 8 or len(self.decoder_channels) != 8:
            raise ConfigError("encoder and decoder must each have 8 layers")
        if self.decoder_channels[-1] != 3:
            raise ConfigError("final decoder layer must emit 3 channels")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}")
        if self.width_scale <= 0:
            raise ConfigError("width_scale must be positive")
        if (self.kernel, self.stride, self.padding) != (4, 2, 1):
            # the 2x up/down trace below relies on this geometry
            raise ConfigError("only kernel 4, stride 2, padding 1 is supported")
        if self.input_size % 2 ** 8:
            raise ConfigError("input_size must be divisible by 256")
        if self.skip_mode == "add":
            enc, dec = self.scaled_encoder(), self.scaled_decoder()
            for j in range(1, 8):
                if dec[j - 1] != enc[7 - j]:
                    raise ConfigError(f"skip_mode='add' needs matching widths at decoder layer {j}")

    def scaled_encoder(self) -> list[int]:
        return [scale_width(c, self.width_scale) for c in self.encoder_channels]

    def scaled_decoder(self) -> list[int]:
        return [scale_width(c, self.width_scale) for c in self.decoder_channels[:-1]] + [3]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["decoder_channels"] = list(self.decoder_channels)
        return d


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        enc, dec = config.scaled_encoder(), config.scaled_decoder()
        k, s, p = config.kernel, config.stride, config.padding

        self.encoders = nn.ModuleList()
        in_ch = 3
        for i, out_ch in enumerate(enc):
            layers = [nn.Conv2d(in_ch, out_ch, k, s, p, bias=i == 0)]
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(config.leaky_slope))
            self.encoders.append(nn.Sequential(*layers))
            in_ch = out_ch

        self.decoders = nn.ModuleList()
        for j, out_ch in enumerate(dec):
            if j > 0 and config.skip_mode == "concatenate":
                in_ch = in_ch + enc[7 - j]
            last = j == 7
            layers = [nn.ConvTranspose2d(in_ch, out_ch, k, s, p, bias=last)]
            if not last:
                layers += [nn.BatchNorm2d(out_ch), nn.ReLU()]
            self.decoders.append(nn.Sequential(*layers))
            in_ch = out_ch

    def forward(self, x: torch.Tensor, zero_skips=()) -> torch.Tensor:
        """Map N x 3 x H x W hazy images in [0, 1] to dehazed images.

        ``zero_skips`` lists encoder indices (0..6) whose skip tensor is
        replaced by zeros; used to probe the wiring.
        """
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        if x.shape[2] % 2 ** 8 or x.shape[3] % 2 ** 8:
            raise ShapeError(f"spatial size must be divisible by 256, got {tuple(x.shape[2:])}")
        h = x * 2 - 1
        skips = []
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
        for j, dec in enumerate(self.decoders):
            if j > 0:
                i = 7 - j
                skip = torch.zeros_like(skips[i]) if i in zero_skips else skips[i]
                h = torch.cat([h, skip], 1) if self.config.skip_mode == "concatenate" else h + skip
            h = dec(h)
        return (torch.tanh(h) + 1) / 2

    def spatial_trace(self, size: int) -> list[int]:
        """Spatial extent after each encoder layer then each decoder layer."""
        c = self.config
        trace, n = [], size
        for _ in self.encoders:
            n = (n + 2 * c.padding - c.kernel) // c.stride + 1
            trace.append(n)
        for _ in self.decoders:
            n = (n - 1) * c.stride - 2 * c.padding + c.kernel
            trace.append(n)
        return trace


def init_weights(module: nn.Module, generator: torch.Generator, std: float = 0.02) -> None:
    """N(0, std) for (de)conv and linear weights, N(1, std) for norm scales, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, std, generator=generator)
            nn.init.zeros_(m.bias)


def build_generator(config: GeneratorConfig | None = None, seed: int = 0) -> Generator:
    model = Generator(config or GeneratorConfig())
    init_weights(model, torch.Generator().manual_seed(int(seed)))
    return model


def dehaze_forward(model: Generator, hazy: torch.Tensor) -> torch.Tensor:
    """Run the generator on N x 3 x S x S input, S being the configured input size."""
    size = model.config.input_size
    if hazy.dim() != 4 or tuple(hazy.shape[1:]) != (3, size, size):
        raise ShapeError(f"expected N x 3 x {size} x {size}, got {tuple(hazy.shape)}")
    return model(hazy)
