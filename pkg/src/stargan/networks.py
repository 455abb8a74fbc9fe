"""Bind NetworkSpec tables to torch modules (NCHW tensors)."""
from __future__ import annotations

import torch
from torch import nn

from .labels import replicate_batch
from .netspec import CONV, DECONV, LEAKY_SLOPE, RESIDUAL, LayerSpec, NetworkSpec, SpecError


def _activation(name: str) -> nn.Module:
    return {
        "relu": nn.ReLU(),
        "leaky_relu": nn.LeakyReLU(LEAKY_SLOPE),
        "tanh": nn.Tanh(),
        "none": nn.Identity(),
    }[name]


def _conv(layer: LayerSpec, c_in: int, transposed: bool = False) -> nn.Module:
    cls = nn.ConvTranspose2d if transposed else nn.Conv2d
    return cls(c_in, layer.out_channels, layer.kernel, layer.stride, layer.padding, bias=True)


def _norm(layer: LayerSpec) -> nn.Module:
    if layer.norm == "instance":
        return nn.InstanceNorm2d(layer.out_channels, affine=True, track_running_stats=False)
    return nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, layer: LayerSpec):
        super().__init__()
        c = layer.out_channels
        self.body = nn.Sequential(
            _conv(layer, c), _norm(layer), _activation(layer.activation),
            _conv(layer, c), _norm(layer),
        )

    def forward(self, x):
        return x + self.body(x)


def build_layer(layer: LayerSpec, c_in: int) -> nn.Module:
    if layer.kind == RESIDUAL:
        return ResidualBlock(layer)
    conv = _conv(layer, c_in, transposed=layer.kind == DECONV)
    return nn.Sequential(conv, _norm(layer), _activation(layer.activation))


def build_stack(spec: NetworkSpec) -> nn.Sequential:
    mods, c = [], spec.input_channels
    for layer in spec.layers:
        mods.append(build_layer(layer, c))
        c = layer.out_channels
    return nn.Sequential(*mods)


class Generator(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.is_discriminator:
            raise SpecError("generator spec must not carry discriminator heads")
        self.spec = spec
        self.label_dim = spec.input_channels - 3
        self.main = build_stack(spec)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """x: (B,3,h,w) in [-1,1]; c: (B,dim) label vectors or (B,dim,h,w) replicated maps."""
        if c.dim() == 2:
            c = replicate_batch(c, x.size(2), x.size(3))
        return self.main(torch.cat([x, c], dim=1))


class Discriminator(nn.Module):
    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if not spec.is_discriminator:
            raise SpecError("discriminator spec needs src/cls heads")
        self.spec = spec
        self.main = build_stack(spec)
        c = spec.output_channels
        self.src = _conv(spec.src_head, c)
        self.cls = _conv(spec.cls_head, c)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the (B,1,gh,gw) patch score map and (B,n_d) class logits."""
        h = self.main(x)
        return self.src(h), self.cls(h).flatten(1)


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=generator)
                m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def materialize(spec: NetworkSpec, seed: int) -> nn.Module:
    net = Discriminator(spec) if spec.is_discriminator else Generator(spec)
    init_weights(net, torch.Generator().manual_seed(int(seed)))
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def require_double_backward() -> None:
    """The gradient penalty differentiates through a gradient; fail loudly if unsupported."""
    x = torch.randn(1, 2, 4, 4, requires_grad=True)
    net = nn.Sequential(nn.Conv2d(2, 2, 3, padding=1), nn.LeakyReLU(LEAKY_SLOPE))
    (g,) = torch.autograd.grad(net(x).pow(2).sum(), x, create_graph=True)
    g.pow(2).sum().backward()
    if net[0].weight.grad is None:
        raise RuntimeError("second-order gradients are unavailable; the gradient penalty cannot run")
