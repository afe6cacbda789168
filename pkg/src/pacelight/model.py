"""PACE operator blocks, full model assembly, and the two-stage cascade.

Feature tensors travel through the network as real tensors of shape
(B, 2C, M, N): C complex channels stored as [real half | imag half].
They are converted to true complex tensors only inside the spectral
integral cores and converted back on exit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from . import spectral
from .errors import IncompatibleCheckpoint, ModeOrderingViolation, ShapeMismatch
from .spectral import (
    CrossAxisKernel,
    ModeSpec,
    SpectralKernel1D,
    cross_axis_apply,
    init_kernel_weights,
    single_axis_factorized,
)

CHECKPOINT_VERSION = 1
STAGE_ONE_IN_CHANNELS = 8   # eps re/im, source re/im, prior_x re/im, prior_z re/im
STAGE_TWO_IN_CHANNELS = 4   # stage-I prediction re/im, eps re/im


@dataclass(frozen=True)
class ModelConfig:
    channels: int                 # complex feature channels C
    num_blocks: int
    modes: ModeSpec
    groups: int = 1
    in_channels: int = STAGE_ONE_IN_CHANNELS
    leading_single_axis_blocks: int = 2
    ffn_expansion: int = 4
    final_drop_rate: float = 0.1  # stochastic depth, scaled linearly with depth

    def __post_init__(self):
        if self.channels % self.groups:
            raise ShapeMismatch(
                f"channels {self.channels} not divisible by groups {self.groups}")
        if self.num_blocks < self.leading_single_axis_blocks:
            raise ValueError("num_blocks must cover the leading single-axis blocks")
        if not (0 <= self.final_drop_rate < 1):
            raise ValueError("final_drop_rate must lie in [0, 1)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["modes"] = {"modes_x": self.modes.modes_x, "modes_z": self.modes.modes_z}
        return d

    @staticmethod
    def from_json(d: dict) -> "ModelConfig":
        d = dict(d)
        d["modes"] = ModeSpec(**d["modes"])
        return ModelConfig(**d)


@dataclass(frozen=True)
class CascadeConfig:
    stage_one: ModelConfig
    stage_two: ModelConfig
    distillation: bool = True

    def __post_init__(self):
        m1, m2 = self.stage_one.modes, self.stage_two.modes
        if m2.modes_x < m1.modes_x or m2.modes_z < m1.modes_z:
            raise ModeOrderingViolation(
                "stage-II must retain at least as many modes per axis as stage-I")
        if self.stage_two.in_channels != STAGE_TWO_IN_CHANNELS:
            raise ShapeMismatch("stage-II input is [pred re/im, eps re/im]")

    def to_json(self) -> dict:
        return {
            "stage_one": self.stage_one.to_json(),
            "stage_two": self.stage_two.to_json(),
            "distillation": self.distillation,
        }

    @staticmethod
    def from_json(d: dict) -> "CascadeConfig":
        return CascadeConfig(
            stage_one=ModelConfig.from_json(d["stage_one"]),
            stage_two=ModelConfig.from_json(d["stage_two"]),
            distillation=bool(d["distillation"]),
        )


def real_to_complex(t: torch.Tensor) -> torch.Tensor:
    c = t.shape[1] // 2
    return torch.complex(t[:, :c], t[:, c:])


def complex_to_real(z: torch.Tensor) -> torch.Tensor:
    return torch.cat([z.real, z.imag], dim=1)


class Stem(nn.Module):
    """Two spatially-local 3x3 filters projecting the observation to 2C channels."""

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 2 * channels, 3, padding=1)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(2 * channels, 2 * channels, 3, padding=1)

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class Head(nn.Module):
    """Two point-wise layers projecting features to one complex field."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * channels, 2 * channels, 1)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(2 * channels, 2, 1)

    def forward(self, x):
        y = self.conv2(self.act(self.conv1(x)))
        return torch.complex(y[:, 0], y[:, 1])


class FeedForward(nn.Module):
    def __init__(self, channels: int, expansion: int):
        super().__init__()
        width = 2 * channels
        self.conv1 = nn.Conv2d(width, expansion * width, 1)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(expansion * width, width, 1)

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class CrossAxisCore(nn.Module):
    """Grouped cross-axis spectral integral over the complex channel view."""

    def __init__(self, channels: int, modes: ModeSpec, groups: int,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.complex64):
        super().__init__()
        total = modes.modes_x + modes.modes_z
        self.groups = groups
        self.weight_v = nn.Parameter(init_kernel_weights(
            modes.modes_x, channels, channels, groups, total, generator, dtype))
        self.weight_h = nn.Parameter(init_kernel_weights(
            modes.modes_z, channels, channels, groups, total, generator, dtype))

    def forward(self, x):
        z = real_to_complex(x)
        k = CrossAxisKernel(
            SpectralKernel1D(spectral.VERTICAL, self.weight_v),
            SpectralKernel1D(spectral.HORIZONTAL, self.weight_h))
        return complex_to_real(cross_axis_apply(k, z))


class SingleAxisCore(nn.Module):
    """Additive per-axis spectral integral (the leading-block operator)."""

    def __init__(self, channels: int, modes: ModeSpec, groups: int = 1,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.complex64):
        super().__init__()
        total = modes.modes_x + modes.modes_z
        self.groups = groups
        self.weight_v = nn.Parameter(init_kernel_weights(
            modes.modes_x, channels, channels, groups, total, generator, dtype))
        self.weight_h = nn.Parameter(init_kernel_weights(
            modes.modes_z, channels, channels, groups, total, generator, dtype))

    def forward(self, x):
        z = real_to_complex(x)
        kernels = [SpectralKernel1D(spectral.VERTICAL, self.weight_v),
                   SpectralKernel1D(spectral.HORIZONTAL, self.weight_h)]
        return complex_to_real(single_axis_factorized(kernels, z))


class OperatorBlock(nn.Module):
    """Pre-norm block with projection unit, spectral core, self-weight gate,
    and double skip: out = v + FFN(K(prenorm(v)) + v)."""

    def __init__(self, channels: int, modes: ModeSpec, groups: int,
                 ffn_expansion: int, core: str, drop_rate: float = 0.0,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.complex64):
        super().__init__()
        width = 2 * channels
        self.norm = nn.GroupNorm(width, width, eps=1e-5)
        self.project = nn.Conv2d(width, width, 1)
        self.act = nn.GELU()
        if core == "cross_axis":
            self.core = CrossAxisCore(channels, modes, groups, generator, dtype)
        elif core == "single_axis":
            self.core = SingleAxisCore(channels, modes, groups, generator, dtype)
        else:
            raise ValueError(f"unknown core {core!r}")
        self.gate = nn.Conv2d(width, width, 1)
        self.ffn = FeedForward(channels, ffn_expansion)
        self.drop_rate = drop_rate

    def residual(self, v):
        u = self.act(self.project(self.norm(v)))
        y = self.core(u) * torch.sigmoid(self.gate(u))
        return self.ffn(y + v)

    def forward(self, v, generator: torch.Generator | None = None):
        if self.training and self.drop_rate > 0:
            keep = 1.0 - self.drop_rate
            coin = torch.rand((), generator=generator, device=v.device)
            if coin.item() >= keep:
                return v
            return v + self.residual(v) / keep
        return v + self.residual(v)


def _reinit_convs(module: nn.Module, generator: torch.Generator) -> None:
    """Redraw conv weights from the given generator so model construction is
    fully reproducible (the default init consumes the global RNG)."""
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                bound = 1.0 / math.sqrt(m.weight[0].numel())
                m.weight.uniform_(-bound, bound, generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)


class PaceModel(nn.Module):
    """stem -> leading single-axis blocks -> cross-axis PACE blocks -> head."""

    def __init__(self, config: ModelConfig, generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.complex64):
        super().__init__()
        self.config = config
        c = config.channels
        self.stem = Stem(config.in_channels, c)
        blocks = []
        k_total = config.num_blocks
        for k in range(k_total):
            core = "single_axis" if k < config.leading_single_axis_blocks else "cross_axis"
            groups = 1 if core == "single_axis" else config.groups
            # linear stochastic-depth schedule, shallowest block never dropped
            drop = config.final_drop_rate * k / max(k_total - 1, 1)
            blocks.append(OperatorBlock(
                c, config.modes, groups, config.ffn_expansion, core,
                drop_rate=drop, generator=generator, dtype=dtype))
        self.blocks = nn.ModuleList(blocks)
        self.head = Head(c)
        if generator is not None:
            _reinit_convs(self, generator)
        if dtype == torch.complex128:
            # real-valued submodules follow the complex precision
            for m in (self.stem, self.head, *self.blocks):
                for p in m.parameters():
                    if not p.is_complex():
                        p.data = p.data.double()

    def forward(self, x, generator: torch.Generator | None = None,
                trace: bool = False, feature_gate: torch.Tensor | None = None):
        """Returns the complex prediction; with trace=True also returns the
        penultimate block's features (the cross-stage tap)."""
        if x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        v = self.stem(x)
        if feature_gate is not None:
            v = v * feature_gate
        tap = None
        for k, block in enumerate(self.blocks):
            v = block(v, generator=generator)
            if k == len(self.blocks) - 2:
                tap = v
        if tap is None:  # single-block model: tap the final features
            tap = v
        pred = self.head(v)
        if trace:
            return pred, tap
        return pred


class CascadeModel(nn.Module):
    """Two-stage cascade: stage-I predicts a rough field from the raw
    observation; stage-II refines it from (prediction, permittivity), with an
    optional Linear->Sigmoid cross-stage distillation gate multiplied into
    stage-II's feature stream after its stem."""

    def __init__(self, config: CascadeConfig,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.complex64):
        super().__init__()
        self.config = config
        self.stage_one = PaceModel(config.stage_one, generator, dtype)
        self.stage_two = PaceModel(config.stage_two, generator, dtype)
        if config.distillation:
            self.distill = nn.Conv2d(
                2 * config.stage_one.channels, 2 * config.stage_two.channels, 1)
            if generator is not None:
                _reinit_convs(self.distill, generator)
            if dtype == torch.complex128:
                self.distill.weight.data = self.distill.weight.data.double()
                self.distill.bias.data = self.distill.bias.data.double()
        else:
            self.distill = None

    def forward(self, x, generator: torch.Generator | None = None):
        pred_one, tap = self.stage_one(x, generator=generator, trace=True)
        eps_channels = x[:, 0:2]
        x_two = torch.cat(
            [pred_one.real.unsqueeze(1), pred_one.imag.unsqueeze(1), eps_channels],
            dim=1)
        gate = torch.sigmoid(self.distill(tap)) if self.distill is not None else None
        pred_two = self.stage_two(x_two, generator=generator, feature_gate=gate)
        return pred_one, pred_two


def count_parameters(model: nn.Module) -> int:
    """Total real-parameter count; complex arrays count twice."""
    return sum(p.numel() * (2 if p.is_complex() else 1) for p in model.parameters())


def named_parameter_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy().copy()
            for name, p in model.named_parameters()}


def save_checkpoint(path, model: nn.Module, config_json: dict,
                    extra: dict | None = None) -> None:
    """Versioned container of named arrays plus the model config as JSON."""
    payload = {f"param/{k}": v for k, v in named_parameter_arrays(model).items()}
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": config_json,
        "grad_convention": "steepest descent on the real loss is -grad "
                           "(complex params stored as complex arrays)",
        "extra": extra or {},
    }
    payload["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (meta, named arrays)."""
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise IncompatibleCheckpoint(f"{path} is not a pacelight checkpoint")
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise IncompatibleCheckpoint(f"unsupported checkpoint version in {path}")
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    return meta, params


def apply_parameters(model: nn.Module, params: dict[str, np.ndarray]) -> None:
    own = dict(model.named_parameters())
    if set(own) != set(params):
        missing = set(own) ^ set(params)
        raise IncompatibleCheckpoint(f"parameter name mismatch: {sorted(missing)[:4]}...")
    with torch.no_grad():
        for name, p in own.items():
            arr = torch.from_numpy(params[name])
            if arr.shape != p.shape:
                raise IncompatibleCheckpoint(
                    f"shape mismatch for {name}: {tuple(arr.shape)} vs {tuple(p.shape)}")
            p.copy_(arr.to(p.dtype))


def model_from_checkpoint(path, dtype: torch.dtype = torch.complex64) -> nn.Module:
    meta, params = load_checkpoint(path)
    cfg = meta["config"]
    if "stage_one" in cfg:
        model = CascadeModel(CascadeConfig.from_json(cfg), dtype=dtype)
    else:
        model = PaceModel(ModelConfig.from_json(cfg), dtype=dtype)
    apply_parameters(model, params)
    return model
