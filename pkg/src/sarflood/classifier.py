"""
Flood-candidate classification from feature stacks.

Two routes produce a :class:`FloodCandidateMask`: a deterministic rule on
the change indicators and deltas, and a small forward-only convolution
engine that runs externally trained early-fusion weights.

Network spec files hold one layer per line::

    conv <in> <out> <kernel> <stride> <padding> depthwise=<true|false>
    relu
    sigmoid

Weights are raw little-endian float32, bound layer by layer: the kernel
tensor (out x in x k x k row-major, or out x 1 x k x k for depthwise) and
then one bias per output channel.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import BINARY_NODATA, FeatureStack
from .metrics import compare_metrics
from .raster import Raster, TileWindow, iter_windows

INPUT_CHANNELS = 4


@dataclass(frozen=True)
class RuleConfig:
    min_delta_db: float = 3.0
    require_both_polarizations: bool = False

    def __post_init__(self):
        if not self.min_delta_db >= 0:
            raise ValueError("min_delta_db must be >= 0")


@dataclass(frozen=True)
class FloodCandidateMask:
    mask: Raster
    probability: Raster | None = None
    threshold: float | None = None


def _clause(change: Raster, delta: Raster, min_delta: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        big = np.abs(delta.as_float()) >= min_delta
    return (change.pixels == 1) & change.valid_mask() & big


def classify_rule(f: FeatureStack, cfg: RuleConfig = RuleConfig()) -> FloodCandidateMask:
    vv = _clause(f.change_to_water_vv, f.delta_vv, cfg.min_delta_db)
    vh = _clause(f.change_to_water_vh, f.delta_vh, cfg.min_delta_db)
    hit = (vv & vh) if cfg.require_both_polarizations else (vv | vh)
    valid = f.change_to_water_vv.valid_mask()
    out = np.where(valid, hit.astype(np.uint8), BINARY_NODATA).astype(np.uint8)
    return FloodCandidateMask(Raster(out, f.change_to_water_vv.transform, BINARY_NODATA))


# ------------------------------------------------------------ conv engine


class NetworkSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    depthwise: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise NetworkSpecError(f"kernel must be odd and positive, got {self.kernel}")
        if self.stride < 1 or self.padding < 0:
            raise NetworkSpecError("stride must be >= 1 and padding >= 0")
        if min(self.in_channels, self.out_channels) < 1:
            raise NetworkSpecError("channel counts must be positive")
        if self.depthwise and self.in_channels != self.out_channels:
            raise NetworkSpecError("depthwise conv needs in_channels == out_channels")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        fan_in = 1 if self.depthwise else self.in_channels
        return (self.out_channels, fan_in, self.kernel, self.kernel)

    @property
    def n_params(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_channels

    @property
    def preserves_size(self) -> bool:
        return self.stride == 1 and self.padding == self.kernel // 2


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass
class ConvNet:
    layers: list
    input_channels: int = INPUT_CHANNELS
    weights: list = field(default_factory=list)  # (kernel, bias) per conv layer

    def __post_init__(self):
        if not self.layers:
            raise NetworkSpecError("network has no layers (a sigmoid head is required)")
        channels = self.input_channels
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2d):
                if layer.in_channels != channels:
                    raise NetworkSpecError(
                        f"layer {i}: expects {layer.in_channels} input channels, gets {channels}"
                    )
                channels = layer.out_channels
        if not isinstance(self.layers[-1], Sigmoid):
            raise NetworkSpecError("final layer must be sigmoid")
        if channels != 1:
            raise NetworkSpecError(f"network outputs {channels} channels, expected 1")

    @property
    def convs(self) -> list[Conv2d]:
        return [layer for layer in self.layers if isinstance(layer, Conv2d)]

    @property
    def n_params(self) -> int:
        return sum(c.n_params for c in self.convs)

    @property
    def bound(self) -> bool:
        return len(self.weights) == len(self.convs)

    @property
    def preserves_size(self) -> bool:
        return all(c.preserves_size for c in self.convs)

    @property
    def halo(self) -> int:
        """Pixels of context each output pixel depends on, per side."""
        return sum(c.kernel // 2 for c in self.convs)

    def bind(self, flat) -> "ConvNet":
        flat = np.asarray(flat, dtype=np.float32).ravel()
        expected = self.n_params
        if flat.size != expected:
            raise NetworkSpecError(
                f"weight count mismatch: expected {expected} float32 values, found {flat.size}"
            )
        weights = []
        pos = 0
        for conv in self.convs:
            n = int(np.prod(conv.weight_shape))
            kernel = flat[pos:pos + n].reshape(conv.weight_shape).astype(np.float64)
            pos += n
            bias = flat[pos:pos + conv.out_channels].astype(np.float64)
            pos += conv.out_channels
            weights.append((kernel, bias))
        return ConvNet(list(self.layers), self.input_channels, weights)

    def flat_weights(self) -> np.ndarray:
        parts = []
        for kernel, bias in self.weights:
            parts += [kernel.ravel(), bias.ravel()]
        return np.concatenate(parts).astype(np.float32) if parts else np.zeros(0, np.float32)


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise NetworkSpecError(f"bad boolean {text!r}")


def parse_network_spec(text: str) -> ConvNet:
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].lower()
        try:
            if kind == "conv":
                nums = [p for p in parts[1:] if "=" not in p]
                opts = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
                if len(nums) != 5:
                    raise NetworkSpecError("conv needs: in out kernel stride padding")
                unknown = set(opts) - {"depthwise"}
                if unknown:
                    raise NetworkSpecError(f"unknown conv options {sorted(unknown)}")
                c_in, c_out, k, s, p = (int(n) for n in nums)
                layers.append(Conv2d(c_in, c_out, k, s, p, _parse_bool(opts.get("depthwise", "false"))))
            elif kind == "relu" and len(parts) == 1:
                layers.append(ReLU())
            elif kind == "sigmoid" and len(parts) == 1:
                layers.append(Sigmoid())
            else:
                raise NetworkSpecError(f"unknown layer {line!r}")
        except (NetworkSpecError, ValueError) as exc:
            raise NetworkSpecError(f"line {lineno}: {exc}") from None
    return ConvNet(layers)


def format_network_spec(net: ConvNet) -> str:
    lines = []
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            lines.append(
                f"conv {layer.in_channels} {layer.out_channels} {layer.kernel} {layer.stride} "
                f"{layer.padding} depthwise={'true' if layer.depthwise else 'false'}"
            )
        elif isinstance(layer, ReLU):
            lines.append("relu")
        else:
            lines.append("sigmoid")
    return "\n".join(lines) + "\n"


def load_weights(spec_path, weights_path) -> ConvNet:
    net = parse_network_spec(Path(spec_path).read_text())
    raw = Path(weights_path).read_bytes()
    if len(raw) % 4:
        raise NetworkSpecError(
            f"weight file size {len(raw)} is not a multiple of 4 bytes "
            f"(expected {net.n_params} float32 values)"
        )
    return net.bind(np.frombuffer(raw, dtype="<f4"))


def save_weights(net: ConvNet, path) -> None:
    Path(path).write_bytes(net.flat_weights().astype("<f4").tobytes())


def _conv_forward(x: np.ndarray, conv: Conv2d, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # Accumulate one kernel tap at a time with elementwise ops so every output
    # pixel sees the same operation order whatever the array extent.
    c, h, w = x.shape
    p, k, s = conv.padding, conv.kernel, conv.stride
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"input {h}x{w} too small for kernel {k} with padding {p}")
    out = np.empty((conv.out_channels, oh, ow))
    out[:] = bias[:, None, None]
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy:dy + s * (oh - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s]
            if conv.depthwise:
                out += kernel[:, 0, dy, dx][:, None, None] * patch
            else:
                for i in range(c):
                    out += kernel[:, i, dy, dx][:, None, None] * patch[i][None]
    return out


def forward(net: ConvNet, x: np.ndarray, inside: np.ndarray | None = None) -> np.ndarray:
    """Run the network on a (channels, height, width) array.

    ``inside`` marks pixels that belong to the image; activations elsewhere
    are forced to zero after every conv layer so a haloed tile reproduces
    the zero padding seen at the true image border.
    """
    if not net.bound:
        raise ValueError("network weights are not bound")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != net.input_channels:
        raise ValueError(
            f"expected input of shape ({net.input_channels}, H, W), got {x.shape}"
        )
    weights = iter(net.weights)
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            kernel, bias = next(weights)
            x = _conv_forward(x, layer, kernel, bias)
            if inside is not None:
                x = x * inside
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0.0)
        else:
            z = np.exp(-np.abs(x))  # never overflows
            x = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return x


def _infer_window(net: ConvNet, x: np.ndarray, win: TileWindow) -> np.ndarray:
    _, h, w = x.shape
    halo = net.halo
    r0, r1 = win.row_off - halo, win.row_off + win.height + halo
    c0, c1 = win.col_off - halo, win.col_off + win.width + halo
    ext = np.zeros((x.shape[0], r1 - r0, c1 - c0))
    inside = np.zeros((r1 - r0, c1 - c0))
    sr0, sr1 = max(r0, 0), min(r1, h)
    sc0, sc1 = max(c0, 0), min(c1, w)
    ext[:, sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = x[:, sr0:sr1, sc0:sc1]
    inside[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = 1.0
    y = forward(net, ext, inside)
    return y[0, halo:halo + win.height, halo:halo + win.width]


def infer(
    net: ConvNet,
    f: FeatureStack,
    threshold: float = 0.5,
    tile: TileWindow | int | None = None,
    jobs: int = 1,
) -> FloodCandidateMask:
    """Apply a bound network to a feature stack.

    ``tile`` may be a single window (only that window is evaluated, the
    rest of the output is nodata) or a tile size for tiled evaluation of the
    whole scene. Tiles carry a halo so results match untiled inference.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if net.input_channels != INPUT_CHANNELS:
        raise ValueError(f"network expects {net.input_channels} channels, features have 4")
    if not net.preserves_size:
        raise ValueError("inference needs stride-1 convolutions with padding = kernel // 2")
    x = f.as_array()
    _, h, w = x.shape
    if tile is None:
        windows = [TileWindow(0, 0, w, h)]
    elif isinstance(tile, TileWindow):
        windows = [tile]
    else:
        windows = list(iter_windows(w, h, int(tile)))
    for win in windows:
        if win.col_off < 0 or win.row_off < 0 or win.col_off + win.width > w or win.row_off + win.height > h:
            raise ValueError(f"window {win} outside the {w}x{h} scene")

    prob = np.full((h, w), np.nan, dtype=np.float32)
    if jobs > 1 and len(windows) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(lambda win: _infer_window(net, x, win), windows))
    else:
        results = [_infer_window(net, x, win) for win in windows]
    for win, y in zip(windows, results):
        prob[win.slices] = y.astype(np.float32)

    valid = f.change_to_water_vv.valid_mask() & ~np.isnan(prob)
    prob[~valid] = np.nan
    with np.errstate(invalid="ignore"):
        hit = prob >= threshold
    mask = np.where(valid, hit.astype(np.uint8), BINARY_NODATA).astype(np.uint8)
    t = f.change_to_water_vv.transform
    return FloodCandidateMask(
        Raster(mask, t, BINARY_NODATA), Raster(prob, t, float("nan")), threshold
    )


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    precision: float
    recall: float
    f1: float
    positives: int


def decision_threshold_sweep(probability: Raster, truth: Raster, thresholds) -> list[SweepRow]:
    prob = probability.as_float()
    rows = []
    for t in thresholds:
        with np.errstate(invalid="ignore"):
            pred = prob >= t
        pred_r = Raster(
            np.where(np.isnan(prob), BINARY_NODATA, pred).astype(np.uint8),
            probability.transform, BINARY_NODATA,
        )
        m = compare_metrics(pred_r, truth)
        rows.append(SweepRow(float(t), m.precision, m.recall, m.f1, int(np.count_nonzero(pred))))
    return rows
