"""The two model branches of the velocity pipeline.

The acoustic branch turns a log-mel spectrogram into a preliminary T x 88
velocity grid; the correction module refines that grid using score features
concatenated per frame.  Both expose flat named-parameter dicts suitable for
the optimizer and the checkpoint format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from velocorr.nn import BiLSTM, Conv2d, FreqAvgPool, Linear, ReLU, ShapeError, Sigmoid
from velocorr.pianoroll import ScoreFeatures, denormalize_velocity

N_KEYS = 88


@dataclass(frozen=True)
class FeatureConfig:
    """Which score features join the preliminary velocity channel."""

    use_onset: bool = True
    use_frame: bool = False
    use_frame_ex: bool = False

    @property
    def width(self) -> int:
        k = int(self.use_onset) + int(self.use_frame) + int(self.use_frame_ex)
        return N_KEYS * (1 + k)

    @property
    def label(self) -> str:
        parts = ["audio"]
        if self.use_onset:
            parts.append("onset")
        if self.use_frame:
            parts.append("frame")
        if self.use_frame_ex:
            parts.append("frame_ex")
        return "+".join(parts)

    @classmethod
    def from_names(cls, names) -> "FeatureConfig":
        names = set(names)
        unknown = names - {"onset", "frame", "frame_ex"}
        if unknown:
            raise ValueError(f"unknown feature name(s): {sorted(unknown)}")
        return cls(
            use_onset="onset" in names,
            use_frame="frame" in names,
            use_frame_ex="frame_ex" in names,
        )


@dataclass
class VelocityGrid:
    """T x 88 velocities in [0, 1]; preliminary (audio-derived) or refined."""

    values: np.ndarray
    role: str = "preliminary"

    def __post_init__(self):
        if self.role not in ("preliminary", "refined"):
            raise ValueError(f"unknown grid role {self.role!r}")


def build_correction_input(
    prelim: np.ndarray, sf: ScoreFeatures, cfg: FeatureConfig
) -> np.ndarray:
    """Concatenate [prelim | onset | frame | frame_ex] per frame.

    The column order is fixed so checkpoints pin the input layout.
    """
    if prelim.shape != sf.onset.shape:
        raise ValueError(
            f"preliminary grid {prelim.shape} does not match features {sf.onset.shape}"
        )
    blocks = [prelim]
    if cfg.use_onset:
        blocks.append(sf.onset)
    if cfg.use_frame:
        blocks.append(sf.frame)
    if cfg.use_frame_ex:
        blocks.append(sf.frame_ex)
    return np.concatenate(blocks, axis=1)


class _LayerStack:
    """Shared traversal/naming for models built from named layers."""

    layers: list

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for key, value in layer.params.items():
                out[f"{name}.{key}"] = value
        return out

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        missing = set(own) - set(params)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, arr in own.items():
            src = params[name]
            if src.shape != arr.shape:
                raise ValueError(
                    f"parameter {name}: shape {src.shape} != expected {arr.shape}"
                )
            arr[:] = src.astype(arr.dtype)


class CorrectionModel(_LayerStack):
    """Score-informed refinement: BiLSTM over concatenated per-frame inputs.

    (B, T, W) -> BiLSTM (256 hidden units per direction by default, 512 per
    frame) -> linear to 88 keys -> sigmoid.
    """

    kind = "correction"

    def __init__(
        self,
        feature_cfg: FeatureConfig = FeatureConfig(),
        hidden_size: int = 256,
        keys: int = N_KEYS,
        seed: int = 13,
        dtype=np.float32,
    ):
        rng = np.random.default_rng(seed)
        self.feature_cfg = feature_cfg
        self.hidden_size = hidden_size
        self.keys = keys
        self.dtype = dtype
        self.bilstm = BiLSTM(feature_cfg.width, hidden_size, rng, dtype, name="bilstm")
        self.head = Linear(2 * hidden_size, keys, rng, dtype, name="head")
        self.act = Sigmoid()
        self.layers = [("bilstm", self.bilstm), ("head", self.head)]

    def arch_config(self) -> dict:
        return {
            "kind": self.kind,
            "input_width": self.feature_cfg.width,
            "hidden_size": self.hidden_size,
            "keys": self.keys,
            "features": {
                "onset": self.feature_cfg.use_onset,
                "frame": self.feature_cfg.use_frame,
                "frame_ex": self.feature_cfg.use_frame_ex,
            },
        }

    def forward(self, x: np.ndarray):
        if x.ndim != 3 or x.shape[-1] != self.feature_cfg.width:
            raise ShapeError(
                "correction", f"(B, T, {self.feature_cfg.width})", x.shape
            )
        h, c1 = self.bilstm.forward(x)
        z, c2 = self.head.forward(h)
        y, c3 = self.act.forward(z)
        return y, (c1, c2, c3)

    def backward(self, dy: np.ndarray, cache):
        c1, c2, c3 = cache
        dz, _ = self.act.backward(dy, c3)
        dh, g_head = self.head.backward(dz, c2)
        dx, g_bilstm = self.bilstm.backward(dh, c1)
        grads = {f"bilstm.{k}": v for k, v in g_bilstm.items()}
        grads.update({f"head.{k}": v for k, v in g_head.items()})
        return dx, grads

    def refine(self, prelim: np.ndarray, sf: ScoreFeatures) -> VelocityGrid:
        """Single-segment inference: preliminary grid -> refined grid."""
        x = build_correction_input(prelim, sf, self.feature_cfg)
        y, _ = self.forward(x[None].astype(self.dtype))
        return VelocityGrid(values=y[0], role="refined")


class AcousticModel(_LayerStack):
    """Reduced-capacity acoustic branch with the standard I/O contract.

    (B, T, mel_bins) log-mel input -> conv blocks with frequency pooling ->
    bidirectional recurrence -> linear -> sigmoid -> (B, T, 88) grid.
    """

    kind = "acoustic"

    def __init__(
        self,
        mel_bins: int = 229,
        conv_channels: tuple[int, ...] = (16, 32),
        pool_factor: int = 2,
        rnn_hidden: int = 64,
        keys: int = N_KEYS,
        seed: int = 13,
        dtype=np.float32,
    ):
        rng = np.random.default_rng(seed)
        self.mel_bins = mel_bins
        self.conv_channels = tuple(conv_channels)
        self.pool_factor = pool_factor
        self.rnn_hidden = rnn_hidden
        self.keys = keys
        self.dtype = dtype

        self.convs = []
        self.pools = []
        c_in = 1
        bins = mel_bins
        for idx, c_out in enumerate(self.conv_channels):
            self.convs.append(Conv2d(c_in, c_out, (3, 3), rng, dtype, name=f"conv{idx}"))
            self.pools.append(FreqAvgPool(pool_factor, name=f"pool{idx}"))
            c_in = c_out
            bins //= pool_factor
        self.relu = ReLU()
        self.rnn_input = c_in * bins
        self.bilstm = BiLSTM(self.rnn_input, rnn_hidden, rng, dtype, name="bilstm")
        self.head = Linear(2 * rnn_hidden, keys, rng, dtype, name="head")
        self.act = Sigmoid()
        self.layers = [(f"conv{i}", conv) for i, conv in enumerate(self.convs)]
        self.layers += [("bilstm", self.bilstm), ("head", self.head)]

    def arch_config(self) -> dict:
        return {
            "kind": self.kind,
            "mel_bins": self.mel_bins,
            "conv_channels": list(self.conv_channels),
            "pool_factor": self.pool_factor,
            "rnn_hidden": self.rnn_hidden,
            "keys": self.keys,
        }

    def forward(self, mel: np.ndarray):
        if mel.ndim != 3 or mel.shape[-1] != self.mel_bins:
            raise ShapeError("acoustic", f"(B, T, {self.mel_bins})", mel.shape)
        caches = []
        x = mel[:, None]                      # (B, 1, T, F)
        for conv, pool in zip(self.convs, self.pools):
            x, c_conv = conv.forward(x)
            x, c_relu = self.relu.forward(x)
            x, c_pool = pool.forward(x)
            caches.append((c_conv, c_relu, c_pool))
        B, C, T, F = x.shape
        seq = x.transpose(0, 2, 1, 3).reshape(B, T, C * F)
        h, c_rnn = self.bilstm.forward(seq)
        z, c_head = self.head.forward(h)
        y, c_act = self.act.forward(z)
        return y, (caches, (B, C, T, F), c_rnn, c_head, c_act)

    def backward(self, dy: np.ndarray, cache):
        caches, (B, C, T, F), c_rnn, c_head, c_act = cache
        dz, _ = self.act.backward(dy, c_act)
        dh, g_head = self.head.backward(dz, c_head)
        dseq, g_rnn = self.bilstm.backward(dh, c_rnn)
        dx = dseq.reshape(B, T, C, F).transpose(0, 2, 1, 3)
        grads = {f"head.{k}": v for k, v in g_head.items()}
        grads.update({f"bilstm.{k}": v for k, v in g_rnn.items()})
        for idx in range(len(self.convs) - 1, -1, -1):
            c_conv, c_relu, c_pool = caches[idx]
            dx, _ = self.pools[idx].backward(dx, c_pool)
            dx, _ = self.relu.backward(dx, c_relu)
            dx, g_conv = self.convs[idx].backward(dx, c_conv)
            grads.update({f"conv{idx}.{k}": v for k, v in g_conv.items()})
        return dx[:, 0], grads

    def estimate(self, mel_values: np.ndarray) -> VelocityGrid:
        """Single-segment inference: log-mel (T, bins) -> preliminary grid."""
        y, _ = self.forward(mel_values[None].astype(self.dtype))
        return VelocityGrid(values=y[0], role="preliminary")


def map_onset_velocities(
    grid: VelocityGrid | np.ndarray,
    sf: ScoreFeatures,
    *,
    frame_window: int = 0,
    divisor: float = 127.0,
) -> list[tuple[int, int]]:
    """Read one velocity per note at its onset cell, denormalized to 0..127.

    With ``frame_window=w > 0`` the value is averaged over rows t-w..t+w
    (clipped to the segment); the default reads the exact onset frame.
    """
    values = grid.values if isinstance(grid, VelocityGrid) else grid
    if values.shape != sf.onset.shape:
        raise ValueError(f"grid {values.shape} does not match features {sf.onset.shape}")
    out = []
    T = values.shape[0]
    for note_id, row, col in sf.note_cells:
        if frame_window > 0:
            lo = max(row - frame_window, 0)
            hi = min(row + frame_window, T - 1)
            value = float(values[lo:hi + 1, col].mean())
        else:
            value = float(values[row, col])
        out.append((note_id, denormalize_velocity(value, divisor)))
    return out
