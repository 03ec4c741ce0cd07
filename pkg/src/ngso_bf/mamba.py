"""MambaBF: snapshot matrix in, unit-norm beamforming weights out.

Pipeline: real/imag stacking and standardization, conv1d + max-pool +
batch-norm + SeLU front-end, two gated recurrent (Mamba-style) layers
and a dense head whose 2M outputs are read as ``[re(w) | im(w)]``.

Sequences are laid out (batch, channels, time) throughout.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .beamform import BeamWeights, Method
from .errors import ConfigError, NumericalError
from .signals import SnapshotMatrix

CHECKPOINT_VERSION = 1
QUANT_STEPS = 2**16


@dataclass(frozen=True)
class ModelConfig:
    num_elements: int = 100  # M
    num_snapshots: int = 200  # L
    latent: int = 100  # M_z
    frontend_kernel: int = 3
    kernel: int = 3
    hidden: int = 256
    pool: int = 2
    num_layers: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.num_snapshots < self.pool or self.pool < 1:
            raise ConfigError(f"need L >= pool ({self.pool}), got L={self.num_snapshots}")
        if self.latent < 1 or self.hidden < 1 or self.num_elements < 1:
            raise ConfigError("model sizes must be positive")

    @property
    def latent_length(self) -> int:
        return self.num_snapshots // self.pool


class DegenerateOutputError(NumericalError):
    """The head produced an all-zero weight vector."""


# preprocessing


def stack_real_imag(y) -> np.ndarray:
    """(M, L) complex -> (2M, L) real with the real block on top."""
    data = y.data if isinstance(y, SnapshotMatrix) else np.asarray(y)
    return np.concatenate([data.real, data.imag], axis=0).astype(np.float64)


def preprocess(y) -> np.ndarray:
    """Stacked real/imag snapshots standardized to zero mean, unit variance.

    The stacked values are first expressed in units of their RMS and
    snapped to a 2**-16 grid, so any positive rescaling of ``Y`` gives
    bit-identical features. All-zero input yields zeros.
    """
    x = stack_real_imag(y)
    rms = math.sqrt(float(np.mean(x * x)))
    if rms == 0.0 or not math.isfinite(rms):
        return np.zeros_like(x)
    q = np.rint(x / rms * QUANT_STEPS)
    centered = q - q.mean()
    std = math.sqrt(float(np.mean(centered * centered)))
    if std == 0.0:
        return np.zeros_like(x)
    return centered / std


# parameters


def _uniform(rng, shape, fan_in):
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed=0) -> dict[str, np.ndarray]:
    """Uniform(+-sqrt(1/fan_in)) weights and biases; GRU biases zero."""
    rng = np.random.default_rng(seed)
    m2 = 2 * config.num_elements
    mz, hid = config.latent, config.hidden
    p: dict[str, np.ndarray] = {}
    fan = m2 * config.frontend_kernel
    p["frontend.conv.weight"] = _uniform(rng, (mz, m2, config.frontend_kernel), fan)
    p["frontend.conv.bias"] = _uniform(rng, (mz,), fan)
    p["frontend.bn.scale"] = np.ones(mz)
    p["frontend.bn.shift"] = np.zeros(mz)
    for i in range(config.num_layers):
        pre = f"mamba{i}."
        for lin in ("lin_a", "lin_b"):
            p[pre + lin + ".weight"] = _uniform(rng, (mz, mz), mz)
            p[pre + lin + ".bias"] = _uniform(rng, (mz,), mz)
        fan = mz * config.kernel
        p[pre + "conv.weight"] = _uniform(rng, (mz, mz, config.kernel), fan)
        p[pre + "conv.bias"] = _uniform(rng, (mz,), fan)
        # gate blocks stacked as [update z | reset r | candidate]
        p[pre + "gru.w_in"] = _uniform(rng, (3 * mz, mz), mz)
        p[pre + "gru.w_state"] = _uniform(rng, (3 * mz, mz), mz)
        p[pre + "gru.bias"] = np.zeros(3 * mz)
        p[pre + "out.weight"] = _uniform(rng, (mz, mz), mz)
    flat = mz * config.latent_length
    p["head.fc1.weight"] = _uniform(rng, (hid, flat), flat)
    p["head.fc1.bias"] = _uniform(rng, (hid,), flat)
    p["head.fc2.weight"] = _uniform(rng, (m2, hid), hid)
    p["head.fc2.bias"] = _uniform(rng, (m2,), hid)
    return p


def init_buffers(config: ModelConfig) -> dict[str, np.ndarray]:
    return {
        "frontend.bn.running_mean": np.zeros(config.latent),
        "frontend.bn.running_var": np.ones(config.latent),
    }


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def _sub(params: dict, prefix: str) -> dict:
    return {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}


# layers


def channel_linear(x: Tensor, weight, bias=None) -> Tensor:
    """Per-time-step affine map over the channel axis of (B, C, T)."""
    out = ad.matmul(weight, x)
    if bias is not None:
        out = out + ad.reshape(bias, (-1, 1))
    return out


def frontend(x: Tensor, params: dict, buffers: dict, config: ModelConfig, train: bool) -> Tensor:
    """(B, 2M, L) -> (B, M_z, L // pool)."""
    if x.shape[-1] < 2:
        raise ConfigError("front-end needs at least 2 snapshots")
    z = ad.conv1d(x, params["conv.weight"], params["conv.bias"])
    z = ad.maxpool1d(z, config.pool, config.pool)
    if train:
        z = ad.batch_stats_normalize(z, axes=(0, 2), eps=config.bn_eps)
        stats = z.extras
    else:
        mean = buffers["bn.running_mean"][:, None]
        inv_std = 1.0 / np.sqrt(buffers["bn.running_var"][:, None] + config.bn_eps)
        z = (z - mean) * inv_std
        stats = None
    z = z * ad.reshape(params["bn.scale"], (-1, 1)) + ad.reshape(params["bn.shift"], (-1, 1))
    out = ad.selu(z)
    out.extras = stats
    return out


def gru_cell(gates_in: Tensor, state: Tensor, w_state_zr: Tensor, w_state_c: Tensor) -> Tensor:
    """One GRU step for a (B, H) state.

    ``gates_in`` holds ``W c + b`` for the three gates, shape (B, 3H);
    ``w_state_zr`` is (H, 2H) and ``w_state_c`` (H, H), both transposed
    so that ``state @ w`` applies them.

        z = sigma(W_z c + U_z g + b_z)
        r = sigma(W_r c + U_r g + b_r)
        g~ = tanh(W_c c + U_c (r * g) + b_c)
        g' = (1 - z) * g + z * g~
    """
    hid = state.shape[-1]
    zr = ad.sigmoid(gates_in[:, : 2 * hid] + ad.matmul(state, w_state_zr))
    z = zr[:, :hid]
    r = zr[:, hid:]
    cand = ad.tanh(gates_in[:, 2 * hid :] + ad.matmul(r * state, w_state_c))
    return state + z * (cand - state)


def gru(c: Tensor, params: dict) -> Tensor:
    """Run the GRU over (B, C, T) from a zero state; returns (B, H, T)."""
    bsz, _, length = c.shape
    w_state = params["gru.w_state"]
    hid = w_state.shape[-1]
    gates = channel_linear(c, params["gru.w_in"], params["gru.bias"])  # (B, 3H, T)
    gates = ad.transpose(gates, (2, 0, 1))  # (T, B, 3H)
    w_zr = ad.transpose(w_state[: 2 * hid])
    w_c = ad.transpose(w_state[2 * hid :])
    state = Tensor(np.zeros((bsz, hid)))
    states = []
    for t in range(length):
        state = gru_cell(gates[t], state, w_zr, w_c)
        states.append(ad.reshape(state, (1, bsz, hid)))
    seq = ad.concat(states, axis=0)  # (T, B, H)
    return ad.transpose(seq, (1, 2, 0))


def mamba_layer(x: Tensor, params: dict) -> Tensor:
    """Gated block: SeLU skip path times conv+GRU path, then W_out."""
    skip = ad.selu(channel_linear(x, params["lin_a.weight"], params["lin_a.bias"]))
    c = channel_linear(x, params["lin_b.weight"], params["lin_b.bias"])
    c = ad.selu(ad.conv1d(c, params["conv.weight"], params["conv.bias"]))
    g = gru(c, params)
    return channel_linear(g * skip, params["out.weight"])


def head(f: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """Dense head; returns unit-norm (re, im) weight tensors, each (B, M)."""
    bsz = f.shape[0]
    flat = ad.reshape(f, (bsz, -1))
    h = ad.selu(ad.matmul(flat, ad.transpose(params["fc1.weight"])) + params["fc1.bias"])
    w_hat = ad.matmul(h, ad.transpose(params["fc2.weight"])) + params["fc2.bias"]
    sq = ad.sum(ad.square(w_hat), axis=1, keepdims=True)
    if np.any(sq.value == 0.0):
        raise DegenerateOutputError("head produced an all-zero weight vector")
    w = w_hat / ad.sqrt(sq)
    m = w.shape[1] // 2
    return w[:, :m], w[:, m:]


def forward_tensors(x: np.ndarray, params: dict, buffers: dict, config: ModelConfig, train: bool):
    """Run the network on preprocessed input (B, 2M, L).

    ``params`` values may be arrays or tape leaves. Returns
    ``(w_re, w_im, bn_stats)``; ``bn_stats`` is None in inference.
    """
    z = frontend(Tensor(x), _sub(params, "frontend."), _sub(buffers, "frontend."), config, train)
    stats = z.extras
    for i in range(config.num_layers):
        z = mamba_layer(z, _sub(params, f"mamba{i}."))
    w_re, w_im = head(z, _sub(params, "head."))
    return w_re, w_im, stats


def to_complex(w_re: np.ndarray, w_im: np.ndarray) -> np.ndarray:
    return np.asarray(w_re) + 1j * np.asarray(w_im)


class MambaBF:
    """Parameters, batch-norm statistics and hyperparameters of one model."""

    def __init__(self, config: ModelConfig, params=None, buffers=None, seed=0):
        self.config = config
        self.params = init_params(config, seed) if params is None else dict(params)
        self.buffers = init_buffers(config) if buffers is None else dict(buffers)
        expected = init_params(config, 0) if params is not None else self.params
        for name, value in expected.items():
            if name not in self.params or self.params[name].shape != value.shape:
                raise ConfigError(f"parameter {name} missing or misshapen")

    @property
    def num_parameters(self) -> int:
        return parameter_count(self.params)

    def forward_batch(self, x: np.ndarray, tape: Tape | None = None, update_stats: bool = True):
        """Training-mode pass on preprocessed (B, 2M, L) input.

        With a tape, every parameter becomes a leaf and the returned
        dict maps names to those leaves.
        """
        leaves = {k: tape.leaf(v, name=k) for k, v in self.params.items()} if tape is not None else self.params
        w_re, w_im, stats = forward_tensors(x, leaves, self.buffers, self.config, train=True)
        if update_stats:
            self.update_running_stats(stats)
        return w_re, w_im, leaves

    def update_running_stats(self, stats) -> None:
        mom = self.config.bn_momentum
        for key in ("mean", "var"):
            name = f"frontend.bn.running_{key}"
            self.buffers[name] = (1 - mom) * self.buffers[name] + mom * stats[key]

    def infer_batch(self, x: np.ndarray) -> np.ndarray:
        """Inference on preprocessed (B, 2M, L); complex weights (B, M)."""
        w_re, w_im, _ = forward_tensors(x, self.params, self.buffers, self.config, train=False)
        return to_complex(w_re.value, w_im.value)

    def __call__(self, y) -> BeamWeights:
        return forward(y, self)


def forward(y, model: MambaBF, mode: str = "infer") -> BeamWeights:
    """Beam weights for one snapshot matrix.

    ``mode="train"`` uses batch statistics (over this single sample)
    instead of the running ones and does not touch the model state.
    """
    x = preprocess(y)[None]
    if mode == "infer":
        w = model.infer_batch(x)[0]
    elif mode == "train":
        w_re, w_im, _ = model.forward_batch(x, update_stats=False)
        w = to_complex(w_re.value, w_im.value)[0]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return BeamWeights(w, Method.MAMBA)


# checkpoints


def _encode(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "dtype": "<f8",
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode(entry: dict) -> np.ndarray:
    if entry.get("dtype") != "<f8":
        raise ConfigError(f"unsupported array dtype {entry.get('dtype')}")
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)


def save_checkpoint(path: str | Path, model: MambaBF, extra: dict | None = None) -> None:
    """Versioned JSON checkpoint; arrays are base64 little-endian f64."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparams": asdict(model.config),
        "num_parameters": model.num_parameters,
        "parameters": {k: _encode(v) for k, v in sorted(model.params.items())},
        "buffers": {k: _encode(v) for k, v in sorted(model.buffers.items())},
    }
    if extra:
        doc["metadata"] = extra
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path: str | Path) -> MambaBF:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {doc.get('format_version')}")
    config = ModelConfig(**doc["hyperparams"])
    params = {k: _decode(v) for k, v in doc["parameters"].items()}
    buffers = {k: _decode(v) for k, v in doc["buffers"].items()}
    return MambaBF(config, params, buffers)
