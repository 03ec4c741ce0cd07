"""Datasets, the self-supervised SINR loss, Adam and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .beamform import Method, mrc, mvdr, sinr, smi, zf
from .errors import ConfigError, DivergenceError
from .mamba import MambaBF, preprocess
from .scenario import Scenario, ScenarioConfig, perturb_csi, sample_scenario
from .signals import SnapshotMatrix, synthesize_snapshots

log = logging.getLogger(__name__)

TRAIN_STREAM = 0
TEST_STREAM = 1


@dataclass
class TrainConfig:
    n_train: int = 4000
    n_test: int = 1000
    batch: int = 16
    epochs: int = 30
    learn_rate: float = 1e-3
    seed: int = 0
    csi_mode: str = "perfect"  # or "imperfect"
    error_variance: float = 0.15
    snapshots: int = 200
    loss_db: bool = False

    def validate(self) -> None:
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("n_train must be >= 1 and n_test >= 0")
        if not 1 <= self.batch <= self.n_train:
            raise ConfigError("need 1 <= batch <= n_train")
        if self.epochs < 0 or self.learn_rate < 0:
            raise ConfigError("epochs and learn_rate must be non-negative")
        if self.csi_mode not in ("perfect", "imperfect"):
            raise ConfigError(f"csi_mode must be 'perfect' or 'imperfect', got {self.csi_mode!r}")
        if self.error_variance < 0:
            raise ConfigError("error_variance must be >= 0")
        if self.snapshots < 2:
            raise ConfigError("need at least 2 snapshots")

    @property
    def csi_variance(self) -> float | None:
        return self.error_variance if self.csi_mode == "imperfect" else None

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


# datasets


def sample_seed(master: int, stream: int, index: int) -> int:
    """64-bit seed of sample ``index`` in ``stream``; streams never overlap
    in practice (distinct SeedSequence entropy)."""
    ss = np.random.SeedSequence([master, stream, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(eq=False)
class DatasetSample:
    snapshots: SnapshotMatrix
    true_h_d: np.ndarray
    true_h_int: np.ndarray
    est_h_d: np.ndarray | None
    noise_w: float
    seed: int
    scenario: Scenario
    _features: np.ndarray | None = field(default=None, repr=False)

    @property
    def features(self) -> np.ndarray:
        """Preprocessed network input (2M, L), computed once."""
        if self._features is None:
            self._features = preprocess(self.snapshots)
        return self._features

    @property
    def csi_h_d(self) -> np.ndarray:
        """Desired channel as known to CSI-based baselines."""
        return self.true_h_d if self.est_h_d is None else self.est_h_d


def make_sample(
    config: ScenarioConfig, seed: int, snapshots: int, csi_variance: float | None = None
) -> DatasetSample:
    scenario = sample_scenario(config, seed)
    y = synthesize_snapshots(scenario, snapshots, np.random.SeedSequence([seed, 1]))
    est = None
    if csi_variance is not None:
        est = perturb_csi(scenario.desired, csi_variance, np.random.SeedSequence([seed, 2]))
    return DatasetSample(
        snapshots=y,
        true_h_d=np.array(scenario.h_d),
        true_h_int=scenario.h_int,
        est_h_d=est,
        noise_w=scenario.noise_power_w,
        seed=seed,
        scenario=scenario,
    )


def build_dataset(
    config: ScenarioConfig,
    n_samples: int,
    seed: int,
    stream: int = TRAIN_STREAM,
    snapshots: int = 200,
    csi_variance: float | None = None,
) -> list[DatasetSample]:
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    return [
        make_sample(config, sample_seed(seed, stream, i), snapshots, csi_variance) for i in range(n_samples)
    ]


def stack_channels(samples: Sequence[DatasetSample]):
    """Noise-whitened channels: ``h_d`` (B, M) and ``H_i`` (B, M, K)."""
    scale = np.array([1.0 / math.sqrt(s.noise_w) for s in samples])
    h_d = np.stack([s.true_h_d for s in samples]) * scale[:, None]
    ks = {s.true_h_int.shape[1] for s in samples}
    if len(ks) != 1:
        raise ConfigError("all samples in a batch need the same number of interferers")
    h_i = np.stack([s.true_h_int for s in samples]) * scale[:, None, None]
    return h_d, h_i


# loss


def sinr_tensor(w_re: Tensor, w_im: Tensor, h_d: np.ndarray, h_int: np.ndarray) -> Tensor:
    """Per-sample SINR (B,) of real/imag weights against whitened channels.

    With unit noise power: ``|w^H h_d|^2 / (sum_k |w^H h_k|^2 + ||w||^2)``.
    """
    bsz, m = w_re.shape
    dr, di = h_d.real, h_d.imag
    # w^H h = sum(wr*hr + wi*hi) + j sum(wr*hi - wi*hr)
    sig_re = ad.sum(w_re * dr + w_im * di, axis=1)
    sig_im = ad.sum(w_re * di - w_im * dr, axis=1)
    signal = ad.square(sig_re) + ad.square(sig_im)
    power = ad.sum(ad.square(w_re) + ad.square(w_im), axis=1)
    denom = power
    if h_int.shape[-1]:
        row_re = ad.reshape(w_re, (bsz, 1, m))
        row_im = ad.reshape(w_im, (bsz, 1, m))
        ir, ii = h_int.real, h_int.imag
        int_re = ad.matmul(row_re, ir) + ad.matmul(row_im, ii)
        int_im = ad.matmul(row_re, ii) - ad.matmul(row_im, ir)
        interference = ad.sum(ad.square(int_re) + ad.square(int_im), axis=(1, 2))
        denom = denom + interference
    return signal / denom


def loss_asinr(w_re: Tensor, w_im: Tensor, samples: Sequence[DatasetSample], db: bool = False) -> Tensor:
    """Negative SINR averaged over the batch (linear, or dB with ``db``).

    Channels are constant over the snapshots of a sample, so the
    per-snapshot average equals the single SINR value.
    """
    h_d, h_i = stack_channels(samples)
    s = sinr_tensor(w_re, w_im, h_d, h_i)
    if db:
        s = ad.log(s) * (10.0 / math.log(10.0))
    return -ad.mean(s)


# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learn_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params[name] = p - learn_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


# training and evaluation


def infer_weights(model: MambaBF, samples: Sequence[DatasetSample], chunk: int = 50) -> np.ndarray:
    """MambaBF weights (N, M) from snapshots only."""
    out = []
    for i in range(0, len(samples), chunk):
        x = np.stack([s.features for s in samples[i : i + chunk]])
        out.append(model.infer_batch(x))
    return np.concatenate(out) if out else np.zeros((0, 0), dtype=complex)


def mean_asinr_db(weights: np.ndarray, samples: Sequence[DatasetSample]) -> float:
    vals = [10 * math.log10(sinr(w, s.true_h_d, s.true_h_int, s.noise_w)) for w, s in zip(weights, samples)]
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class EpochRecord:
    epoch: int
    mean_train_loss: float
    mean_test_asinr_db: float


def train(
    model: MambaBF,
    train_set: Sequence[DatasetSample],
    config: TrainConfig,
    test_set: Sequence[DatasetSample] = (),
    checkpoint_path: str | Path | None = None,
    checkpoint_meta: dict | None = None,
) -> tuple[MambaBF, list[EpochRecord]]:
    """Mini-batch Adam on the negative-SINR loss; mutates ``model``.

    On a non-finite loss or gradient the last good parameters are
    restored (and written to ``checkpoint_path``) before re-raising.
    """
    from .mamba import save_checkpoint

    if not train_set:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    state = AdamState()
    history: list[EpochRecord] = []
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch):
            # sorted so a batch's loss depends only on its membership
            batch = [train_set[i] for i in sorted(order[start : start + config.batch])]
            good = (dict(model.params), dict(model.buffers))
            try:
                loss = _train_step(model, batch, config, state)
                state = loss[1]
                losses.append(loss[0])
            except DivergenceError:
                model.params, model.buffers = good
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model, checkpoint_meta)
                raise
        test_db = mean_asinr_db(infer_weights(model, test_set), test_set) if test_set else float("nan")
        record = EpochRecord(epoch, float(np.mean(losses)), test_db)
        history.append(record)
        log.info("epoch %d: train loss %.4f, test ASINR %.3f dB", epoch, record.mean_train_loss, test_db)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, checkpoint_meta)
    return model, history


def _train_step(model: MambaBF, batch, config: TrainConfig, state: AdamState):
    tape = Tape()
    x = np.stack([s.features for s in batch])
    w_re, w_im, leaves = model.forward_batch(x, tape)
    loss = loss_asinr(w_re, w_im, batch, db=config.loss_db)
    value = float(loss.value)
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    grads = tape.backward(loss)
    named = {name: grads[leaf] for name, leaf in leaves.items()}
    model.params, state = adam_step(model.params, named, state, config.learn_rate)
    return value, state


BASELINES = (Method.MRC, Method.ZF, Method.SMI, Method.MVDR)


def baseline_weights(method: Method, sample: DatasetSample) -> np.ndarray:
    """Weights of a classical method; each reads only what it needs."""
    h_d = sample.csi_h_d
    if method is Method.INITIAL:
        return sample.scenario.v_d
    if method is Method.MRC:
        return mrc(h_d).weights
    if method is Method.ZF:
        return zf(h_d, sample.true_h_int).weights
    if method is Method.SMI:
        return smi(sample.snapshots, h_d).weights
    if method is Method.MVDR:
        m = h_d.shape[0]
        r = (
            np.outer(sample.true_h_d, sample.true_h_d.conj())
            + sample.true_h_int @ sample.true_h_int.conj().T
            + sample.noise_w * np.eye(m)
        )
        return mvdr(r, h_d).weights
    raise ValueError(f"{method} is not a baseline")


@dataclass
class EvalReport:
    csi_mode: str
    methods: list[Method]
    rows: list[dict]

    def column(self, method: Method | str) -> np.ndarray:
        key = method.value if isinstance(method, Method) else method
        return np.array([r[key] for r in self.rows])

    def aggregates(self) -> dict[str, dict[str, float]]:
        """Per method: mean SINR in dB and mean linear SINR in dB."""
        out = {}
        for key in ["Initial"] + [m.value for m in self.methods]:
            col = self.column(key)
            out[key] = {
                "mean_db": float(np.mean(col)),
                "mean_linear_db": float(10 * np.log10(np.mean(10 ** (col / 10)))),
            }
        return out


def evaluate(
    model: MambaBF | None,
    test_set: Sequence[DatasetSample],
    methods: Iterable[Method] = BASELINES,
    csi_mode: str = "perfect",
) -> EvalReport:
    """SINR_in (initial beam ``v_d``) and SINR_out per method and sample, in dB."""
    methods = list(methods)
    weights: dict[Method, np.ndarray] = {}
    if Method.MAMBA in methods:
        if model is None:
            raise ConfigError("MambaBF evaluation needs a model")
        weights[Method.MAMBA] = infer_weights(model, test_set)
    rows = []
    for i, s in enumerate(test_set):
        sc = s.scenario

        def out_db(w):
            return 10 * math.log10(sinr(w, s.true_h_d, s.true_h_int, s.noise_w))

        row = {"sample_id": i, "seed": s.seed, "Initial": out_db(sc.v_d)}
        for m in methods:
            w = weights[m][i] if m is Method.MAMBA else baseline_weights(m, s)
            row[m.value] = out_db(w)
        row["desired_doa"] = (sc.desired.doa.azimuth_deg, sc.desired.doa.elevation_deg)
        row["interferer_doas"] = [(c.doa.azimuth_deg, c.doa.elevation_deg) for c in sc.interferers]
        rows.append(row)
    return EvalReport(csi_mode, methods, rows)
