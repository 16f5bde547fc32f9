"""Dense variational autoencoder regressor written directly in numpy.

The encoder maps a standardized feature vector to the mean and log-variance
of a diagonal Gaussian over the latent space; the decoder maps a latent point
to a single scalar, the predicted count. Training minimizes

    mean((yhat - y)**2) + kl_weight * mean(KL(q(z|x) || N(0, I)))

with Adam, where ``yhat`` is decoded from a reparameterized sample. Inference
always decodes the posterior mean, so ``predict`` is deterministic.

Parameters are kept as a flat list of arrays in declaration order: encoder
hidden layers, mean head, log-variance head, decoder hidden layers, output
layer. Each layer is a weight matrix of shape ``(fan_in, fan_out)`` followed
by a bias vector.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from latentconf.dataset import Dataset, Scaler

FORMAT_VERSION = 1
MAGIC = b"VAEC"
ACTIVATIONS = ("tanh", "softplus")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class VaeConfig:
    input_dim: int
    encoder_hidden: tuple[int, ...] = (64, 32)
    latent_dim: int = 8
    decoder_hidden: tuple[int, ...] = (32, 64)
    activation: str = "tanh"
    kl_weight: float = 1e-3
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))
        for name in ("input_dim", "latent_dim", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(h < 1 for h in self.encoder_hidden + self.decoder_hidden):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not (math.isfinite(self.kl_weight) and self.kl_weight >= 0):
            raise ConfigError(f"kl_weight must be >= 0, got {self.kl_weight}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """Weight shapes in declaration order."""
        shapes = []
        dims = (self.input_dim, *self.encoder_hidden)
        shapes += list(zip(dims[:-1], dims[1:]))
        shapes += [(dims[-1], self.latent_dim)] * 2
        dims = (self.latent_dim, *self.decoder_hidden, 1)
        shapes += list(zip(dims[:-1], dims[1:]))
        return shapes


@dataclass(eq=False)
class VaeModel:
    config: VaeConfig
    scaler: Scaler
    params: list[np.ndarray]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        if len(self.params) != 2 * len(shapes):
            raise ConfigError(f"expected {2 * len(shapes)} parameter arrays, got {len(self.params)}")
        for k, (fan_in, fan_out) in enumerate(shapes):
            w, b = self.params[2 * k], self.params[2 * k + 1]
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ConfigError(
                    f"layer {k}: shapes {w.shape}/{b.shape} do not chain as "
                    f"({fan_in}, {fan_out})/({fan_out},)"
                )
        if self.scaler.arity != self.config.input_dim:
            raise ConfigError("scaler arity does not match input_dim")

    @property
    def n_encoder(self) -> int:
        return len(self.config.encoder_hidden)

    @property
    def encoder_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self._layer(k) for k in range(self.n_encoder)]

    @property
    def mu_head(self) -> tuple[np.ndarray, np.ndarray]:
        return self._layer(self.n_encoder)

    @property
    def logvar_head(self) -> tuple[np.ndarray, np.ndarray]:
        return self._layer(self.n_encoder + 1)

    @property
    def decoder_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Decoder hidden layers followed by the scalar output layer."""
        start = self.n_encoder + 2
        return [self._layer(k) for k in range(start, len(self.params) // 2)]

    def _layer(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.params[2 * k], self.params[2 * k + 1]

    def copy(self) -> "VaeModel":
        return VaeModel(self.config, self.scaler, [p.copy() for p in self.params], self.format_version)

    def equals(self, other: "VaeModel") -> bool:
        """Bit-for-bit equality of every field."""
        return (
            self.config == other.config
            and self.format_version == other.format_version
            and _bits_equal(self.scaler.means, other.scaler.means)
            and _bits_equal(self.scaler.stds, other.scaler.stds)
            and len(self.params) == len(other.params)
            and all(_bits_equal(a, b) for a, b in zip(self.params, other.params))
        )


def _bits_equal(a: np.ndarray, b: np.ndarray) -> bool:
    a = np.ascontiguousarray(a, dtype="<f8")
    b = np.ascontiguousarray(b, dtype="<f8")
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    regression: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.total)


def init_model(cfg: VaeConfig, scaler: Scaler | None = None) -> VaeModel:
    """Glorot-uniform weights drawn from ``cfg.seed``, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    params = []
    for fan_in, fan_out in cfg.layer_shapes():
        a = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    if scaler is None:
        scaler = Scaler.identity(cfg.input_dim)
    return VaeModel(cfg, scaler, params)


# --- activations -----------------------------------------------------------

def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    return np.logaddexp(0.0, a)


def _act_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - h * h
    return 0.5 * (1.0 + np.tanh(0.5 * a))


# --- forward passes -------------------------------------------------------

def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what} must have width {width}, got shape {np.shape(x)}")
    return x, single


def _encode_batch(m: VaeModel, x: np.ndarray, cache: list | None = None):
    act = m.config.activation
    h = x
    for w, b in m.encoder_layers:
        a = h @ w + b
        out = _act(act, a)
        if cache is not None:
            cache.append((h, a, out))
        h = out
    w_mu, b_mu = m.mu_head
    w_lv, b_lv = m.logvar_head
    return h @ w_mu + b_mu, h @ w_lv + b_lv, h


def _decode_batch(m: VaeModel, z: np.ndarray, cache: list | None = None) -> np.ndarray:
    act = m.config.activation
    layers = m.decoder_layers
    h = z
    for w, b in layers[:-1]:
        a = h @ w + b
        out = _act(act, a)
        if cache is not None:
            cache.append((h, a, out))
        h = out
    w, b = layers[-1]
    if cache is not None:
        cache.append((h, None, None))
    return (h @ w + b)[:, 0]


def encode(m: VaeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and log-variance for a scaled feature vector (or batch)."""
    x, single = _as_batch(x, m.config.input_dim, "x")
    mu, logvar, _ = _encode_batch(m, x)
    if single:
        return mu[0], logvar[0]
    return mu, logvar


def decode(m: VaeModel, z: np.ndarray) -> float | np.ndarray:
    """Predicted count for a latent point (or batch of points)."""
    z, single = _as_batch(z, m.config.latent_dim, "z")
    yhat = _decode_batch(m, z)
    return float(yhat[0]) if single else yhat


def predict(m: VaeModel, x: np.ndarray) -> float | np.ndarray:
    """``decode(encode(x).mu)``; no sampling."""
    mu, _ = encode(m, x)
    return decode(m, mu)


def sample_latent(mu: np.ndarray, logvar: np.ndarray, noise: np.ndarray) -> np.ndarray:
    mu, logvar, noise = (np.asarray(v, dtype=np.float64) for v in (mu, logvar, noise))
    if not (mu.shape == logvar.shape == noise.shape):
        raise ValueError(f"shape mismatch: {mu.shape}, {logvar.shape}, {noise.shape}")
    return mu + np.exp(0.5 * logvar) * noise


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> float | np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    # expm1 keeps the small-logvar regime exact
    kl = 0.5 * np.sum(mu * mu + (np.expm1(logvar) - logvar), axis=-1)
    return float(kl) if kl.ndim == 0 else kl


# --- objective -------------------------------------------------------------

def _check_batch(m: VaeModel, x, y, noise):
    x, _ = _as_batch(x, m.config.input_dim, "batch features")
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) == 0:
        raise ValueError("empty batch")
    if len(y) != len(x):
        raise ValueError(f"{len(x)} feature rows but {len(y)} targets")
    noise, _ = _as_batch(noise, m.config.latent_dim, "noise")
    if len(noise) != len(x):
        raise ValueError(f"{len(x)} feature rows but {len(noise)} noise rows")
    return x, y, noise


def loss(m: VaeModel, x: np.ndarray, y: np.ndarray, noise: np.ndarray) -> tuple[float, float, float]:
    """(total, regression, kl) for one batch with explicit reparameterization noise."""
    x, y, noise = _check_batch(m, x, y, noise)
    mu, logvar, _ = _encode_batch(m, x)
    yhat = _decode_batch(m, sample_latent(mu, logvar, noise))
    regression = float(np.mean((yhat - y) ** 2))
    kl = float(np.mean(kl_divergence(mu, logvar)))
    return regression + m.config.kl_weight * kl, regression, kl


def loss_and_gradients(
    m: VaeModel, x: np.ndarray, y: np.ndarray, noise: np.ndarray
) -> tuple[tuple[float, float, float], list[np.ndarray]]:
    """Loss terms and the gradient of the total with respect to ``m.params``."""
    x, y, noise = _check_batch(m, x, y, noise)
    act = m.config.activation
    beta = m.config.kl_weight
    n = len(x)

    enc_cache: list = []
    mu, logvar, h_enc = _encode_batch(m, x, enc_cache)
    std = np.exp(0.5 * logvar)
    z = mu + std * noise
    dec_cache: list = []
    yhat = _decode_batch(m, z, dec_cache)

    resid = yhat - y
    regression = float(np.mean(resid**2))
    kl = float(np.mean(kl_divergence(mu, logvar)))
    terms = (regression + beta * kl, regression, kl)

    grads: list[np.ndarray] = [None] * len(m.params)  # type: ignore[list-item]
    n_enc = m.n_encoder
    n_layers = len(m.params) // 2

    # decoder, output layer first
    delta = (2.0 / n) * resid[:, None]
    dec_layers = m.decoder_layers
    for j in range(len(dec_layers) - 1, -1, -1):
        k = n_enc + 2 + j
        h_in, _, _ = dec_cache[j]
        w, _ = dec_layers[j]
        grads[2 * k] = h_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        dh = delta @ w.T
        if j > 0:
            _, a_prev, h_prev = dec_cache[j - 1]
            delta = dh * _act_grad(act, a_prev, h_prev)
        else:
            dz = dh

    dmu = dz + (beta / n) * mu
    dlogvar = dz * noise * 0.5 * std + (beta / n) * 0.5 * np.expm1(logvar)

    k_mu, k_lv = n_enc, n_enc + 1
    w_mu, _ = m.mu_head
    w_lv, _ = m.logvar_head
    grads[2 * k_mu] = h_enc.T @ dmu
    grads[2 * k_mu + 1] = dmu.sum(axis=0)
    grads[2 * k_lv] = h_enc.T @ dlogvar
    grads[2 * k_lv + 1] = dlogvar.sum(axis=0)
    dh = dmu @ w_mu.T + dlogvar @ w_lv.T

    enc_layers = m.encoder_layers
    for k in range(n_enc - 1, -1, -1):
        h_in, a, h_out = enc_cache[k]
        delta = dh * _act_grad(act, a, h_out)
        grads[2 * k] = h_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        dh = delta @ enc_layers[k][0].T

    assert len(grads) == 2 * n_layers
    return terms, grads


# --- training --------------------------------------------------------------

def _xy(train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if train.target is None:
        raise ValueError("training data must be labeled")
    return train.features, train.target


def fit(
    m: VaeModel, train: Dataset, cfg: VaeConfig | None = None
) -> tuple[VaeModel, TrainHistory]:
    """Train a copy of ``m`` on already-scaled ``train`` with Adam.

    Before the first epoch the output bias is shifted by the mean training
    target. Mini-batch order and reparameterization noise both come from one
    generator seeded with ``cfg.seed``, so a run is bit-reproducible.
    """
    cfg = m.config if cfg is None else cfg
    if cfg.layer_shapes() != m.config.layer_shapes() or cfg.activation != m.config.activation:
        raise ConfigError("training config does not match the model architecture")
    x, y = _xy(train)
    if len(x) == 0:
        raise ValueError("cannot fit on an empty dataset")
    model = m.copy()
    model.config = replace(m.config, kl_weight=cfg.kl_weight, learning_rate=cfg.learning_rate,
                           epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history

    rng = np.random.default_rng(cfg.seed)
    # counts sit in the hundreds; starting the output bias at the target mean
    # spares Adam's ~learning_rate-sized steps from having to climb there
    model.params[-1] += math.fsum(y) / len(y)
    first = [np.zeros_like(p) for p in model.params]
    second = [np.zeros_like(p) for p in model.params]
    step = 0
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            noise = rng.standard_normal((len(idx), cfg.latent_dim))
            terms, grads = loss_and_gradients(model, x[idx], y[idx], noise)
            if not all(math.isfinite(t) for t in terms):
                raise TrainingError(
                    f"non-finite loss {terms[0]!r} at epoch {epoch}, batch {batch_no}"
                )
            sums += np.asarray(terms) * len(idx)
            step += 1
            c1 = 1.0 - ADAM_BETA1**step
            c2 = 1.0 - ADAM_BETA2**step
            for p, g, mom, var in zip(model.params, grads, first, second):
                mom *= ADAM_BETA1
                mom += (1.0 - ADAM_BETA1) * g
                var *= ADAM_BETA2
                var += (1.0 - ADAM_BETA2) * g * g
                p -= cfg.learning_rate * (mom / c1) / (np.sqrt(var / c2) + ADAM_EPS)
        total, regression, kl = sums / n
        history.total.append(float(total))
        history.regression.append(float(regression))
        history.kl.append(float(kl))
    return model, history


GradFn = Callable[[VaeModel, np.ndarray, np.ndarray, np.ndarray], tuple]


def grad_check(
    m: VaeModel,
    x: np.ndarray,
    y: np.ndarray,
    probe_count: int,
    seed: int = 0,
    noise: np.ndarray | None = None,
    step: float = 1e-5,
    grad_fn: GradFn | None = None,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``probe_count`` scalar parameters are drawn uniformly from all weights and
    biases. The relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as
    denominator. ``grad_fn`` replaces the analytic gradient (for mutation
    tests); it must return ``(terms, grads)`` like :func:`loss_and_gradients`.
    """
    if probe_count <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if noise is None:
        noise = rng.standard_normal((len(x), m.config.latent_dim))
    _, grads = (grad_fn or loss_and_gradients)(m, x, y, noise)

    probe = m.copy()
    sizes = np.array([p.size for p in probe.params])
    flat = rng.choice(int(sizes.sum()), size=probe_count, replace=probe_count > sizes.sum())
    bounds = np.cumsum(sizes)
    worst = 0.0
    for f in flat:
        k = int(np.searchsorted(bounds, f, side="right"))
        j = int(f - (bounds[k] - sizes[k]))
        p = probe.params[k].reshape(-1)
        saved = p[j]
        p[j] = saved + step
        plus = loss(probe, x, y, noise)[0]
        p[j] = saved - step
        minus = loss(probe, x, y, noise)[0]
        p[j] = saved
        numeric = (plus - minus) / (2.0 * step)
        analytic = float(grads[k].reshape(-1)[j])
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# --- persistence -----------------------------------------------------------

def _pack_config(cfg: VaeConfig) -> bytes:
    out = [struct.pack("<I", cfg.input_dim), struct.pack("<I", len(cfg.encoder_hidden))]
    out += [struct.pack("<I", h) for h in cfg.encoder_hidden]
    out.append(struct.pack("<I", cfg.latent_dim))
    out.append(struct.pack("<I", len(cfg.decoder_hidden)))
    out += [struct.pack("<I", h) for h in cfg.decoder_hidden]
    out.append(struct.pack("<B", ACTIVATIONS.index(cfg.activation)))
    out.append(struct.pack("<dd", cfg.kl_weight, cfg.learning_rate))
    out.append(struct.pack("<IIQ", cfg.epochs, cfg.batch_size, cfg.seed))
    return b"".join(out)


def save_model(m: VaeModel, path: str | Path) -> None:
    """Write the little-endian binary model file.

    Layout: ``b"VAEC"``, u32 format version, config block, scaler block
    (u32 arity, f64 means, f64 stds), then each layer's row-major f64 weight
    matrix and f64 bias vector in declaration order.
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", m.format_version))
    buf.write(_pack_config(m.config))
    buf.write(struct.pack("<I", m.scaler.arity))
    buf.write(np.ascontiguousarray(m.scaler.means, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(m.scaler.stds, dtype="<f8").tobytes())
    for p in m.params:
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ModelFormatError(f"truncated model file while reading {what}")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values if len(values) > 1 else values[0]

    def array(self, shape: tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape))
        size = 8 * count
        if self.pos + size > len(self.data):
            raise ModelFormatError(f"truncated model file while reading {what}")
        a = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return a.astype(np.float64).reshape(shape)


def load_model(path: str | Path) -> VaeModel:
    r = _Reader(Path(path).read_bytes())
    if r.data[:4] != MAGIC:
        raise ModelFormatError(f"bad magic header {r.data[:4]!r}, expected {MAGIC!r}")
    r.pos = 4
    version = r.unpack("<I", "format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format_version {version} (this build reads {FORMAT_VERSION})"
        )
    input_dim = r.unpack("<I", "config.input_dim")
    n_enc = r.unpack("<I", "config.encoder_hidden length")
    enc = tuple(r.unpack("<I", f"config.encoder_hidden[{i}]") for i in range(n_enc))
    latent = r.unpack("<I", "config.latent_dim")
    n_dec = r.unpack("<I", "config.decoder_hidden length")
    dec = tuple(r.unpack("<I", f"config.decoder_hidden[{i}]") for i in range(n_dec))
    code = r.unpack("<B", "config.activation")
    if code >= len(ACTIVATIONS):
        raise ModelFormatError(f"unknown activation code {code} in config.activation")
    kl_weight, lr = r.unpack("<dd", "config.kl_weight/learning_rate")
    epochs, batch, seed = r.unpack("<IIQ", "config.epochs/batch_size/seed")
    try:
        cfg = VaeConfig(input_dim, enc, latent, dec, ACTIVATIONS[code], kl_weight, lr,
                        epochs, batch, seed)
    except ConfigError as exc:
        raise ModelFormatError(f"invalid config block: {exc}") from None
    arity = r.unpack("<I", "scaler.arity")
    if arity != input_dim:
        raise ModelFormatError(f"scaler.arity {arity} != config.input_dim {input_dim}")
    means = r.array((arity,), "scaler.means")
    stds = r.array((arity,), "scaler.stds")
    params = []
    for k, (fan_in, fan_out) in enumerate(cfg.layer_shapes()):
        params.append(r.array((fan_in, fan_out), f"layer {k} weights"))
        params.append(r.array((fan_out,), f"layer {k} biases"))
    if r.pos != len(r.data):
        raise ModelFormatError(f"{len(r.data) - r.pos} unexpected trailing bytes after weights")
    for k, p in enumerate(params):
        if not np.all(np.isfinite(p)):
            raise ModelFormatError(f"non-finite values in parameter array {k}")
    return VaeModel(cfg, Scaler(means, stds), params, version)
