"""Target classifier and confidence-attacker networks.

Both networks are stacks of residual blocks.  In ``conv`` mode the blocks are
1D or 2D same-padded convolutions, so the classifier accepts any spatial size
and reduces it with global average pooling.  In ``mlp`` mode the blocks are
dense layers over flat feature vectors.
"""

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, InvalidInputError
from .tensor import Parameter, Tensor, leaky_relu, no_grad, relu, tanh


class Module:
    """Minimal container that discovers parameters, buffers and submodules."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                out.append((prefix + name, value))
        for name, child in self._children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        out = [(prefix + name, getattr(self, name)) for name in getattr(self, "_buffers", ())]
        for name, child in self._children():
            out.extend(child.named_buffers(f"{prefix}{name}."))
        return out

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        """Copies of every parameter and buffer, keyed by dotted name."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(targets) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise InvalidInputError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, value in state.items():
            dest = targets[name].data if name in targets else buffers[name]
            if dest.shape != value.shape:
                raise InvalidInputError(
                    f"{name}: expected shape {dest.shape}, got {value.shape}")
            dest[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = Parameter(_uniform(rng, (n_in, n_out), n_in))
        self.bias = Parameter(_uniform(rng, (n_out,), n_in))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv(Module):
    def __init__(self, n_in, n_out, kernel, ndim, rng):
        fan_in = n_in * kernel ** ndim
        self.weight = Parameter(_uniform(rng, (n_out, n_in) + (kernel,) * ndim, fan_in))
        self.bias = Parameter(_uniform(rng, (n_out,), fan_in))

    def forward(self, x):
        return ops.conv(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalisation with running statistics (momentum 0.1, eps 1e-5).

    ``update_stats`` can be switched off to normalise with batch statistics
    without touching the running estimates.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self.update_stats = True

    def forward(self, x):
        if not self.training:
            out, _ = ops.batch_norm(x, self.gamma, self.beta, self.eps,
                                    stats=(self.running_mean, self.running_var))
            return out
        out, (mu, var) = ops.batch_norm(x, self.gamma, self.beta, self.eps)
        if self.update_stats:
            count = x.size // x.shape[1]
            unbiased = var * count / max(count - 1, 1)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mu
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * unbiased
        return out


class Dropout(Module):
    """Inverted dropout, active in train mode or when forced by MC dropout."""

    def __init__(self, rate, seed=0):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(seed)
        self.forced_rate = None

    def forward(self, x, rng=None):
        rate = self.forced_rate if self.forced_rate is not None else (
            self.rate if self.training else 0.0)
        return ops.dropout(x, rate, rng if rng is not None else self.rng)


class ResidualBlock(Module):
    """Two conv (or dense) layers plus an identity or 1x1 projection shortcut."""

    def __init__(self, n_in, n_out, kind, rng, kernel=3, ndim=2,
                 batch_norm=False, negative_slope=None):
        if kind == "conv":
            self.layer1 = Conv(n_in, n_out, kernel, ndim, rng)
            self.layer2 = Conv(n_out, n_out, kernel, ndim, rng)
            self.shortcut = Conv(n_in, n_out, 1, ndim, rng) if n_in != n_out else None
        else:
            self.layer1 = Linear(n_in, n_out, rng)
            self.layer2 = Linear(n_out, n_out, rng)
            self.shortcut = Linear(n_in, n_out, rng) if n_in != n_out else None
        self.norm1 = BatchNorm(n_out) if batch_norm else None
        self.norm2 = BatchNorm(n_out) if batch_norm else None
        self.negative_slope = negative_slope

    def _act(self, x):
        if self.negative_slope is None:
            return relu(x)
        return leaky_relu(x, self.negative_slope)

    def forward(self, x):
        h = self.layer1(x)
        if self.norm1 is not None:
            h = self.norm1(h)
        h = self._act(h)
        h = self.layer2(h)
        if self.norm2 is not None:
            h = self.norm2(h)
        skip = self.shortcut(x) if self.shortcut is not None else x
        return self._act(h + skip)


@dataclass
class ArchConfig:
    """Architecture descriptor shared by the classifier and the generator.

    ``in_channels`` is the channel count in ``conv`` mode and the feature
    count in ``mlp`` mode.  ``ndim`` (1 or 2) only matters in ``conv`` mode.
    """

    kind: str = "conv"
    ndim: int = 2
    in_channels: int = 1
    n_classes: int = 10
    widths: tuple = (16, 32, 32)
    kernel: int = 3
    dropout: float = 0.3
    batch_norm: bool = False
    negative_slope: float = 0.2
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)

    def validate(self, role="target"):
        if self.kind not in ("conv", "mlp"):
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.kind == "conv" and self.ndim not in (1, 2):
            raise ConfigError(f"conv ndim must be 1 or 2, got {self.ndim}")
        if not self.widths:
            raise ConfigError("at least one residual block is required")
        if any(w <= 0 for w in self.widths) or self.in_channels <= 0:
            raise ConfigError(f"channel widths must be positive, got {self.widths}")
        if role == "target" and self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError(f"kernel must be odd, got {self.kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout}")

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_target_config(kind="conv", **overrides):
    base = ArchConfig(kind=kind)
    if kind == "mlp":
        base = replace(base, in_channels=2, n_classes=3, widths=(32, 32, 32))
    return replace(base, **overrides)


def default_generator_config(kind="conv", **overrides):
    base = ArchConfig(kind=kind, widths=(8, 8), batch_norm=True, dropout=0.0)
    if kind == "mlp":
        base = replace(base, in_channels=2, widths=(8, 8))
    return replace(base, **overrides)


def _check_input(x, cfg, what):
    if cfg.kind == "mlp":
        ok = x.ndim == 2 and x.shape[1] == cfg.in_channels
        expected = f"[batch, {cfg.in_channels}]"
    else:
        ok = x.ndim == 2 + cfg.ndim and x.shape[1] == cfg.in_channels
        expected = f"[batch, {cfg.in_channels}" + ", *" * cfg.ndim + "]"
    if not ok:
        raise InvalidInputError(f"{what} expects input {expected}, got {tuple(x.shape)}")


class TargetClassifier(Module):
    """Residual classifier: blocks -> (global average pool) -> dropout -> linear."""

    role = "target"

    def __init__(self, cfg):
        cfg.validate("target")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        widths = (cfg.in_channels,) + cfg.widths
        self.blocks = [
            ResidualBlock(widths[i], widths[i + 1], cfg.kind, rng, cfg.kernel, cfg.ndim,
                          batch_norm=cfg.batch_norm)
            for i in range(len(cfg.widths))
        ]
        self.dropout = Dropout(cfg.dropout, seed=cfg.seed + 1)
        self.head = Linear(widths[-1], cfg.n_classes, rng)

    def features(self, x):
        _check_input(x, self.cfg, "classifier")
        h = x
        for block in self.blocks:
            h = block(h)
        return ops.global_avg_pool(h) if self.cfg.kind == "conv" else h

    def forward(self, x, rng=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        return self.head(self.dropout(self.features(x), rng=rng))

    def describe(self):
        return {"role": self.role, "config": self.cfg.to_dict()}


class Generator(Module):
    """Confidence attacker: residual trunk with batch-norm and LeakyReLU, tanh output.

    Maps a seed tensor shaped like one training sample to a tensor of the same
    shape with values in [-1, 1].
    """

    role = "generator"

    def __init__(self, cfg):
        cfg.validate("generator")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        widths = (cfg.in_channels,) + cfg.widths
        self.blocks = [
            ResidualBlock(widths[i], widths[i + 1], cfg.kind, rng, cfg.kernel, cfg.ndim,
                          batch_norm=True, negative_slope=cfg.negative_slope)
            for i in range(len(cfg.widths))
        ]
        if cfg.kind == "conv":
            self.out = Conv(widths[-1], cfg.in_channels, cfg.kernel, cfg.ndim, rng)
        else:
            self.out = Linear(widths[-1], cfg.in_channels, rng)

    def forward(self, seeds):
        seeds = seeds if isinstance(seeds, Tensor) else Tensor(seeds)
        _check_input(seeds, self.cfg, "generator")
        h = seeds
        for block in self.blocks:
            h = block(h)
        return tanh(self.out(h))

    def describe(self):
        return {"role": self.role, "config": self.cfg.to_dict()}


def build_target(cfg):
    return TargetClassifier(cfg)


def build_generator(cfg, target):
    """Build a generator matched to ``target``'s input layout.

    Raises :class:`ConfigError` unless the generator is strictly shallower and
    has strictly fewer parameters than the target.
    """
    cfg = replace(cfg, kind=target.cfg.kind, ndim=target.cfg.ndim,
                  in_channels=target.cfg.in_channels)
    if len(cfg.widths) >= len(target.cfg.widths):
        raise ConfigError(
            f"generator must be shallower than the target: {len(cfg.widths)} blocks "
            f"vs {len(target.cfg.widths)}")
    gen = Generator(cfg)
    n_gen, n_target = gen.num_parameters(), target.num_parameters()
    if n_gen >= n_target:
        raise ConfigError(
            f"generator has {n_gen} parameters, target has {n_target}; "
            "the generator must be strictly smaller")
    return gen


def build_from_descriptor(descriptor):
    cfg = ArchConfig.from_dict(descriptor["config"])
    if descriptor["role"] == "target":
        return TargetClassifier(cfg)
    if descriptor["role"] == "generator":
        return Generator(cfg)
    raise ConfigError(f"unknown model role {descriptor['role']!r}")


def forward_classifier(model, batch, mode="eval", rng=None):
    """Logits of ``model`` on ``batch`` in ``"train"`` or ``"eval"`` mode."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    out = model(batch, rng=rng)
    if not np.all(np.isfinite(out.data)):
        raise InvalidInputError("classifier produced non-finite logits")
    return out


@contextmanager
def frozen(module):
    """Stop gradient recording into ``module``'s parameters inside the block."""
    params = module.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield module
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


@contextmanager
def batch_stats_only(module):
    """Train-mode batch-norm statistics without updating running estimates."""
    norms = [m for m in module.modules() if isinstance(m, BatchNorm)]
    was_training = module.training
    module.train()
    for m in norms:
        m.update_stats = False
    try:
        yield module
    finally:
        for m in norms:
            m.update_stats = True
        module.train(was_training)


def predict_proba(model, samples, batch_size=512):
    """Eval-mode softmax scores for a whole array, as an ndarray."""
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            logits = model(Tensor(samples[start:start + batch_size]))
            out.append(ops.softmax(logits).data)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.n_classes))


def mc_dropout_forward(model, batch, realizations=10, rate=0.3, seed=0, batch_size=512):
    """Mean softmax over ``realizations`` passes with penultimate dropout forced on.

    With ``rate == 0`` this is exactly the eval-mode softmax.
    """
    if realizations < 1:
        raise ConfigError(f"realizations must be >= 1, got {realizations}")
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"MC dropout rate must lie in [0, 1), got {rate}")
    batch = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    if rate == 0.0:
        return predict_proba(model, batch, batch_size)
    rng = np.random.default_rng(seed)
    model.eval()
    model.dropout.forced_rate = rate
    parts = []
    try:
        with no_grad():
            # the trunk is deterministic in eval mode; only the head is resampled
            for start in range(0, len(batch), batch_size):
                feats = model.features(Tensor(batch[start:start + batch_size]))
                total = 0.0
                for _ in range(realizations):
                    logits = model.head(model.dropout(feats, rng=rng))
                    total = total + ops.softmax(logits).data
                parts.append(total / realizations)
    finally:
        model.dropout.forced_rate = None
    return np.concatenate(parts) if parts else np.zeros((0, model.cfg.n_classes))
