"""Optimization loop, optimizer and the history CSV."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigurationError, NumericError
from .losses import ccl_loss, cls_loss, gsc_loss, total_loss
from .model import forward, init_params
from .tensor import Tensor

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("step", "cls", "gsc", "ccl", "total")


@dataclass
class TrainConfig:
    """Optimization settings.

    ``mode`` ``"v1"`` trains the classifier alone; ``"v2"`` adds fusion and
    refinement with the consistency (``use_gsc``) and contrastive
    (``use_ccl``) terms, both on unless switched off.

    ``detach_rcam`` / ``detach_cam`` stop the gradient of the consistency
    terms on one side; by default both maps receive it. ``label_gate``
    multiplies the foreground CAMs by the image labels before the background
    channel is formed, so absent classes cannot claim pixels.
    """

    mode: str = "v2"
    steps: int = 300
    batch_size: int = 8
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    use_gsc: bool = True
    use_ccl: bool = True
    detach_rcam: bool = False
    detach_cam: bool = False
    label_gate: bool = False

    def __post_init__(self):
        self.mode = str(self.mode).lower()
        self.betas = tuple(self.betas)

    def validate(self):
        if self.mode not in ("v1", "v2"):
            raise ConfigurationError(f"mode must be v1 or v2, got {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        return self

    @property
    def refine(self):
        return self.mode == "v2"

    @property
    def gsc_on(self):
        return self.refine and self.use_gsc

    @property
    def ccl_on(self):
        return self.refine and self.use_ccl

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class AdamW:
    """Adam with decoupled weight decay on matrices and kernels.

    Vectors (norm scales, biases) and relative-position tables are not decayed.
    """

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = params
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.beta1, self.beta2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.decay = {k: v.ndim >= 2 and "rel_pos_table" not in k for k, v in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.decay[k]:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def batch_indices(n, batch_size, seed):
    """Endless stream of index batches from reshuffled epochs."""
    rng = np.random.default_rng(seed)
    pool = np.empty(0, dtype=np.int64)
    while True:
        while len(pool) < batch_size:
            pool = np.concatenate([pool, rng.permutation(n)])
        yield pool[:batch_size]
        pool = pool[batch_size:]


def compute_losses(out, labels, tcfg):
    """LossBundle for one forward pass under ``tcfg``'s switches."""
    cls = cls_loss(out.scores, labels)
    gsc = ccl = None
    if tcfg.gsc_on or tcfg.ccl_on:
        rcam = Tensor(out.rcam.data) if tcfg.detach_rcam else out.rcam
        cam = Tensor(out.cam.data) if tcfg.detach_cam else out.cam
        if tcfg.gsc_on:
            gsc = gsc_loss(cam, rcam)
        if tcfg.ccl_on:
            ccl = ccl_loss(cam, rcam)
    return total_loss(cls, gsc, ccl)


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)


def train(model_cfg, train_cfg, images, labels, params=None, log_every=0):
    """Fit parameters on ``images`` (N, 3, H, W) with label vectors (N, C).

    Returns a :class:`TrainResult`; ``history`` holds one dict per step with
    the keys of :data:`HISTORY_FIELDS`.
    """
    model_cfg.validate()
    train_cfg.validate()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if len(images) != len(labels) or len(images) == 0:
        raise ConfigurationError(f"got {len(images)} images and {len(labels)} label rows")
    if params is None:
        params = init_params(model_cfg, refine=train_cfg.refine)
    opt = AdamW(
        params,
        lr=train_cfg.learning_rate,
        betas=train_cfg.betas,
        eps=train_cfg.eps,
        weight_decay=train_cfg.weight_decay,
    )
    batches = batch_indices(len(images), train_cfg.batch_size, train_cfg.seed)
    history = []
    for step in range(train_cfg.steps):
        idx = next(batches)
        gate = labels[idx] if train_cfg.label_gate else None
        out = forward(params, images[idx], model_cfg, refine=train_cfg.refine, labels=gate)
        try:
            bundle = compute_losses(out, labels[idx], train_cfg)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}", component=exc.component, step=step) from exc
        row = {"step": step, **bundle.as_floats()}
        if not math.isfinite(row["total"]):
            raise NumericError(f"step {step}: total loss is not finite", component="total", step=step)
        opt.zero_grad()
        bundle.total.backward()
        opt.step()
        history.append(row)
        if log_every and step % log_every == 0:
            log.info("step %d cls=%.4f gsc=%.4f ccl=%.4f", step, row["cls"], row["gsc"], row["ccl"])
    return TrainResult(params, history)


def history_csv(history):
    """UTF-8 CSV text with header ``step,cls,gsc,ccl,total``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_FIELDS)
    for row in history:
        writer.writerow([row["step"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
    return buf.getvalue()
