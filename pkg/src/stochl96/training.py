"""CRPS trajectory learning of coupled OU parametrizations."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .crps import _check_alpha
from .dataset import TruthDataset, split_train_val
from .integrators import THIRD, TWO_THIRDS, IntegrationDivergence
from .kernels import DIVERGENCE_LIMIT
from .models import COARSE_DT, CoupledOuModel, initial_coupled_ou, save_model
from .pod import PodBasis

log = logging.getLogger(__name__)

# trajectory length -> ensembles per batch
BATCH_PRESETS = {2: 200, 4: 100, 8: 50, 16: 25, 32: 12, 64: 6, 128: 3, 200: 2}
DEFAULT_LR = {"ou": 1e-2, "mult": 1e-4}


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 8
    batch_size: int | None = None
    members: int = 20
    epochs: int = 400
    batches_per_epoch: int = 125
    learning_rate: float | None = None
    alpha: float = 1.0
    seed: int = 0
    form: str = "ou"
    dt: float = COARSE_DT
    val_fraction: float = 0.2
    max_skip_fraction: float = 0.1
    trainable_start: bool = False

    def __post_init__(self):
        if self.form not in DEFAULT_LR:
            raise ValueError(f"form must be one of {sorted(DEFAULT_LR)}, got {self.form!r}")
        for name in ("n_steps", "members", "epochs", "batches_per_epoch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        _check_alpha(self.alpha)

    @property
    def n_batch(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        if self.n_steps in BATCH_PRESETS:
            return BATCH_PRESETS[self.n_steps]
        # keep N_b * N_t near the presets' ~400
        return max(1, round(400 / self.n_steps))

    @property
    def lr(self) -> float:
        return DEFAULT_LR[self.form] if self.learning_rate is None else self.learning_rate


@dataclass
class LossHistory:
    batch_loss: list = field(default_factory=list)
    batch_epoch: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def smoothed(self, window: int = 50) -> np.ndarray:
        """Trailing moving average of the recorded batch losses."""
        x = np.asarray(self.batch_loss, dtype=np.float64)
        if x.size == 0:
            return x
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(1, x.size + 1)
        lo = np.maximum(0, idx - window)
        return (c[idx] - c[lo]) / (idx - lo)

    def initial_and_final(self, window: int = 50) -> tuple[float, float]:
        """Means of the first and last ``window`` batch losses."""
        x = np.asarray(self.batch_loss, dtype=np.float64)
        w = min(window, x.size)
        return float(x[:w].mean()), float(x[-w:].mean())

    def write_csv(self, path) -> None:
        """Columns ``batch, loss, epoch, val_loss``; val_loss is filled on each epoch's last batch."""
        last_of_epoch = {}
        for i, ep in enumerate(self.batch_epoch):
            last_of_epoch[ep] = i
        val_at = {last_of_epoch[ep]: v for ep, v in enumerate(self.val_loss) if ep in last_of_epoch}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch", "loss", "epoch", "val_loss"])
            for i, (loss, ep) in enumerate(zip(self.batch_loss, self.batch_epoch)):
                w.writerow([i, repr(float(loss)), ep, repr(float(val_at[i])) if i in val_at else ""])


# -- parameters ----------------------------------------------------------------

def model_params(model: CoupledOuModel) -> dict:
    params = {"mu": model.mu, "A": model.A, "B": model.B}
    if model.multiplicative:
        params.update(a=model.a, b=model.b)
    if model.r0 is not None:
        params["r0"] = model.r0
    return {k: np.array(v, dtype=np.float64) for k, v in params.items()}


def with_params(model: CoupledOuModel, params: dict) -> CoupledOuModel:
    return replace(model, **{k: np.array(v, dtype=np.float64) for k, v in params.items()})


def param_layout(model: CoupledOuModel) -> ad.ParamLayout:
    return ad.ParamLayout.of(model_params(model))


# -- differentiable rollout ----------------------------------------------------

def node_budget(n_steps: int, multiplicative: bool = False, alpha_nonzero: bool = True,
                trainable_start: bool = False) -> int:
    """Exact number of tape nodes recorded by :func:`rollout_loss`.

    Leaves (mu, A, B, then a, b and r0 when present) and two transposes,
    then per step: 5 nodes for the OU update, 1 for the increment map, 18 for
    the three stages and 6 for the error term and accumulation; the spread
    term adds 7 and the multiplicative scaling 5. On the first step the
    state is still a constant, which saves 5 stage nodes (7 when
    multiplicative). One final scaling closes the tape.
    """
    leaves = 3 + 2 * multiplicative + trainable_start
    per_step = 30 + 7 * alpha_nonzero + 5 * multiplicative
    return leaves + 2 + n_steps * per_step - (7 if multiplicative else 5) + 1


def rollout_loss(params: dict, modes: np.ndarray, x0: np.ndarray, refs: np.ndarray,
                 eps: np.ndarray, alpha: float, dt: float, F: float):
    """Scaled-CRPS batch loss of a coupled OU ensemble rollout.

    ``x0`` is ``(N_b, K)``, ``refs`` the references at steps 1..N_t with
    shape ``(N_b, N_t, K)``, ``eps`` the standard normal draws with shape
    ``(N_t, N_b, M, K)``. ``params`` values may be arrays or tape variables;
    the result is a tape variable exactly when some parameter is.
    """
    n_t, n_b, M, K = eps.shape
    if refs.shape != (n_b, n_t, K) or x0.shape != (n_b, K):
        raise ValueError("x0, refs and eps shapes disagree")
    modes = np.asarray(modes, dtype=np.float64)
    modes_t = modes.T
    mu, A, B = params["mu"], params["A"], params["B"]
    mult = "a" in params
    r = params.get("r0", mu)
    At, Bt = ad.transpose(A), ad.transpose(B)
    X = np.broadcast_to(np.asarray(x0, dtype=np.float64)[:, None, :], (n_b, M, K)).copy()
    sqdt = math.sqrt(dt)
    spread_w = alpha / (2.0 * M * M)
    total = 0.0
    for n in range(n_t):
        r = ad.add(ad.add(r, ad.matmul(ad.sub(mu, r), At)), ad.matmul(eps[n] * sqdt, Bt))
        if mult:
            p = ad.matmul(X, modes)
            cr = ad.mul(ad.add(params["a"], ad.mul(params["b"], ad.mul(p, p))), r)
        else:
            cr = r
        inc = ad.matmul(cr, modes_t)
        k1 = ad.add(ad.add(X, ad.mul(ad.l96_drift(X, F), dt)), inc)
        k2 = ad.add(ad.mul(X, 0.75),
                    ad.mul(ad.add(ad.add(k1, ad.mul(ad.l96_drift(k1, F), dt)), inc), 0.25))
        X = ad.add(ad.mul(X, THIRD),
                   ad.mul(ad.add(ad.add(k2, ad.mul(ad.l96_drift(k2, F), dt)), inc), TWO_THIRDS))
        xv = ad.value(X)
        if not np.all(np.abs(xv) <= DIVERGENCE_LIMIT):
            raise IntegrationDivergence(n + 1)
        err = ad.mul(ad.sum(ad.absolute(ad.sub(X, refs[:, n, None, :])), axis=1), 1.0 / M)
        if alpha:
            pairs = ad.sub(ad.reshape(X, (n_b, M, 1, K)), ad.reshape(X, (n_b, 1, M, K)))
            spread = ad.mul(ad.sum(ad.absolute(pairs), axis=(1, 2)), spread_w)
            err = ad.sub(err, spread)
        total = ad.add(total, ad.sum(err))
    return ad.mul(total, 1.0 / (n_b * n_t))


def rollout_states(params: dict, modes, x0, eps, dt: float, F: float) -> np.ndarray:
    """Plain ensemble rollout with the training update order; ``(N_b, N_t+1, M, K)``."""
    n_t, n_b, M, K = eps.shape
    mu, A, B = (np.asarray(params[k]) for k in ("mu", "A", "B"))
    mult = "a" in params
    r = np.asarray(params.get("r0", mu))
    X = np.broadcast_to(np.asarray(x0)[:, None, :], (n_b, M, K)).copy()
    out = np.empty((n_b, n_t + 1, M, K))
    out[:, 0] = X
    for n in range(n_t):
        r = r + (mu - r) @ A.T + (eps[n] * math.sqrt(dt)) @ B.T
        if mult:
            p = X @ modes
            cr = (params["a"] + params["b"] * (p * p)) * r
        else:
            cr = r
        inc = cr @ modes.T
        k1 = X + ad.l96_drift(X, F) * dt + inc
        k2 = X * 0.75 + (k1 + ad.l96_drift(k1, F) * dt + inc) * 0.25
        X = X * THIRD + (k2 + ad.l96_drift(k2, F) * dt + inc) * TWO_THIRDS
        out[:, n + 1] = X
    return out


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(theta, grad, state: AdamState, lr: float) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update; returns new parameters and a new state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError("gradient layout does not match the optimizer state")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    theta = np.asarray(theta, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return theta, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


# -- batches -----------------------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    starts: np.ndarray
    segments: np.ndarray  # (N_b, N_t + 1, K); segments[:, 0] is the initial condition

    @property
    def initial(self) -> np.ndarray:
        return self.segments[:, 0]

    @property
    def refs(self) -> np.ndarray:
        return self.segments[:, 1:]


def sample_batch(snapshots: np.ndarray, n_steps: int, batch_size: int, rng) -> Batch:
    """Uniformly drawn contiguous segments of ``n_steps + 1`` snapshots, with replacement."""
    n = snapshots.shape[0]
    if n < n_steps + 1:
        raise ValueError(f"span of {n} snapshots is shorter than a {n_steps}-step segment")
    starts = rng.integers(0, n - n_steps, size=batch_size)
    idx = starts[:, None] + np.arange(n_steps + 1)
    return Batch(starts, snapshots[idx])


def batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0, epoch, batch))))


def batch_inputs(train: np.ndarray, cfg: TrainConfig, K: int, epoch: int, batch: int):
    """Segments and noise of one training batch, reproducible from the config seed."""
    rng = batch_rng(cfg.seed, epoch, batch)
    b = sample_batch(train, cfg.n_steps, cfg.n_batch, rng)
    eps = rng.standard_normal((cfg.n_steps, cfg.n_batch, cfg.members, K))
    return b, eps


def validation_inputs(val: np.ndarray, cfg: TrainConfig, K: int):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=(1,))))
    b = sample_batch(val, cfg.n_steps, cfg.n_batch, rng)
    eps = rng.standard_normal((cfg.n_steps, cfg.n_batch, cfg.members, K))
    return b, eps


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: CoupledOuModel
    best_model: CoupledOuModel
    history: LossHistory
    best_epoch: int


def train(cfg: TrainConfig, data: TruthDataset, basis: PodBasis, out_dir=None,
          initial: CoupledOuModel | None = None) -> TrainResult:
    """Fit a coupled OU model by Adam on the scaled-CRPS batch loss.

    Training segments come from the leading part of ``data`` and validation
    segments from the trailing part. With ``out_dir`` the last and the
    best-validation models are checkpointed after every epoch.
    """
    train_ds, val_ds = split_train_val(data, cfg.val_fraction)
    K, F, dt = data.params.K, data.params.F, cfg.dt
    model = initial or initial_coupled_ou(basis.modes, cfg.form == "mult", cfg.trainable_start)
    layout = param_layout(model)
    theta = layout.flatten(model_params(model))
    opt = AdamState.zeros(layout.size)
    modes = model.modes
    hist = LossHistory()
    val_batch, val_eps = validation_inputs(val_ds.snapshots, cfg, K)
    best_val, best_theta, best_epoch = math.inf, theta.copy(), -1
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def objective(b, eps):
        return lambda p: rollout_loss(p, modes, b.initial, b.refs, eps, cfg.alpha, dt, F)

    for epoch in range(cfg.epochs):
        skipped = 0
        for j in range(cfg.batches_per_epoch):
            b, eps = batch_inputs(train_ds.snapshots, cfg, K, epoch, j)
            try:
                loss, grad = ad.value_and_grad(objective(b, eps), layout, theta)
            except IntegrationDivergence:
                skipped += 1
                continue
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                skipped += 1
                continue
            hist.batch_loss.append(loss)
            hist.batch_epoch.append(epoch)
            theta, opt = adam_step(theta, grad, opt, cfg.lr)
        hist.skipped.append(skipped)
        if skipped > cfg.max_skip_fraction * cfg.batches_per_epoch:
            raise TrainingAborted(
                f"epoch {epoch}: {skipped} of {cfg.batches_per_epoch} batches diverged "
                f"(limit {cfg.max_skip_fraction:.0%}); lower the learning rate or trajectory length")
        try:
            val = float(ad.value(objective(val_batch, val_eps)(layout.unflatten(theta))))
        except IntegrationDivergence:
            val = math.inf
        hist.val_loss.append(val)
        if val < best_val:
            best_val, best_theta, best_epoch = val, theta.copy(), epoch
        log.info("epoch %d: mean batch loss %.5g, validation %.5g, skipped %d", epoch,
                 np.mean(hist.batch_loss[-cfg.batches_per_epoch:]) if hist.batch_loss else math.nan,
                 val, skipped)
        if out_dir is not None:
            save_model(with_params(model, layout.unflatten(theta)), os.path.join(out_dir, "last.bin"),
                       {"epoch": epoch})
            save_model(with_params(model, layout.unflatten(best_theta)), os.path.join(out_dir, "best.bin"),
                       {"epoch": best_epoch})
    final = with_params(model, layout.unflatten(theta))
    best = with_params(model, layout.unflatten(best_theta))
    return TrainResult(final, best, hist, best_epoch)


def replay_batch_loss(model: CoupledOuModel, data: TruthDataset, cfg: TrainConfig,
                      epoch: int, batch: int) -> float:
    """Recompute the loss of a recorded batch from its seed-derived segments and noise."""
    train_ds, _ = split_train_val(data, cfg.val_fraction)
    b, eps = batch_inputs(train_ds.snapshots, cfg, data.params.K, epoch, batch)
    return float(ad.value(rollout_loss(model_params(model), model.modes, b.initial, b.refs, eps,
                                       cfg.alpha, cfg.dt, data.params.F)))
