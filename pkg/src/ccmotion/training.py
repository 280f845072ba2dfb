"""Batch sampling, the training loop, fine-tuning, and validation.

A batch is cut from one clip as consecutive windows shifted by one
frame. Inputs get Gaussian augmentation noise on the continuous dims;
targets stay clean and are the inputs shifted forward one frame.
Optional controls are dropped per sequence so the network learns both
conditioned and free-running behaviour.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .dataset import MotionDataset
from .losses import (
    LossBreakdown,
    combine,
    direction_loss,
    foot_bce,
    gaussian_nll,
    smoothness_loss,
)
from .network import (
    CCNetConfig,
    ControlBundle,
    forward,
    init,
    receptive_field,
    split_output,
)
from .optim import RmsPropState, TrainingDiverged, lr_schedule, rmsprop_step


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    window: int = 240           # consecutive frames per sequence
    noise_std: float = 0.03
    control_drop: float = 0.5   # per-sequence drop prob per optional signal
    lambdas: tuple = (10.0, 2.0, 1.0)
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_period: int = 500
    rho: float = 0.99
    eps: float = 1e-8
    epochs: int = 1
    steps_per_epoch: int = 100
    seed: int = 0
    resample_retries: int = 100

    def validate(self, net_config: CCNetConfig):
        if any(l <= 0 for l in self.lambdas):
            raise TrainError(f"loss weights must be positive: {self.lambdas}")
        rf = receptive_field(net_config)
        if self.window < rf + 1:
            raise TrainError(
                f"window {self.window} must be >= receptive field {rf} + 1")
        if self.batch_size < 1 or self.steps_per_epoch < 0 or self.epochs < 0:
            raise TrainError("batch_size >= 1, epochs/steps >= 0 required")
        if not 0.0 <= self.control_drop <= 1.0:
            raise TrainError("control_drop must lie in [0, 1]")


@dataclass
class Batch:
    """One training batch; all sequences come from the same clip."""

    inputs: np.ndarray          # (B, d_motion+2, T) with noise
    target_cont: np.ndarray    # (B, d_motion, T) clean
    target_contacts: np.ndarray  # (B, 2, T)
    controls: ControlBundle
    target_dir: np.ndarray     # (B, 12, T)
    target_vel: np.ndarray     # (B, 1, T)


def sample_batch(dataset: MotionDataset, rng, tconf: TrainConfig,
                 nconf: CCNetConfig) -> Batch:
    """Cut ``batch_size`` windows with one-frame stride from one clip.

    The clip and the first start index are drawn uniformly; window i
    starts at (s + i) mod (valid starts), so a batch walks forward
    through the clip one frame at a time. Clips shorter than the window
    are resampled a bounded number of times.
    """
    n_clips = len(dataset)
    clip = None
    for _ in range(tconf.resample_retries):
        ci = int(rng.integers(n_clips))
        cand = dataset.clips[ci]
        if len(cand) >= tconf.window:
            clip, clip_index = cand, ci
            break
    if clip is None:
        raise TrainError(
            f"no clip with >= {tconf.window} frames found in "
            f"{tconf.resample_retries} draws")
    ctl = dataset.controls(clip_index)
    dm = nconf.d_motion
    if clip.data.shape[1] != dm + 2:
        raise TrainError(
            f"clip width {clip.data.shape[1]} does not match network "
            f"input width {dm + 2}")

    n_starts = len(clip) - tconf.window + 1
    s0 = int(rng.integers(n_starts))
    T = tconf.window - 1
    B = tconf.batch_size

    inputs = np.empty((B, dm + 2, T))
    target_cont = np.empty((B, dm, T))
    target_contacts = np.empty((B, 2, T))
    cond_dir = np.empty((B, 13, T))
    cond_type = np.empty((B, 10, T))
    target_dir = np.empty((B, 12, T))
    target_vel = np.empty((B, 1, T))
    for i in range(B):
        s = (s0 + i) % n_starts
        win = clip.data[s:s + tconf.window]
        inputs[i] = win[:-1].T
        target_cont[i] = win[1:, :dm].T
        target_contacts[i] = win[1:, dm:].T
        cond_dir[i, :12] = ctl.direction[s:s + T].T
        cond_dir[i, 12] = ctl.velocity[s:s + T]
        cond_type[i] = ctl.mtype[s:s + T].T
        target_dir[i] = ctl.direction[s + 1:s + 1 + T].T
        target_vel[i, 0] = ctl.velocity[s + 1:s + 1 + T]

    # augmentation noise on the continuous dims only; contacts stay binary
    inputs[:, :dm, :] += rng.normal(0.0, tconf.noise_std, size=(B, dm, T))

    skeleton = np.repeat(ctl.skeleton[None, :], B, axis=0)
    dir_mask = (rng.random(B) >= tconf.control_drop).astype(np.float64)
    type_mask = (rng.random(B) >= tconf.control_drop).astype(np.float64)
    bundle = ControlBundle(skeleton=skeleton, direction=cond_dir,
                           mtype=cond_type, dir_on=True, type_on=True,
                           dir_mask=dir_mask, type_mask=type_mask)
    return Batch(inputs=inputs, target_cont=target_cont,
                 target_contacts=target_contacts, controls=bundle,
                 target_dir=target_dir, target_vel=target_vel)


def _step_losses(params, batch: Batch, nconf: CCNetConfig,
                 tconf: TrainConfig, rng):
    tape = ad.Tape()
    fwd = forward(params, batch.inputs, batch.controls, nconf,
                  train_mode=True, rng=rng, tape=tape)
    sl = split_output(fwd.out, nconf)
    l_g = gaussian_nll(batch.target_cont, sl.mean, sl.log_std)
    l_s = smoothness_loss(sl.mean)
    l_f = foot_bce(batch.target_contacts, sl.foot)
    l_d = direction_loss(sl.direction, sl.velocity, batch.target_dir,
                         batch.target_vel, True,
                         row_mask=batch.controls.dir_mask)
    total = combine(l_g, l_s, l_f, l_d, tconf.lambdas)
    return tape, fwd, total, LossBreakdown(
        l_g.data, l_s.data, l_f.data, l_d.data, tconf.lambdas)


def train(dataset: MotionDataset, nconf: CCNetConfig, tconf: TrainConfig, *,
          params=None, start_epoch: int = 0, val_dataset=None,
          out_dir=None, csv_path=None, log=None):
    """Run the full loop; returns (params, per-epoch LossBreakdown list).

    Works on a private copy of ``params`` so a caller's checkpoint is
    never mutated. A non-finite loss or gradient aborts after writing a
    diagnostic snapshot checkpoint (when ``out_dir`` is given).
    """
    tconf.validate(nconf)
    if params is None:
        params = init(nconf, tconf.seed)
    else:
        params = {k: v.copy() for k, v in params.items()}
    state = RmsPropState(rho=tconf.rho, eps=tconf.eps)
    rng = np.random.default_rng(tconf.seed)
    history = []
    writer = None
    csv_fh = None
    if csv_path:
        csv_fh = open(csv_path, "w", newline="")
        writer = csv.writer(csv_fh)
        writer.writerow(["epoch", "L_G", "L_s", "L_f", "L_d", "total",
                         "lr", "val_loss", "val_transform"])
    try:
        for epoch in range(start_epoch, start_epoch + tconf.epochs):
            lr = lr_schedule(epoch, initial=tconf.lr, decay=tconf.lr_decay,
                             period=tconf.lr_period)
            sums = np.zeros(4)
            for step in range(tconf.steps_per_epoch):
                batch = sample_batch(dataset, rng, tconf, nconf)
                tape, fwd, total, bd = _step_losses(
                    params, batch, nconf, tconf, rng)
                if not math.isfinite(bd.total):
                    _snapshot(params, nconf, out_dir)
                    raise TrainingDiverged(
                        f"non-finite loss {bd.total} at epoch {epoch} "
                        f"step {step}")
                grads = ad.backward(tape, total, fwd.param_vars)
                try:
                    rmsprop_step(params, grads, state, lr)
                except TrainingDiverged:
                    _snapshot(params, nconf, out_dir)
                    raise
                sums += [bd.L_G, bd.L_s, bd.L_f, bd.L_d]
            n = max(tconf.steps_per_epoch, 1)
            epoch_bd = LossBreakdown(*(sums / n), lambdas=tconf.lambdas)
            history.append(epoch_bd)
            val = None
            if val_dataset is not None:
                val = validate(params, nconf, val_dataset,
                               lambdas=tconf.lambdas)
            if log:
                msg = (f"epoch {epoch}: total {epoch_bd.total:.5f} "
                       f"(G {epoch_bd.L_G:.5f} s {epoch_bd.L_s:.5f} "
                       f"f {epoch_bd.L_f:.5f} d {epoch_bd.L_d:.5f}) lr {lr:g}")
                if val:
                    msg += f" val {val['loss']:.5f}"
                log(msg)
            if writer:
                writer.writerow(
                    [epoch] + epoch_bd.as_row() + [lr] +
                    ([val["loss"], val["transformed"]] if val else ["", ""]))
                csv_fh.flush()
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
                save_checkpoint(params, nconf,
                                os.path.join(out_dir, f"epoch_{epoch}.ccn"))
                save_checkpoint(params, nconf,
                                os.path.join(out_dir, "latest.ccn"))
    finally:
        if csv_fh:
            csv_fh.close()
    return params, history


def _snapshot(params, nconf, out_dir):
    if not out_dir:
        return
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(params, nconf, os.path.join(out_dir, "diverged.ccn"))


def fine_tune(params, nconf: CCNetConfig, dataset: MotionDataset,
              tconf: TrainConfig, **kwargs):
    """Continue training a loaded model on a new subject's data.

    Zero epochs/steps returns an identical copy. The dataset's skeleton
    configuration width must match what the model was trained with.
    """
    width = len(dataset.controls(0).skeleton)
    if width != nconf.skeleton_dim:
        raise TrainError(
            f"skeleton configuration width {width} does not match the "
            f"model's {nconf.skeleton_dim}")
    return train(dataset, nconf, tconf, params=params, **kwargs)


def validate(params, nconf: CCNetConfig, dataset: MotionDataset, *,
             lambdas=(10.0, 2.0, 1.0)):
    """Teacher-forced loss over whole clips, controls on, no dropout.

    Returns the raw loss, the report transform log10(loss + 320), and
    per-term means weighted by clip length. A loss at or below -320
    cannot be transformed and is flagged ``raw_only``.
    """
    dm = nconf.d_motion
    sums = np.zeros(4)
    weights = 0
    for i, clip in enumerate(dataset.clips):
        if len(clip) < 2:
            continue
        ctl = dataset.controls(i)
        T = len(clip) - 1
        inputs = clip.data[:-1].T[None]
        cond_dir = np.concatenate(
            [ctl.direction[:T].T, ctl.velocity[None, :T]], axis=0)[None]
        bundle = ControlBundle(
            skeleton=ctl.skeleton[None], direction=cond_dir,
            mtype=ctl.mtype[:T].T[None], dir_on=True, type_on=True)
        fwd = forward(params, inputs, bundle, nconf)
        sl = split_output(fwd.out, nconf)
        l_g = gaussian_nll(clip.data[1:, :dm].T[None], sl.mean, sl.log_std)
        l_s = smoothness_loss(sl.mean)
        l_f = foot_bce(clip.data[1:, dm:].T[None], sl.foot)
        l_d = direction_loss(sl.direction, sl.velocity,
                             ctl.direction[1:].T[None],
                             ctl.velocity[None, None, 1:], True)
        sums += np.array([l_g.data, l_s.data, l_f.data, l_d.data]) * T
        weights += T
    if weights == 0:
        raise TrainError("validation dataset has no clip with >= 2 frames")
    bd = LossBreakdown(*(sums / weights), lambdas=lambdas)
    raw = bd.total
    if raw + 320.0 <= 0.0:
        return {"loss": raw, "transformed": None, "raw_only": True,
                "breakdown": bd}
    return {"loss": raw, "transformed": math.log10(raw + 320.0),
            "raw_only": False, "breakdown": bd}
