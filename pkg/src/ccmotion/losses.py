"""Training losses: Gaussian NLL, smoothness, foot BCE, control matching.

Every loss returns a scalar Var so the composed objective stays on one
tape. Targets are plain arrays (wrapped as constants); only predictions
carry gradients.
"""

import math
import warnings

import numpy as np

from . import autodiff as ad

LOG_STD_FLOOR = math.log(1e-4)
# objective weights: total = L_G + 10*L_s + 2*L_f + 1*L_d
LAMBDA_SMOOTH = 10.0
LAMBDA_FOOT = 2.0
LAMBDA_DIR = 1.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class LossError(ValueError):
    pass


def _as_var(x, name):
    if isinstance(x, ad.Var):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise LossError(f"{name} contains non-finite values")
    return ad.constant(arr)


def _dims_axis(ndim):
    # (B, D, T) -> channel axis 1; (D, T) and (D,) -> axis 0
    if ndim == 3:
        return 1
    if ndim in (1, 2):
        return 0
    raise LossError(f"expected 1-3 dims, got {ndim}")


def gaussian_nll(x, mean, log_std):
    """Diagonal-Gaussian negative log likelihood.

    Per frame: sum over dims of log(sigma) + 0.5*log(2pi)
    + 0.5*((x-mu)/sigma)^2 with sigma floored at 1e-4, then averaged
    over frames and batch. The floor is applied in log space (monotone,
    so identical to clipping sigma) which keeps the reciprocal exact.
    """
    x = _as_var(x, "x")
    mean = _as_var(mean, "mean")
    log_std = _as_var(log_std, "log_std")
    if x.data.shape != mean.data.shape or x.data.shape != log_std.data.shape:
        raise LossError(
            f"shape mismatch: x {x.data.shape}, mean {mean.data.shape}, "
            f"log_std {log_std.data.shape}")
    s = ad.clip_min(log_std, LOG_STD_FLOOR)
    diff = ad.sub(x, mean)
    quad = ad.mul(ad.square(diff), ad.vexp(ad.mul(s, -2.0)))
    term = ad.add(ad.add(s, _HALF_LOG_2PI), ad.mul(quad, 0.5))
    per_frame = ad.vsum(term, axis=_dims_axis(x.data.ndim))
    return ad.vmean(per_frame)


def smoothness_loss(means):
    """Mean squared L2 norm of the second difference of the means.

    Frames are the last axis. Fewer than 3 frames carries no curvature
    information: returns 0 with a warning.
    """
    means = _as_var(means, "means")
    t_axis = means.data.ndim - 1
    n = means.data.shape[t_axis]
    if n < 3:
        warnings.warn("smoothness_loss needs >= 3 frames; returning 0",
                      stacklevel=2)
        return ad.constant(np.array(0.0))
    prev = ad.narrow(means, t_axis, 0, n - 2)
    mid = ad.narrow(means, t_axis, 1, n - 2)
    nxt = ad.narrow(means, t_axis, 2, n - 2)
    second = ad.sub(ad.add(prev, nxt), ad.mul(mid, 2.0))
    per_frame = ad.vsum(ad.square(second), axis=_dims_axis(means.data.ndim))
    return ad.vmean(per_frame)


def foot_bce(labels, logits):
    """Mean binary cross entropy over both contact channels."""
    logits = _as_var(logits, "logits")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits.data.shape:
        raise LossError(
            f"labels {labels.shape} vs logits {logits.data.shape}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise LossError("contact labels must be 0 or 1")
    return ad.vmean(ad.bce_with_logits(logits, labels))


def direction_loss(dir_pred, vel_pred, dir_gt, vel_gt, active,
                   row_mask=None):
    """Control-matching loss ||d_hat - d||^2 + (v_hat - v)^2.

    Summed over the 12 direction components per frame, averaged over
    frames and batch. ``active=False`` returns a constant zero that
    records nothing on the tape. ``row_mask`` ({0,1} per batch row)
    zeroes individual sequences whose control was dropped; masked rows
    still count in the batch mean.
    """
    if not active:
        return ad.constant(np.array(0.0))
    dir_pred = _as_var(dir_pred, "dir_pred")
    vel_pred = _as_var(vel_pred, "vel_pred")
    dir_gt = _as_var(dir_gt, "dir_gt")
    vel_gt = _as_var(vel_gt, "vel_gt")
    if dir_pred.data.shape != dir_gt.data.shape:
        raise LossError(
            f"direction {dir_pred.data.shape} vs {dir_gt.data.shape}")
    if vel_pred.data.shape != vel_gt.data.shape:
        raise LossError(
            f"velocity {vel_pred.data.shape} vs {vel_gt.data.shape}")
    axis = _dims_axis(dir_pred.data.ndim)
    d_term = ad.vsum(ad.square(ad.sub(dir_pred, dir_gt)), axis=axis)
    v_term = ad.vsum(ad.square(ad.sub(vel_pred, vel_gt)), axis=axis)
    per_frame = ad.add(d_term, v_term)
    if row_mask is not None:
        mask = np.asarray(row_mask, dtype=np.float64)
        if per_frame.data.ndim != 2 or mask.shape != (per_frame.data.shape[0],):
            raise LossError("row_mask requires batched (B, ...) inputs")
        full = np.repeat(mask[:, None], per_frame.data.shape[1], axis=1)
        per_frame = ad.mul(per_frame, ad.constant(full))
    return ad.vmean(per_frame)


def combine(l_g, l_s, l_f, l_d,
            lambdas=(LAMBDA_SMOOTH, LAMBDA_FOOT, LAMBDA_DIR)):
    """Weighted total as a Var: L_G + l1*L_s + l2*L_f + l3*L_d."""
    l1, l2, l3 = lambdas
    total = ad.add(l_g, ad.mul(l_s, float(l1)))
    total = ad.add(total, ad.mul(l_f, float(l2)))
    return ad.add(total, ad.mul(l_d, float(l3)))


class LossBreakdown:
    """Scalar record of one step's loss terms; total is recomputed."""

    __slots__ = ("L_G", "L_s", "L_f", "L_d", "total")

    def __init__(self, L_G, L_s, L_f, L_d,
                 lambdas=(LAMBDA_SMOOTH, LAMBDA_FOOT, LAMBDA_DIR)):
        self.L_G = float(L_G)
        self.L_s = float(L_s)
        self.L_f = float(L_f)
        self.L_d = float(L_d)
        l1, l2, l3 = lambdas
        self.total = self.L_G + l1 * self.L_s + l2 * self.L_f + l3 * self.L_d

    def as_row(self):
        return [self.L_G, self.L_s, self.L_f, self.L_d, self.total]

    def __repr__(self):
        return (f"LossBreakdown(L_G={self.L_G:.6g}, L_s={self.L_s:.6g}, "
                f"L_f={self.L_f:.6g}, L_d={self.L_d:.6g}, "
                f"total={self.total:.6g})")
