"""GAN objectives: WGAN-GP for the progressive pair, log-loss for the baseline."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, backward, clip, log, square, sqrt, tmean, tsum


class HeadMismatchError(ValueError):
    """The loss requires the other discriminator head."""


def _require_head(d, expected: str) -> None:
    head = getattr(d, "head", "wgan-scalar")
    if head != expected:
        raise HeadMismatchError(
            f"this loss is defined for the {expected!r} head, discriminator has {head!r}"
        )


def _as_constant(x) -> Tensor:
    if isinstance(x, Tensor):
        return Tensor(x.data) if x.requires_grad else x
    return Tensor(np.asarray(x))


def gradient_penalty(d, real, fake, mix_seed=None, u=None, parts=None) -> Tensor:
    """Mean squared deviation of the per-sample input-gradient norm from 1.

    Samples are mixed as ``u * real + (1 - u) * fake`` with u ~ U(0, 1)
    drawn from ``mix_seed`` (or supplied directly as ``u``). The result is
    a graph node that can be differentiated w.r.t. the discriminator's
    parameters.
    """
    _require_head(d, "wgan-scalar")
    real = _as_constant(real)
    fake = _as_constant(fake)
    if real.shape != fake.shape:
        raise ValueError(f"batch shapes differ: {real.shape} vs {fake.shape}")
    n = real.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if u is None:
        rng = np.random.default_rng(mix_seed)
        u = rng.random((n,) + (1,) * (real.ndim - 1), dtype=np.float64)
    u = np.asarray(u, dtype=real.data.dtype).reshape((n,) + (1,) * (real.ndim - 1))

    mixed = Tensor(u * real.data + (1.0 - u) * fake.data, requires_grad=True, name="mixed")
    scores = d(mixed)
    if scores.data.size != n:
        raise ValueError(f"discriminator must emit one score per sample, got {scores.shape}")
    (grad_in,) = backward(tsum(scores), [mixed], create_graph=True)
    axes = tuple(range(1, grad_in.ndim))
    norms = sqrt(tsum(square(grad_in), axis=axes))
    penalty = tmean(square(norms - 1.0))
    if parts is not None:
        parts["gp"] = penalty.item()
    return penalty


def d_loss_wgan_gp(
    d,
    real,
    fake,
    gp_lambda: float = 10.0,
    drift_epsilon: float = 0.001,
    mix_seed=None,
    u=None,
    parts=None,
) -> Tensor:
    """E[D(fake)] - E[D(real)] + lambda * penalty + eps * E[D(real)^2]."""
    _require_head(d, "wgan-scalar")
    real_c = _as_constant(real)
    fake_c = _as_constant(fake)
    score_real = d(real_c)
    score_fake = d(fake_c)
    loss = tmean(score_fake) - tmean(score_real)
    if gp_lambda:
        loss = loss + gp_lambda * gradient_penalty(d, real_c, fake_c, mix_seed, u, parts)
    elif parts is not None:
        parts["gp"] = 0.0
    if drift_epsilon:
        loss = loss + drift_epsilon * tmean(square(score_real))
    if parts is not None:
        parts["wasserstein"] = float(score_fake.data.mean() - score_real.data.mean())
    return loss


def g_loss_wgan(d, fake) -> Tensor:
    """-E[D(fake)]; fake must keep its graph so the generator gets gradients."""
    _require_head(d, "wgan-scalar")
    fake_t = fake if isinstance(fake, Tensor) else Tensor(np.asarray(fake))
    if fake_t.shape[0] == 0:
        raise ValueError("empty batch")
    return -tmean(d(fake_t))


def dcgan_losses(d, real, fake, clamp: float = 1e-12):
    """Minimax log losses for a sigmoid-head discriminator.

    Returns ``(d_loss, g_loss)``; logs are clamped at ``clamp`` so a
    saturated discriminator yields large finite values, never -inf.
    """
    _require_head(d, "sigmoid")
    real_c = _as_constant(real)
    fake_t = fake if isinstance(fake, Tensor) else Tensor(np.asarray(fake))
    if real_c.shape[0] == 0 or fake_t.shape[0] == 0:
        raise ValueError("empty batch")

    def safe_log(t):
        return log(clip(t, clamp, 1.0))

    p_real = d(real_c)
    p_fake = d(fake_t)
    d_loss = -tmean(safe_log(p_real)) - tmean(safe_log(1.0 - p_fake))
    g_loss = -tmean(safe_log(p_fake))
    return d_loss, g_loss
