"""Shared test utilities: kink-aware finite differences and small scenes."""

from __future__ import annotations

import numpy as np

from gridfield import mlp


def activation_signs(params, x_enc, d_enc):
    cache = {}
    mlp.forward(params, x_enc, d_enc, cache=cache)
    signs = [h > 0 for h in cache["hs"]]
    signs.append(cache["g"] > 0)
    signs.append(cache["sigma"] > 0)
    return signs


def finite_difference_check(
    params,
    loss_fn,
    n_coords: int,
    h: float = 1e-4,
    seed: int = 0,
    signs_fn=None,
):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)``; gradients must be an MlpParams
    container. Coordinates whose +/-h step flips any ReLU sign pattern are
    rejected and redrawn: the finite difference is meaningless across a
    kink, while the analytic gradient is the valid one-sided derivative.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(params)
    arrays = dict(params.arrays())
    grad_arrays = dict(grads.arrays())
    keys = list(arrays.keys())
    max_rel = 0.0
    checked = 0
    attempts = 0
    while checked < n_coords:
        attempts += 1
        if attempts > 50 * n_coords:
            raise AssertionError("could not find enough kink-free coordinates")
        key = keys[rng.integers(len(keys))]
        arr = arrays[key]
        idx = np.unravel_index(rng.integers(arr.size), arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        loss_p, _ = loss_fn(params)
        signs_p = signs_fn(params) if signs_fn else None
        arr[idx] = orig - h
        loss_m, _ = loss_fn(params)
        signs_m = signs_fn(params) if signs_fn else None
        arr[idx] = orig
        if signs_fn is not None and any(
            not np.array_equal(a, b) for a, b in zip(signs_p, signs_m)
        ):
            continue
        fd = (loss_p - loss_m) / (2.0 * h)
        an = float(grad_arrays[key][idx])
        denom = max(abs(fd), abs(an), 1e-6)
        max_rel = max(max_rel, abs(fd - an) / denom)
        checked += 1
    return max_rel
