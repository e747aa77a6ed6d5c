"""Forward/backward passes for the small configurable classifiers.

Parameters live in flat name->array dicts (float64 throughout) so states can
be serialized deterministically and gradient-checked against finite
differences. Conv layers use same-padding im2col; image backbones apply
global average pooling after the last conv layer. Batch-norm running
statistics are updated only when ``update_stats`` is set, which multitask
training uses to keep auxiliary batches out of the running estimates.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .config import ArchSpec, LayerSpec

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

Params = dict[str, np.ndarray]


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def layer_input_dims(arch: ArchSpec, resolution: int) -> list[tuple]:
    """Per-layer input shapes: (h, w, c) for conv, (features,) for dense."""
    dims: list[tuple] = []
    if arch.input_kind == "image":
        h = w = resolution
        c = arch.input_channels
        spatial = True
    else:
        h = w = 0
        c = arch.input_dim
        spatial = False
    for layer in arch.layers:
        if layer.kind == "conv":
            dims.append((h, w, c))
            h = conv_output_size(h, layer.kernel, layer.stride)
            w = conv_output_size(w, layer.kernel, layer.stride)
            c = layer.width
        else:
            if spatial:
                # first dense layer sees either pooled conv channels or the raw flat image
                prev_conv = any(l.kind == "conv" for l in arch.layers[: len(dims)])
                feats = c if prev_conv else h * w * c
                spatial = False
            else:
                feats = c
            dims.append((feats,))
            c = layer.width
    return dims


def init_backbone(arch: ArchSpec, resolution: int, rng: np.random.Generator) -> Params:
    params: Params = {}
    dims = layer_input_dims(arch, resolution)
    for i, (layer, in_dims) in enumerate(zip(arch.layers, dims)):
        if layer.kind == "conv":
            fan_in = in_dims[2] * layer.kernel * layer.kernel
            shape = (fan_in, layer.width)
        else:
            fan_in = in_dims[0]
            shape = (fan_in, layer.width)
        gain = 2.0 if arch.activation == "relu" else 1.0
        params[f"layer{i}.W"] = rng.standard_normal(shape) * np.sqrt(gain / fan_in)
        if layer.norm:
            # beta plays the bias role; a separate bias would be redundant
            params[f"layer{i}.gamma"] = np.ones(layer.width)
            params[f"layer{i}.beta"] = np.zeros(layer.width)
            params[f"layer{i}.rmean"] = np.zeros(layer.width)
            params[f"layer{i}.rvar"] = np.ones(layer.width)
        else:
            params[f"layer{i}.b"] = np.zeros(layer.width)
    return params


def init_head(feature_dim: int, num_classes: int, rng: np.random.Generator) -> Params:
    return {
        "W": rng.standard_normal((feature_dim, num_classes)) / np.sqrt(feature_dim),
        "b": np.zeros(num_classes),
    }


RUNNING_STAT_SUFFIXES = (".rmean", ".rvar")


def trainable_names(params: Params) -> list[str]:
    return [k for k in sorted(params) if not k.endswith(RUNNING_STAT_SUFFIXES)]


def _activation(arch: ArchSpec, z: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(arch: ArchSpec, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - a * a


def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    n, h, w, c = x.shape
    pad = kernel // 2
    ho = conv_output_size(h, kernel, stride)
    wo = conv_output_size(w, kernel, stride)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kernel * kernel * c), dtype=x.dtype)
    idx = 0
    for ki in range(kernel):
        for kj in range(kernel):
            cols[..., idx * c : (idx + 1) * c] = xp[
                :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride, :
            ]
            idx += 1
    return cols


def _col2im(
    dcols: np.ndarray, x_shape: tuple, kernel: int, stride: int
) -> np.ndarray:
    n, h, w, c = x_shape
    pad = kernel // 2
    ho, wo = dcols.shape[1], dcols.shape[2]
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    idx = 0
    for ki in range(kernel):
        for kj in range(kernel):
            dxp[:, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride, :] += dcols[
                ..., idx * c : (idx + 1) * c
            ]
            idx += 1
    return dxp[:, pad : pad + h, pad : pad + w, :]


def _batchnorm_forward(
    x: np.ndarray,
    params: Params,
    prefix: str,
    train: bool,
    update_stats: bool,
    cache: dict,
) -> np.ndarray:
    axes = tuple(range(x.ndim - 1))
    gamma = params[prefix + ".gamma"]
    beta = params[prefix + ".beta"]
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            params[prefix + ".rmean"] = (
                BN_MOMENTUM * params[prefix + ".rmean"] + (1 - BN_MOMENTUM) * mean
            )
            params[prefix + ".rvar"] = (
                BN_MOMENTUM * params[prefix + ".rvar"] + (1 - BN_MOMENTUM) * var
            )
    else:
        mean = params[prefix + ".rmean"]
        var = params[prefix + ".rvar"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    cache["bn_xhat"] = xhat
    cache["bn_inv_std"] = inv_std
    cache["bn_train"] = train
    return gamma * xhat + beta


def _batchnorm_backward(dy: np.ndarray, params: Params, prefix: str, cache: dict) -> tuple:
    axes = tuple(range(dy.ndim - 1))
    xhat = cache["bn_xhat"]
    inv_std = cache["bn_inv_std"]
    gamma = params[prefix + ".gamma"]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    if cache["bn_train"]:
        count = dy.size // dy.shape[-1]
        dx = (
            inv_std
            / count
            * (
                count * dxhat
                - dxhat.sum(axis=axes)
                - xhat * (dxhat * xhat).sum(axis=axes)
            )
        )
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


def forward_features(
    arch: ArchSpec,
    params: Params,
    x: np.ndarray,
    *,
    train: bool = False,
    update_stats: bool = False,
    want_cache: bool = False,
) -> tuple[np.ndarray, list[dict] | None]:
    """Run the backbone; returns (penultimate features, caches for backward)."""
    caches: list[dict] = [] if want_cache else None
    a = np.asarray(x, dtype=np.float64)
    spatial = arch.input_kind == "image"
    for i, layer in enumerate(arch.layers):
        cache: dict[str, Any] = {}
        if layer.kind == "dense" and spatial:
            prev_conv = any(l.kind == "conv" for l in arch.layers[:i])
            if prev_conv:
                cache["pool_shape"] = a.shape
                a = a.mean(axis=(1, 2))
            else:
                cache["flat_shape"] = a.shape
                a = a.reshape(a.shape[0], -1)
            spatial = False
        w = params[f"layer{i}.W"]
        if layer.kind == "conv":
            cols = _im2col(a, layer.kernel, layer.stride)
            cache["cols"] = cols
            cache["x_shape"] = a.shape
            z = cols @ w
        else:
            cache["x"] = a
            z = a @ w
        if not layer.norm:
            z = z + params[f"layer{i}.b"]
        if layer.norm:
            z = _batchnorm_forward(z, params, f"layer{i}", train, update_stats, cache)
        out = _activation(arch, z)
        cache["z"] = z
        cache["a"] = out
        a = out
        if caches is not None:
            caches.append(cache)
    if spatial:
        # conv-only backbone: pool to feature vector
        if caches is not None:
            caches.append({"final_pool_shape": a.shape})
        a = a.mean(axis=(1, 2))
    return a, caches


def head_logits(head: Params, features: np.ndarray) -> np.ndarray:
    return features @ head["W"] + head["b"]


def forward(
    arch: ArchSpec,
    params: Params,
    head: Params,
    x: np.ndarray,
    *,
    train: bool = False,
    update_stats: bool = False,
    want_cache: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[dict] | None]:
    """Full pass; returns (logits, features, backbone caches)."""
    features, caches = forward_features(
        arch, params, x, train=train, update_stats=update_stats, want_cache=want_cache
    )
    return head_logits(head, features), features, caches


def backward(
    arch: ArchSpec,
    params: Params,
    head: Params,
    caches: list[dict],
    features: np.ndarray,
    dlogits: np.ndarray,
) -> tuple[Params, Params]:
    """Gradients of a scalar loss wrt backbone and head parameters."""
    head_grads = {
        "W": features.T @ dlogits,
        "b": dlogits.sum(axis=0),
    }
    grads: Params = {}
    da = dlogits @ head["W"].T

    idx = len(arch.layers) - 1
    cache_idx = len(caches) - 1
    if "final_pool_shape" in caches[cache_idx]:
        n, h, w, c = caches[cache_idx]["final_pool_shape"]
        da = np.broadcast_to(da[:, None, None, :], (n, h, w, c)) / (h * w)
        cache_idx -= 1

    while idx >= 0:
        layer = arch.layers[idx]
        cache = caches[cache_idx]
        dz = da * _activation_grad(arch, cache["z"], cache["a"])
        if layer.norm:
            dz, dgamma, dbeta = _batchnorm_backward(dz, params, f"layer{idx}", cache)
            grads[f"layer{idx}.gamma"] = dgamma
            grads[f"layer{idx}.beta"] = dbeta
        w = params[f"layer{idx}.W"]
        if layer.kind == "conv":
            cols = cache["cols"]
            cout = dz.shape[-1]
            grads[f"layer{idx}.W"] = cols.reshape(-1, cols.shape[-1]).T @ dz.reshape(-1, cout)
            if not layer.norm:
                grads[f"layer{idx}.b"] = dz.sum(axis=(0, 1, 2))
            dcols = dz @ w.T
            da = _col2im(dcols, cache["x_shape"], layer.kernel, layer.stride)
        else:
            xin = cache["x"]
            grads[f"layer{idx}.W"] = xin.T @ dz
            if not layer.norm:
                grads[f"layer{idx}.b"] = dz.sum(axis=0)
            da = dz @ w.T
            if "pool_shape" in cache:
                n, h, w_, c = cache["pool_shape"]
                da = np.broadcast_to(da[:, None, None, :], (n, h, w_, c)) / (h * w_)
            elif "flat_shape" in cache:
                da = da.reshape(cache["flat_shape"])
        idx -= 1
        cache_idx -= 1
    return grads, head_grads
