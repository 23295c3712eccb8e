"""Order-invariant encoder for the boundary-condition point clouds.

Each problem contributes three clouds: loads ``(x, y, fx, fy)``, x-supports
``(x, y)`` and y-supports ``(x, y)``, all in unit-square coordinates. Every
cloud is mapped point by point through its own residual MLP, pooled with
min, max and mean, and the three pooled vectors are concatenated with a
one-layer embedding of the volume fraction to form the condition vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nito import autodiff as ad
from nito.errors import ConfigurationError, ParameterError

CLOUDS = ("loads", "supports_x", "supports_y")
CLOUD_DIMS = {"loads": 4, "supports_x": 2, "supports_y": 2}
SENTINEL = -1.0


@dataclass(frozen=True)
class BpomConfig:
    width: int = 64
    blocks: int = 2
    vf_width: int = 16

    @property
    def condition_width(self) -> int:
        return 3 * 3 * self.width + self.vf_width


@dataclass
class BoundaryPointClouds:
    loads: np.ndarray
    supports_x: np.ndarray
    supports_y: np.ndarray

    def __post_init__(self):
        for name in CLOUDS:
            dim = CLOUD_DIMS[name]
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, dim)
            if arr.size and not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} cloud has non-finite entries")
            if arr.size and (arr[:, :2].min() < 0.0 or arr[:, :2].max() > 1.0):
                raise ParameterError(f"{name} coordinates must lie in [0, 1]")
            setattr(self, name, arr)

    @classmethod
    def from_problem(cls, problem) -> "BoundaryPointClouds":
        return cls(*problem.point_clouds())


def prepare_cloud(points, dim: int) -> np.ndarray:
    """Canonical row order for a cloud; an empty cloud becomes one sentinel point.

    Sorting rows lexicographically makes every later reduction see the same
    operand order, so pooling is invariant to permutations bit for bit.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, dim)
    if pts.shape[0] == 0:
        return np.full((1, dim), SENTINEL)
    order = np.lexsort(pts.T[::-1])
    return pts[order]


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_bpom(cfg: BpomConfig, rng: np.random.Generator, prefix="bpom") -> dict:
    """Encoder parameters as a flat name -> Tensor mapping."""
    w = cfg.width
    params = {}

    def dense(name, n_in, n_out):
        params[f"{name}.W"] = ad.parameter(_uniform(rng, (n_in, n_out), 1.0 / math.sqrt(n_in)), f"{name}.W")
        params[f"{name}.b"] = ad.parameter(np.zeros((1, n_out)), f"{name}.b")

    for cloud in CLOUDS:
        dense(f"{prefix}.{cloud}.proj", CLOUD_DIMS[cloud], w)
        for k in range(cfg.blocks):
            dense(f"{prefix}.{cloud}.block{k}.fc1", w, w)
            dense(f"{prefix}.{cloud}.block{k}.fc2", w, w)
    dense(f"{prefix}.vf", 1, cfg.vf_width)
    return params


def _dense(x, params, name):
    return ad.linear(x, params[f"{name}.W"], params[f"{name}.b"])


def residual_block(x, params, name):
    h = ad.gelu(ad.layer_norm(_dense(x, params, f"{name}.fc1")))
    return ad.add(x, ad.gelu(ad.layer_norm(_dense(h, params, f"{name}.fc2"))))


def encode_pointcloud(cloud, params: dict, cfg: BpomConfig, name: str, prefix="bpom"):
    """Per-point features ``(N, width)``; rows never interact."""
    x = cloud if isinstance(cloud, ad.Tensor) else ad.constant(cloud)
    if x.shape[0] < 1:
        raise ParameterError(f"{name} cloud is empty")
    W = params[f"{prefix}.{name}.proj.W"]
    if x.shape[1] != W.shape[0]:
        raise ConfigurationError(f"{name} points have {x.shape[1]} features, encoder expects {W.shape[0]}")
    h = _dense(x, params, f"{prefix}.{name}.proj")
    for k in range(cfg.blocks):
        h = residual_block(h, params, f"{prefix}.{name}.block{k}")
    return h


def aggregate(features):
    """concat(min, max, mean) over points, shape ``(1, 3 * width)``."""
    return ad.concat([ad.reduce_min(features), ad.reduce_max(features), ad.reduce_mean(features)], axis=1)


def build_condition(clouds: BoundaryPointClouds, volume_fraction: float, params: dict,
                    cfg: BpomConfig = BpomConfig(), prefix="bpom"):
    """Condition vector ``(1, 9 * width + vf_width)`` for one problem."""
    if not 0.0 < float(volume_fraction) < 1.0:
        raise ParameterError(f"volume fraction must be in (0, 1), got {volume_fraction}")
    parts = []
    for name in CLOUDS:
        pts = prepare_cloud(getattr(clouds, name), CLOUD_DIMS[name])
        parts.append(aggregate(encode_pointcloud(pts, params, cfg, name, prefix)))
    parts.append(_dense(ad.constant([[float(volume_fraction)]]), params, f"{prefix}.vf"))
    return ad.concat(parts, axis=1)


def problem_condition(problem, params: dict, cfg: BpomConfig = BpomConfig(), prefix="bpom"):
    return build_condition(BoundaryPointClouds.from_problem(problem), problem.volume_fraction, params, cfg, prefix)
