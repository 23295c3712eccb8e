"""Conditional implicit density field.

Coordinates pass through a frozen random Fourier mapping, then a stack of
sine layers whose layer-normalized pre-activations are scaled and shifted by
per-layer heads of the condition vector, and finally a linear sigmoid head::

    h_{i+1} = sin(LN(W_i h_i + b_i) * alpha_i(C) + beta_i(C))
    rho(x | C) = sigmoid(w . h_L + b)
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from nito import autodiff as ad
from nito import bpom
from nito.errors import ConfigurationError, ParameterError


@dataclass(frozen=True)
class ArchConfig:
    fourier_features: int = 128
    # 10 trained too slowly to halve the loss in 50 desk-scale epochs; 1 does
    fourier_scale: float = 1.0
    field_layers: int = 4
    field_width: int = 128
    pc_width: int = 64
    pc_blocks: int = 2
    vf_width: int = 16
    first_omega: float = 30.0
    seed: int = 0

    def __post_init__(self):
        for name in ("fourier_features", "field_layers", "field_width", "pc_width", "vf_width"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.pc_blocks < 0:
            raise ConfigurationError("pc_blocks must be non-negative")

    @property
    def bpom(self) -> bpom.BpomConfig:
        return bpom.BpomConfig(self.pc_width, self.pc_blocks, self.vf_width)

    @property
    def condition_width(self) -> int:
        return self.bpom.condition_width

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown architecture fields {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class FourierBasis:
    B: np.ndarray  # (m, 2), frozen after creation

    @classmethod
    def sample(cls, m: int, sigma: float, rng: np.random.Generator) -> "FourierBasis":
        B = rng.normal(0.0, sigma, size=(m, 2))
        B.setflags(write=False)
        return cls(B)

    @property
    def m(self) -> int:
        return self.B.shape[0]


def fourier_features(coords, basis: FourierBasis) -> np.ndarray:
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ConfigurationError(f"coordinates must have shape (P, 2), got {x.shape}")
    proj = 2.0 * np.pi * (x @ basis.B.T)
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=1)


def init_field(arch: ArchConfig, rng: np.random.Generator, prefix="field") -> dict:
    w = arch.field_width
    cw = arch.condition_width
    params = {}
    n_in = 2 * arch.fourier_features
    for k in range(arch.field_layers):
        bound = arch.first_omega / n_in if k == 0 else math.sqrt(6.0 / n_in)
        name = f"{prefix}.layer{k}"
        params[f"{name}.W"] = ad.parameter(rng.uniform(-bound, bound, (n_in, w)), f"{name}.W")
        params[f"{name}.b"] = ad.parameter(np.zeros((1, w)), f"{name}.b")
        # modulation starts as the identity: alpha = 1, beta = 0
        params[f"{name}.alpha.W"] = ad.parameter(np.zeros((cw, w)), f"{name}.alpha.W")
        params[f"{name}.alpha.b"] = ad.parameter(np.ones((1, w)), f"{name}.alpha.b")
        params[f"{name}.beta.W"] = ad.parameter(np.zeros((cw, w)), f"{name}.beta.W")
        params[f"{name}.beta.b"] = ad.parameter(np.zeros((1, w)), f"{name}.beta.b")
        n_in = w
    bound = 1.0 / math.sqrt(n_in)
    params[f"{prefix}.head.W"] = ad.parameter(rng.uniform(-bound, bound, (n_in, 1)), f"{prefix}.head.W")
    params[f"{prefix}.head.b"] = ad.parameter(np.zeros((1, 1)), f"{prefix}.head.b")
    return params


def film_siren_layer(h, alpha, beta, W, b):
    """sin(LN(W h + b) * alpha + beta); alpha and beta already have one row per point or one row total."""
    if h.shape[1] != W.shape[0]:
        raise ConfigurationError(f"layer input width {h.shape[1]} does not match weights {W.shape}")
    z = ad.layer_norm(ad.linear(h, W, b))
    if alpha.shape[1] != z.shape[1] or beta.shape[1] != z.shape[1]:
        raise ConfigurationError("modulation width does not match layer width")
    return ad.sin(ad.add(ad.mul(z, alpha), beta))


def field_forward(coords, conditions, owner, params: dict, basis: FourierBasis, arch: ArchConfig,
                  prefix="field"):
    """Probabilities ``(P, 1)`` at ``coords`` for points owned by condition rows.

    ``conditions`` is a ``(B, condition_width)`` tensor and ``owner[p]`` the
    row of the condition that point ``p`` belongs to.
    """
    conditions = ad.constant(conditions)
    if conditions.shape[1] != arch.condition_width:
        raise ConfigurationError(
            f"condition width {conditions.shape[1]} does not match architecture ({arch.condition_width})")
    owner = np.asarray(owner, dtype=np.int64)
    h = ad.constant(fourier_features(coords, basis))
    if owner.shape != (h.shape[0],):
        raise ConfigurationError("owner must give one condition row per point")
    single = conditions.shape[0] == 1
    for k in range(arch.field_layers):
        name = f"{prefix}.layer{k}"
        alpha = ad.linear(conditions, params[f"{name}.alpha.W"], params[f"{name}.alpha.b"])
        beta = ad.linear(conditions, params[f"{name}.beta.W"], params[f"{name}.beta.b"])
        if not single:
            alpha, beta = ad.take_rows(alpha, owner), ad.take_rows(beta, owner)
        h = film_siren_layer(h, alpha, beta, params[f"{name}.W"], params[f"{name}.b"])
    return ad.sigmoid(ad.linear(h, params[f"{prefix}.head.W"], params[f"{prefix}.head.b"]))


def bce_objective(preds, targets):
    return ad.binary_cross_entropy(preds, np.asarray(targets, dtype=np.float64).reshape(preds.shape))


class NeuralField:
    """Encoder plus field parameters and the frozen Fourier basis."""

    def __init__(self, arch: ArchConfig = ArchConfig(), params: dict | None = None,
                 basis: FourierBasis | None = None):
        self.arch = arch
        if params is None or basis is None:
            rng = np.random.default_rng(arch.seed)
            basis = FourierBasis.sample(arch.fourier_features, arch.fourier_scale, rng)
            params = {**bpom.init_bpom(arch.bpom, rng), **init_field(arch, rng)}
        self.basis = basis
        self.params = params
        self._check_shapes()

    def _check_shapes(self):
        expected = {**bpom.init_bpom(self.arch.bpom, np.random.default_rng(0)),
                    **init_field(self.arch, np.random.default_rng(0))}
        missing = set(expected) - set(self.params)
        extra = set(self.params) - set(expected)
        if missing or extra:
            raise ConfigurationError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in expected.items():
            if self.params[name].shape != t.shape:
                raise ConfigurationError(f"parameter '{name}' has shape {self.params[name].shape}, expected {t.shape}")
        if self.basis.B.shape != (self.arch.fourier_features, 2):
            raise ConfigurationError(f"Fourier basis has shape {self.basis.B.shape}")

    @property
    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def condition(self, problem):
        return bpom.problem_condition(problem, self.params, self.arch.bpom)

    def forward(self, coords, conditions, owner):
        return field_forward(coords, conditions, owner, self.params, self.basis, self.arch)

    def predict(self, problem, coords, chunk: int = 4096) -> np.ndarray:
        """Field values at ``coords`` for one problem, evaluated in point chunks."""
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        if coords.shape[0] < 1:
            raise ParameterError("no query points")
        c = self.condition(problem)
        out = np.empty(coords.shape[0])
        for lo in range(0, coords.shape[0], chunk):
            part = coords[lo:lo + chunk]
            out[lo:lo + chunk] = self.forward(part, c, np.zeros(len(part), dtype=np.int64)).value[:, 0]
        return out
