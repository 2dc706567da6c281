"""Numeric layer primitives: affine maps, normalization, activations, gating,
dropout, seeded initialization, and a finite-difference gradient oracle.

All operations are pure functions over torch tensors. Randomness is always
drawn from an explicit generator passed by the caller; nothing touches global
RNG state.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, DimensionError, OracleError

LAYER_NORM_EPS = 1e-5


def check_vector(x, length=None, name="vector"):
    """Validate a 1-D tensor/array: rank, optional length, finiteness."""
    if x.ndim != 1:
        raise DimensionError(f"{name}: expected 1-D, got shape {tuple(x.shape)}")
    if length is not None and x.shape[0] != length:
        raise DimensionError(f"{name}: expected length {length}, got {x.shape[0]}")
    if isinstance(x, torch.Tensor):
        finite = bool(torch.isfinite(x).all())
    else:
        finite = bool(np.isfinite(x).all())
    if not finite:
        raise DimensionError(f"{name}: contains non-finite entries")
    return x


def check_matrix(x, rows=None, cols=None, name="matrix"):
    """Validate a 2-D tensor/array: rank, optional shape, finiteness."""
    if x.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D, got shape {tuple(x.shape)}")
    r, c = x.shape
    if rows is not None and r != rows:
        raise DimensionError(f"{name}: expected {rows} rows, got {r}")
    if cols is not None and c != cols:
        raise DimensionError(f"{name}: expected {cols} cols, got {c}")
    n = x.numel() if isinstance(x, torch.Tensor) else x.size
    if r * c != n:
        raise DimensionError(f"{name}: rows*cols != element count")
    if isinstance(x, torch.Tensor):
        finite = bool(torch.isfinite(x).all())
    else:
        finite = bool(np.isfinite(x).all())
    if not finite:
        raise DimensionError(f"{name}: contains non-finite entries")
    return x


@dataclass
class LinearParams:
    """Weights of one affine map y = Wx + b, with weight stored (out, in)."""

    weight: torch.Tensor
    bias: torch.Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("LinearParams: weight must be 2-D, bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"LinearParams: weight out-dim {self.weight.shape[0]} != "
                f"bias length {self.bias.shape[0]}"
            )

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


def init_linear(out_dim, in_dim, generator, dtype=torch.float32):
    """Affine parameters with weight ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), zero bias."""
    bound = (1.0 / in_dim) ** 0.5
    weight = uniform_init((out_dim, in_dim), bound, generator, dtype)
    bias = torch.zeros(out_dim, dtype=dtype)
    return LinearParams(weight, bias)


def uniform_init(shape, bound, generator, dtype=torch.float32):
    return (torch.rand(shape, generator=generator, dtype=dtype) * 2.0 - 1.0) * bound


def linear(x, p):
    """Affine map Wx + b applied over the last axis of x."""
    if x.shape[-1] != p.in_dim:
        raise DimensionError(
            f"linear: input dim {x.shape[-1]} != weight in-dim {p.in_dim}"
        )
    return x @ p.weight.T + p.bias


def layer_norm(x, gain, offset, eps=LAYER_NORM_EPS):
    """Standard layer normalization over the last axis.

    Centers and scales by the biased standard deviation with ``eps`` added to
    the variance, then applies elementwise gain and offset.
    """
    if x.shape[-1] < 2:
        raise DimensionError("layer_norm: needs at least 2 features")
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + offset


def elu(x):
    return torch.where(x > 0, x, torch.expm1(torch.clamp(x, max=0.0)))


def softplus(x):
    # log(1 + e^x), linear for large x to avoid overflow
    return torch.where(x > 20.0, x, torch.log1p(torch.exp(torch.clamp(x, max=20.0))))


def mish(x):
    """Self-gated activation x * tanh(softplus(x))."""
    return x * torch.tanh(softplus(x))


def sigmoid(x):
    return torch.sigmoid(x)


def tanh(x):
    return torch.tanh(x)


def softmax(x, dim=-1):
    """Max-shifted softmax; positive entries summing to 1 along ``dim``."""
    if x.numel() == 0 or x.shape[dim] == 0:
        raise DimensionError("softmax: empty input")
    shifted = x - x.max(dim=dim, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def glu(x, p_value, p_gate):
    """Gating linear unit: (W_v x + b_v) * sigmoid(W_g x + b_g)."""
    if p_value.out_dim != p_gate.out_dim:
        raise DimensionError(
            f"glu: value out-dim {p_value.out_dim} != gate out-dim {p_gate.out_dim}"
        )
    return linear(x, p_value) * torch.sigmoid(linear(x, p_gate))


def dropout(x, rate, training, generator=None):
    """Inverted dropout; exact identity at inference or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


def finite_diff_grad(f, theta, eps=1e-5):
    """Central-difference gradient of a scalar function.

    Args:
        f: callable mapping a 1-D float64 numpy array to a float.
        theta: 1-D numpy array, the point of evaluation.
        eps: perturbation size, > 0.

    Returns:
        1-D float64 numpy array of the same length as theta.
    """
    if eps <= 0:
        raise ConfigError(f"finite_diff_grad: eps must be > 0, got {eps}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise DimensionError("finite_diff_grad: theta must be 1-D")
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = eps
        hi = float(f(theta + step))
        lo = float(f(theta - step))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError(f"finite_diff_grad: non-finite f at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


@dataclass
class GradCheckReport:
    """Outcome of one analytic-vs-finite-difference comparison.

    max_rel_error is max|analytic - numeric| scaled by the largest gradient
    magnitude seen in either vector (floored at 1), so near-zero gradients do
    not blow up the ratio.
    """

    op: str
    max_rel_error: float
    perturbation: float

    def __post_init__(self):
        if self.perturbation <= 0:
            raise ConfigError("GradCheckReport: perturbation must be > 0")
        if self.max_rel_error < 0:
            raise ConfigError("GradCheckReport: error must be >= 0")


def grad_check(op_name, f, theta, analytic_grad, eps=1e-5):
    """Compare an analytic gradient against finite_diff_grad.

    Args:
        op_name: label for the report.
        f: scalar function of a 1-D numpy array.
        theta: evaluation point (1-D numpy array).
        analytic_grad: gradient to verify, same shape as theta.
        eps: central-difference step.
    """
    numeric = finite_diff_grad(f, theta, eps)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise DimensionError("grad_check: gradient shape mismatch")
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1.0)
    err = float(np.abs(analytic - numeric).max(initial=0.0) / scale)
    return GradCheckReport(op=op_name, max_rel_error=err, perturbation=eps)
