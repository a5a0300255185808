"""Nonlinearities of the relative-error equation and their truncations."""

from dataclasses import dataclass

import numpy as np

from fastdiff.core.grid import Array
from fastdiff.core.operator import OperatorAssembly, column
from fastdiff.exceptions import AdmissibilityError, ConfigurationError
from fastdiff.schemas import LipschitzEstimate

EPS0_LIMIT = 0.25
CLAMP = 0.5
ETA_LIPSCHITZ = 1.875


def _smoothstep(s: Array) -> Array:
    """Quintic S with S(0)=0, S(1)=1 and vanishing first and second derivatives at both ends."""
    return s**3 * (6.0 * s**2 - 15.0 * s + 10.0)


def eta(z: Array | float) -> Array | float:
    """Even C^2 cutoff: 1 on [-1, 1], 0 outside [-2, 2], quintic in between."""
    s = np.clip(np.abs(np.asarray(z, dtype=float)) - 1.0, 0.0, 1.0)
    result = 1.0 - _smoothstep(s)
    return float(result) if result.ndim == 0 else result


def _check_eps(eps: float) -> None:
    if eps <= 0.0:
        raise ConfigurationError(f"cutoff scale eps={eps} must be positive")


def cutoff0(h: Array, eps: float) -> Array:
    """eta(h / eps) node by node."""
    _check_eps(eps)
    return np.asarray(eta(h / eps))


def cutoff1(h: Array, op: OperatorAssembly, eps: float) -> Array:
    """eta(h / eps) * eta(V grad h / eps) node by node (one derivative direction)."""
    _check_eps(eps)
    weighted_gradient = column(op.V, h) * op.grid.gradient(h)
    return np.asarray(eta(h / eps)) * np.asarray(eta(weighted_gradient / eps))


@dataclass(frozen=True)
class TruncationConfig:
    """Cutoff scale eps and the admissibility threshold eps0."""

    eps: float
    eps0: float = 0.05

    def __post_init__(self) -> None:
        _check_eps(self.eps)
        if not 0.0 < self.eps0 < EPS0_LIMIT:
            raise ConfigurationError(f"eps0={self.eps0} must lie in (0, {EPS0_LIMIT})")
        if self.eps > self.eps0:
            raise ConfigurationError(f"eps={self.eps} exceeds eps0={self.eps0}")


def _check_admissible(h: Array) -> None:
    if np.any(1.0 + h <= 0.0):
        raise AdmissibilityError("1 + h must stay positive (out of admissible range)")


def zeroth_order(h: Array, p: float) -> Array:
    """((1+h)^p - 1 - p h) / (1+h)^{p-1} - (p-1)(1 - (1+h)^{1-p}) h."""
    one = 1.0 + h
    return (one**p - 1.0 - p * h) / one ** (p - 1.0) - (p - 1.0) * (1.0 - one ** (1.0 - p)) * h


def _assemble_M(
    h: Array,
    op: OperatorAssembly,
    power_h: Array,
    eta0: Array | None = None,
    eta1: Array | None = None,
) -> Array:
    """Edge form of M: zeroth-order bracket, flux divergence and the gradient-square term.

    `power_h` feeds the (1+h) powers; differences use the raw `h`. The divergence
    and gradient-square terms add up to a * (A h) / B exactly, which ties this
    expansion to the first form a L h + (1+h)^{1-p}((1+h)^p - 1 - p h).
    """
    p = op.p
    a = 1.0 - (1.0 + power_h) ** (1.0 - p)
    bracket = zeroth_order(power_h, p)
    if eta0 is not None:
        bracket = eta0 * bracket
    weighted_a = a if eta1 is None else a * eta1

    dh = np.diff(h, axis=0)
    da = np.diff(a, axis=0)
    w = column(op.edge_weights, h)
    flux = 0.5 * (weighted_a[1:] + weighted_a[:-1]) * w * dh
    divergence = op.divergence(flux)

    edge_square = w * da * dh
    gradient_square = np.zeros_like(divergence)
    gradient_square[:-1] += 0.5 * edge_square
    gradient_square[1:] += 0.5 * edge_square
    if eta1 is not None:
        gradient_square = eta1 * gradient_square

    out = np.zeros_like(bracket)
    act = op.active
    mass = column(op.mass[act], h)
    out[act] = bracket[act] + (divergence[act] + gradient_square[act]) / mass
    return op.close(out)


def eval_M(h: Array, op: OperatorAssembly, first_form: bool = False) -> Array:
    """M(h) of the relative-error equation dh/dt + L h = M(h).

    Args:
        h: Field (or column batch) with 1 + h > 0.
        op: Assembled operator on the stationary state.
        first_form: Evaluate (1+h)^{1-p}((1+h)^p - 1 - p h) + (1 - (1+h)^{1-p}) L h instead.

    Raises:
        AdmissibilityError: If 1 + h <= 0 at some node.
    """
    op.grid.check(h)
    _check_admissible(h)
    if not first_form:
        return _assemble_M(h, op, h)
    p = op.p
    one = 1.0 + h
    a = 1.0 - one ** (1.0 - p)
    out = one ** (1.0 - p) * (one**p - 1.0 - p * h) + a * op.apply_L(h)
    return op.close(out)


def eval_M_trunc(h: Array, op: OperatorAssembly, cfg: TruncationConfig) -> Array:
    """M^eps(h): eta0 on the zeroth-order bracket, eta1 inside the flux and gradient terms.

    Powers of (1 + h) are evaluated with h clamped to [-1/2, 1/2]; the clamp only
    acts where the cutoffs vanish.
    """
    op.grid.check(h)
    eta0 = cutoff0(h, cfg.eps)
    eta1 = eta0 * np.asarray(eta(column(op.V, h) * op.grid.gradient(h) / cfg.eps))
    return _assemble_M(h, op, np.clip(h, -CLAMP, CLAMP), eta0, eta1)


def truncation_active(h: Array, op: OperatorAssembly, eps: float) -> bool:
    """True when eta0 or eta1 drops below 1 at some node."""
    return bool(np.any(cutoff1(h, op, eps) < 1.0))


def eval_N(h: Array, dhdt: Array, p: float) -> Array:
    """N(h, dh/dt) = (1+h)^p - 1 - p h + (1 - (1+h)^{p-1}) dh/dt.

    Raises:
        AdmissibilityError: If 1 + h <= 0 at some node.
    """
    _check_admissible(h)
    one = 1.0 + h
    return one**p - 1.0 - p * h + (1.0 - one ** (p - 1.0)) * dhdt


def truncated_source(z: Array, eps: float, p: float) -> Array:
    """Scalar eta(z/eps) ((1+z)^p - 1 - p z) with the clamped power."""
    clamped = np.clip(z, -CLAMP, CLAMP)
    return cutoff0(z, eps) * ((1.0 + clamped) ** p - 1.0 - p * clamped)


def truncation_lipschitz(
    rng: np.random.Generator, eps: float, p: float, pairs: int = 10_000
) -> LipschitzEstimate:
    """Sampled Lipschitz constant of z -> eta(z/eps) ((1+z)^p - 1 - p z).

    Pairs are drawn uniformly from [-3 eps, 3 eps]. The reference is the product
    rule bound Lip(eta) max|f| / eps + max|f'| over the support [-2 eps, 2 eps].
    """
    _check_eps(eps)
    z = rng.uniform(-3.0 * eps, 3.0 * eps, (2, pairs))
    distance = np.abs(z[0] - z[1])
    keep = distance > 0.0
    ratios = (
        np.abs(truncated_source(z[0], eps, p) - truncated_source(z[1], eps, p))[keep]
        / distance[keep]
    )
    support = np.linspace(-2.0 * eps, 2.0 * eps, 2001)
    source = (1.0 + support) ** p - 1.0 - p * support
    slope = p * ((1.0 + support) ** (p - 1.0) - 1.0)
    lipschitz = float(np.max(ratios))
    return LipschitzEstimate(
        name="truncated_source",
        samples=int(ratios.size),
        lipschitz=lipschitz,
        scale=eps,
        constant=lipschitz / eps,
        reference=ETA_LIPSCHITZ * float(np.max(np.abs(source))) / eps
        + float(np.max(np.abs(slope))),
    )
