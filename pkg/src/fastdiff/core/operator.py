"""The weighted linearized operator L h = -V^{-1-p} div(V^2 grad h) - (p-1) h.

The operator is assembled in weak form: <L h, g>_{p+1} = A[h, g] - (p-1) B[h, g]
with a two-point flux stiffness A and the diagonal mass B = q mu V^{p+1}.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
import structlog
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, svd

from fastdiff.core.grid import Array, Grid
from fastdiff.core.stationary import StationaryState
from fastdiff.exceptions import ConfigurationError, ConvergenceError, DegenerateGapError
from fastdiff.schemas import GapParametersReport

logger = structlog.get_logger()

GAP_THRESHOLD = 1e-6
TAIL_WARNING = 1e-8
CENTER_LEAK = 1e-10


def column(vector: Array, like: Array) -> Array:
    """Reshape a per-node (or per-edge, per-mode) vector to broadcast against `like`."""
    return vector.reshape(vector.shape + (1,) * (np.ndim(like) - 1))


@dataclass(frozen=True, eq=False)
class OperatorAssembly:
    """Stiffness and mass forms of L on a solved stationary state."""

    state: StationaryState
    edge_weights: Array
    mass: Array
    active: NDArray[np.bool_]
    closure_index: NDArray[np.intp]

    @property
    def grid(self) -> Grid:
        return self.state.grid

    @property
    def p(self) -> float:
        return self.state.p

    @property
    def shift(self) -> float:
        """The constant p - 1 subtracted from the divergence part."""
        return self.state.p - 1.0

    @property
    def V(self) -> Array:
        return self.state.V

    def close(self, h: Array) -> Array:
        """Fill inactive nodes with the value of the nearest active node."""
        return h[self.closure_index]

    def edge_flux(self, h: Array, coefficient: Array | None = None) -> Array:
        """F_{i+1/2} = w_{i+1/2} c_{i+1/2} (h_{i+1} - h_i)."""
        flux = column(self.edge_weights, h) * np.diff(h, axis=0)
        return flux if coefficient is None else coefficient * flux

    def divergence(self, flux: Array) -> Array:
        """Row-wise -(F_{i+1/2} - F_{i-1/2})."""
        out = np.zeros((flux.shape[0] + 1,) + flux.shape[1:])
        out[:-1] -= flux
        out[1:] += flux
        return out

    def stiffness_apply(self, h: Array) -> Array:
        """A h (rows of the two-point flux scheme, no boundary rows)."""
        self.grid.check(h)
        return self.divergence(self.edge_flux(h))

    def stiffness_form(self, u: Array, v: Array) -> float:
        """A[u, v] = sum_e w_e (u_{i+1} - u_i)(v_{i+1} - v_i); symmetric bit for bit."""
        return float(self.edge_weights @ (np.diff(u) * np.diff(v)))

    def mass_form(self, u: Array, v: Array) -> float:
        """B[u, v] = <u, v>_{p+1}."""
        return float(self.mass @ (u * v))

    @cached_property
    def stiffness_matrix(self) -> Array:
        """Dense symmetric A."""
        n = self.grid.n
        A = np.zeros((n, n))
        idx = np.arange(n - 1)
        A[idx, idx + 1] = -self.edge_weights
        A[idx + 1, idx] = -self.edge_weights
        A[idx, idx] += self.edge_weights
        A[idx + 1, idx + 1] += self.edge_weights
        return A

    def apply_L(self, h: Array) -> Array:
        """L h on active nodes, natural closure on the others."""
        out = np.zeros_like(h, dtype=float)
        act = self.active
        out[act] = self.stiffness_apply(h)[act] / column(self.mass[act], h) - self.shift * h[act]
        return self.close(out)

    def norm(self, h: Array) -> Array | float:
        """||h||_{L^2_{p+1}} (column-wise for 2D fields)."""
        result = np.sqrt(self.mass @ (h * h))
        return float(result) if np.ndim(result) == 0 else result


def assemble(state: StationaryState) -> OperatorAssembly:
    """Assemble A and B on a solved stationary state.

    Midpoint values of V^2 use the geometric mean V_i V_{i+1}. Edges touching a
    node without mass (boundary nodes, the ball center) carry no flux, which is
    the weighted-Neumann closure of the degenerate operator.
    """
    if not np.isfinite(state.residual) or not np.all(np.isfinite(state.V)):
        raise ConfigurationError("stationary state is not solved")
    grid = state.grid
    V = state.V
    mass = grid.measure * np.abs(V) ** (state.p + 1.0)
    active = mass > 0.0
    idx = np.flatnonzero(active)
    if idx.size < 2 or idx[-1] - idx[0] + 1 != idx.size:
        raise ConfigurationError("stationary state must be positive on a contiguous interior")
    edge_weights = grid.mu_mid * V[:-1] * V[1:] / grid.dx
    edge_weights = np.where(active[:-1] & active[1:], edge_weights, 0.0)
    closure_index = np.clip(np.arange(grid.n), idx[0], idx[-1])
    return OperatorAssembly(
        state=state,
        edge_weights=edge_weights,
        mass=mass,
        active=active,
        closure_index=closure_index,
    )


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Leading eigenpairs of L, B-orthonormal."""

    assembly: OperatorAssembly
    eigenvalues: Array
    eigenfields: Array
    nu_max: float
    merge_tol: float = 1e-9

    @property
    def k_max(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def complete(self) -> bool:
        """True when the retained modes span every active degree of freedom."""
        return self.k_max == int(np.count_nonzero(self.assembly.active))

    def coefficients(self, h: Array) -> Array:
        """<h, phi_k>_{p+1} for k = 1..k_max."""
        return self.eigenfields.T @ (column(self.assembly.mass, h) * h)

    def synthesize(self, coefficients: Array) -> Array:
        return self.eigenfields @ coefficients

    def tail(self, h: Array) -> Array:
        """Part of h not resolved by the retained modes."""
        return h - self.synthesize(self.coefficients(h))

    def norm(self, h: Array) -> Array | float:
        return self.assembly.norm(h)

    def check_cut(self, K: int) -> None:
        if not 1 <= K < self.k_max:
            raise ConfigurationError(f"cut index K={K} outside [1, {self.k_max - 1}]")

    def center(self, K: int, coordinates: Array) -> Array:
        """Field sum_{k<=K} c_k phi_k from center coordinates."""
        return self.eigenfields[:, :K] @ coordinates

    def center_coordinates(self, K: int, h: Array) -> Array:
        return self.eigenfields[:, :K].T @ (column(self.assembly.mass, h) * h)

    def project(self, K: int, h: Array) -> tuple[Array, Array]:
        """(P_c h, P_s h) for the cut after the K-th eigenvalue."""
        self.check_cut(K)
        h_c = self.center(K, self.center_coordinates(K, h))
        return h_c, h - h_c

    def trinorm(self, K: int, h: Array) -> Array | float:
        """max(||P_c h||, ||P_s h||) in L^2_{p+1}."""
        h_c, h_s = self.project(K, h)
        result = np.maximum(self.norm(h_c), self.norm(h_s))
        return float(result) if np.ndim(result) == 0 else result

    def semigroup(self, t: float, h: Array) -> Array:
        """e^{-L t} h through the retained modes."""
        if t < 0.0:
            raise ConfigurationError(f"semigroup time t={t} must be non-negative")
        a = self.coefficients(h)
        if not self.complete:
            leak = np.max(np.atleast_1d(self.norm(h - self.synthesize(a))))
            if leak > TAIL_WARNING:
                logger.warning("semigroup_tail_unresolved", tail_norm=float(leak))
        return self.synthesize(column(np.exp(-self.eigenvalues * t), a) * a)

    def invert_center(self, K: int, f: Array) -> Array:
        """L_c^{-1} f = sum_{k<=K} e^{lambda_k} <f, phi_k> phi_k for f in E_c."""
        h_c, h_s = self.project(K, f)
        leak = np.max(np.atleast_1d(self.norm(h_s)))
        scale = max(1.0, float(np.max(np.atleast_1d(self.norm(f)))))
        if leak > CENTER_LEAK * scale:
            raise ConfigurationError(
                f"invert_center needs a field in E_c (stable part {leak:.3e})"
            )
        return self.center_inverse(K, f)

    def center_inverse(self, K: int, f: Array) -> Array:
        """L_c^{-1} P_c f without the membership check."""
        a = self.center_coordinates(K, f)
        return self.center(K, column(np.exp(self.eigenvalues[:K]), a) * a)

    def levels(self) -> tuple[Array, NDArray[np.intp]]:
        """Distinct eigenvalue levels and their multiplicities."""
        values: list[float] = []
        counts: list[int] = []
        for value in self.eigenvalues:
            if values and abs(value - values[-1]) <= self.merge_tol * max(1.0, abs(value)):
                counts[-1] += 1
            else:
                values.append(float(value))
                counts.append(1)
        return np.asarray(values), np.asarray(counts, dtype=np.intp)

    def pair_residuals(self) -> Array:
        """||B^{-1/2}(A phi - nu B phi)|| / max(1, nu) for each retained pair."""
        asm = self.assembly
        act = asm.active
        nu = self.eigenvalues + asm.shift
        A_phi = asm.stiffness_apply(self.eigenfields)[act]
        B_phi = asm.mass[act, None] * self.eigenfields[act]
        scaled = (A_phi - nu * B_phi) / np.sqrt(asm.mass[act, None])
        return np.linalg.norm(scaled, axis=0) / np.maximum(1.0, np.abs(nu))

    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        """Spectrum (k, lambda_k) and eigenfield (x, phi_1, ...) tables."""
        spectrum = pd.DataFrame(
            {"k": np.arange(1, self.k_max + 1), "lambda_k": self.eigenvalues}
        )
        fields = pd.DataFrame(
            self.eigenfields, columns=[f"phi_{k}" for k in range(1, self.k_max + 1)]
        )
        fields.insert(0, "x", self.assembly.grid.x)
        return spectrum, fields


def eigen(assembly: OperatorAssembly, k_max: int) -> SpectralDecomposition:
    """Leading eigenpairs of A phi = nu B phi on the nodes with positive mass.

    With A = G^T W G (edge differences G, flux weights W), the pairs follow
    from the SVD of W^{1/2} G B^{-1/2}; its null vector is the constant field,
    which is inserted exactly so that lambda_1 = 1 - p holds to rounding.

    Raises:
        ConfigurationError: If k_max exceeds the number of active nodes.
        ConvergenceError: If the SVD does not converge.
    """
    grid = assembly.grid
    idx = np.flatnonzero(assembly.active)
    m = idx.size
    if not 1 <= k_max <= min(grid.n - 2, m):
        raise ConfigurationError(f"k_max={k_max} outside [1, {min(grid.n - 2, m)}]")

    sqrt_w = np.sqrt(assembly.edge_weights[idx[:-1]])
    inv_sqrt_b = 1.0 / np.sqrt(assembly.mass[idx])
    factor = np.zeros((m - 1, m))
    rows = np.arange(m - 1)
    factor[rows, rows] = -sqrt_w * inv_sqrt_b[:-1]
    factor[rows, rows + 1] = sqrt_w * inv_sqrt_b[1:]
    try:
        _, sigma, vt = svd(factor, full_matrices=True)
    except LinAlgError:
        try:
            _, sigma, vt = svd(factor, full_matrices=True, lapack_driver="gesvd")
        except LinAlgError as exc:
            raise ConvergenceError(f"eigensolver failed: {exc}") from exc

    nu = np.concatenate(([0.0], sigma[::-1] ** 2))[:k_max]
    vectors = vt[::-1][:k_max].T.copy()
    constant = np.sqrt(assembly.mass[idx])
    vectors[:, 0] = constant / np.linalg.norm(constant)

    fields = np.zeros((grid.n, k_max))
    fields[idx] = vectors * inv_sqrt_b[:, None]
    fields = assembly.close(fields)
    peak = np.argmax(np.abs(fields), axis=0)
    fields *= np.sign(fields[peak, np.arange(k_max)])

    eigenvalues = nu - assembly.shift
    decomposition = SpectralDecomposition(
        assembly=assembly,
        eigenvalues=eigenvalues,
        eigenfields=fields,
        nu_max=float(sigma[0] ** 2),
    )
    logger.info(
        "eigen_decomposed",
        k_max=k_max,
        lambda_1=float(eigenvalues[0]),
        lambda_2=float(eigenvalues[1]) if k_max > 1 else None,
        nu_max=decomposition.nu_max,
    )
    return decomposition


def project(decomp: SpectralDecomposition, K: int, h: Array) -> tuple[Array, Array]:
    """(P_c h, P_s h)."""
    return decomp.project(K, h)


def semigroup(decomp: SpectralDecomposition, t: float, h: Array) -> Array:
    """e^{-L t} h."""
    return decomp.semigroup(t, h)


def invert_center(decomp: SpectralDecomposition, K: int, f: Array) -> Array:
    """L_c^{-1} f for f in E_c."""
    return decomp.invert_center(K, f)


@dataclass(frozen=True)
class GapParameters:
    """Spectral cut, the Lambda-ladder and the contraction constant K_contr."""

    cut_index: int
    lambda_1: float
    lambda_cut: float
    lambda_next: float
    lambda_plus: float
    lambda_minus: float
    eps_gap: float
    target_kcontr: float

    @property
    def big_lambda_plus(self) -> float:
        return float(np.exp(-self.lambda_plus))

    @property
    def big_lambda_max(self) -> float:
        return float(np.exp(-self.lambda_1))

    @property
    def big_lambda_c(self) -> float:
        return float(np.exp(-self.lambda_cut))

    @property
    def big_lambda_minus(self) -> float:
        return float(np.exp(-self.lambda_minus))

    @property
    def big_lambda_s(self) -> float:
        return float(np.exp(-self.lambda_next))

    def ratios(self, eps_gap: float | None = None) -> tuple[float, float, float]:
        """The three affine ratios bounding the sequence-map contractions."""
        e = self.eps_gap if eps_gap is None else eps_gap
        return (
            (self.big_lambda_max + e) / self.big_lambda_plus,
            (self.big_lambda_s + e) / self.big_lambda_minus,
            (self.big_lambda_minus + e) / self.big_lambda_c,
        )

    @property
    def k_contr(self) -> float:
        return max(self.ratios())

    @property
    def ladder_ordered(self) -> bool:
        """Lambda_s < Lambda_- < Lambda_c <= Lambda_max < Lambda_+ (equality iff K = 1)."""
        top = (
            self.big_lambda_c == self.big_lambda_max
            if self.lambda_cut == self.lambda_1
            else self.big_lambda_c < self.big_lambda_max
        )
        return (
            self.big_lambda_s < self.big_lambda_minus < self.big_lambda_c
            and top
            and self.big_lambda_max < self.big_lambda_plus
        )

    @property
    def lip_sequence_bound(self) -> float:
        return 1.0 / (1.0 - self.k_contr)

    @property
    def lip_theta_reference(self) -> float:
        """eps_gap / ((Lambda_- - Lambda_s)(1 - K_contr))."""
        return self.eps_gap * self.lip_sequence_bound / (self.big_lambda_minus - self.big_lambda_s)

    @property
    def lip_psi_reference(self) -> float:
        """eps_gap / ((Lambda_c - Lambda_-)(1 - K_contr))."""
        return self.eps_gap * self.lip_sequence_bound / (self.big_lambda_c - self.big_lambda_minus)

    def forward_weight(self, k: Array) -> Array:
        """Weights of the bi-directed norm: Lambda_+^{-k} for k >= 0, Lambda_-^{|k|} for k < 0."""
        k = np.asarray(k, dtype=float)
        return np.where(k >= 0, np.exp(self.lambda_plus * k), np.exp(self.lambda_minus * k))

    def stable_weight(self, k: Array) -> Array:
        """Weights Lambda_-^{-k} of the forward norm."""
        return np.exp(self.lambda_minus * np.asarray(k, dtype=float))

    def report(self) -> GapParametersReport:
        return GapParametersReport(
            cut_index=self.cut_index,
            lambda_1=self.lambda_1,
            lambda_cut=self.lambda_cut,
            lambda_next=self.lambda_next,
            lambda_plus=self.lambda_plus,
            lambda_minus=self.lambda_minus,
            big_lambda_plus=self.big_lambda_plus,
            big_lambda_max=self.big_lambda_max,
            big_lambda_c=self.big_lambda_c,
            big_lambda_minus=self.big_lambda_minus,
            big_lambda_s=self.big_lambda_s,
            eps_gap=self.eps_gap,
            k_contr=self.k_contr,
            ladder_ordered=self.ladder_ordered,
            lip_sequence_bound=self.lip_sequence_bound,
            lip_theta_reference=self.lip_theta_reference,
            lip_psi_reference=self.lip_psi_reference,
        )


def gap_parameters(
    decomp: SpectralDecomposition, K: int, target_kcontr: float
) -> GapParameters:
    """Choose lambda_-, lambda_+ and the largest eps_gap with K_contr <= target.

    Raises:
        DegenerateGapError: If lambda_{K+1} - lambda_K < 1e-6.
        ConfigurationError: If the target is below the zero-eps_gap ratios.
    """
    decomp.check_cut(K)
    if not 0.0 < target_kcontr < 1.0:
        raise ConfigurationError(f"target_kcontr={target_kcontr} must lie in (0, 1)")
    lam = decomp.eigenvalues
    lambda_cut, lambda_next = float(lam[K - 1]), float(lam[K])
    if lambda_next - lambda_cut < GAP_THRESHOLD:
        multiplicity = int(np.count_nonzero(np.abs(lam - lambda_cut) < GAP_THRESHOLD))
        raise DegenerateGapError(
            f"lambda_{K} and lambda_{K + 1} coincide within {GAP_THRESHOLD}",
            multiplicity=multiplicity,
        )
    lambda_1 = float(lam[0])
    lambda_minus = 0.5 * (lambda_cut + lambda_next)
    lambda_plus = lambda_1 - 1.0
    big_plus, big_max = np.exp(-lambda_plus), np.exp(-lambda_1)
    big_c, big_minus, big_s = np.exp(-lambda_cut), np.exp(-lambda_minus), np.exp(-lambda_next)
    eps_gap = float(
        min(
            target_kcontr * big_plus - big_max,
            target_kcontr * big_minus - big_s,
            target_kcontr * big_c - big_minus,
        )
    )
    if eps_gap <= 0.0:
        raise ConfigurationError(
            f"target_kcontr={target_kcontr} is below the zero-gap contraction ratios"
        )
    gap = GapParameters(
        cut_index=K,
        lambda_1=lambda_1,
        lambda_cut=lambda_cut,
        lambda_next=lambda_next,
        lambda_plus=lambda_plus,
        lambda_minus=lambda_minus,
        eps_gap=eps_gap,
        target_kcontr=target_kcontr,
    )
    logger.info(
        "gap_parameters_chosen",
        cut_index=K,
        lambda_minus=lambda_minus,
        eps_gap=eps_gap,
        k_contr=gap.k_contr,
    )
    return gap


def random_modal_field(
    decomp: SpectralDecomposition,
    rng: np.random.Generator,
    modes: slice,
    size: int | None = None,
) -> Array:
    """Random combination of the eigenfields in `modes` with unit L^2_{p+1} norm."""
    count = len(range(*modes.indices(decomp.k_max)))
    shape = (count,) if size is None else (count, size)
    coefficients = rng.standard_normal(shape)
    coefficients /= np.linalg.norm(coefficients, axis=0)
    return decomp.eigenfields[:, modes] @ coefficients


def measure_operator_norms(
    decomp: SpectralDecomposition, K: int, rng: np.random.Generator, samples: int = 50
) -> tuple[float, float]:
    """Sampled ||L_c^{-1}|| on E_c and ||L_s|| (time one) on the retained part of E_s."""
    f = random_modal_field(decomp, rng, slice(0, K), samples)
    center = decomp.norm(decomp.invert_center(K, f)) / decomp.norm(f)
    g = random_modal_field(decomp, rng, slice(K, decomp.k_max), samples)
    stable = decomp.norm(decomp.project(K, decomp.semigroup(1.0, g))[1]) / decomp.norm(g)
    return float(np.max(center)), float(np.max(stable))
