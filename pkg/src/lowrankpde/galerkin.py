"""Spectral sine-Galerkin model of anisotropic diffusion on the unit square.

The trial space is the tensor product of ``phi_n(x) = sqrt(2) sin(n pi x)``,
``n = 1..N``, in each coordinate, so homogeneous Dirichlet conditions are
built in and coefficient matrices are N-by-N.  The weak operator

    v  |->  integral( alpha(t) grad(u) . grad(v) )

splits into a divergence part acting separately on rows and columns and a
mixed-derivative part coupling the two directions through a skew-symmetric
1D gradient matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "DiffusionModel",
    "GalerkinOperator",
    "SourceSpec",
    "TimeProfile",
    "apply_a1",
    "apply_a2",
    "apply_operator",
    "bilinear_a",
    "build_operator",
    "constant_diffusion",
    "constant_profile",
    "cosine_profile",
    "exact_diagonal_solution",
    "h_norm",
    "linear_profile",
    "operator_matrix",
    "rhs_mean",
    "rotating_diffusion",
    "separable_source",
    "v_dual_norm",
    "v_norm",
    "validate_diffusion",
    "zero_source",
]

from .manifold import LowRankState, reorthonormalize


# ---------------------------------------------------------------------------
# model data


@dataclass(frozen=True)
class DiffusionModel:
    """Time-dependent 2x2 diffusion tensor with its analytic bounds.

    alpha : map t -> symmetric (2, 2) array with eigenvalues in [mu, beta].
    lipschitz_t : Lipschitz constant of t -> alpha(t) in the spectral norm
        (the constant that multiplies |t - s| * |u|_V * |v|_V when the weak
        form is shifted in time).
    time_dependent / diagonal : structure flags used to pick fast paths and
        to guard closed-form solutions.
    """

    alpha: Callable[[float], np.ndarray]
    mu: float
    beta: float
    lipschitz_t: float
    time_dependent: bool = False
    diagonal: bool = False


def constant_diffusion(matrix) -> DiffusionModel:
    """Model with a fixed symmetric positive definite tensor."""
    a = np.array(matrix, dtype=float)
    if a.shape != (2, 2):
        raise ValueError("diffusion tensor must be 2x2")
    if abs(a[0, 1] - a[1, 0]) > 1e-14 * max(1.0, np.abs(a).max()):
        raise ValueError("diffusion tensor must be symmetric")
    eigs = np.linalg.eigvalsh(a)
    if eigs[0] <= 0:
        raise ValueError("diffusion tensor is not positive definite")
    diag = abs(a[0, 1]) <= 1e-14 * np.abs(np.diagonal(a)).max()
    return DiffusionModel(alpha=lambda t, _a=a: _a, mu=float(eigs[0]),
                          beta=float(eigs[-1]), lipschitz_t=0.0,
                          time_dependent=False, diagonal=diag)


def rotating_diffusion(lambda1: float, lambda2: float, omega: float) -> DiffusionModel:
    """Tensor with fixed eigenvalues whose eigenframe rotates at rate omega:
    ``alpha(t) = R(omega t)^T diag(lambda1, lambda2) R(omega t)``."""
    if lambda1 <= 0 or lambda2 <= 0:
        raise ValueError("diffusion tensor is not positive definite")
    lam = np.array([lambda1, lambda2], dtype=float)

    def alpha(t: float) -> np.ndarray:
        c, s = math.cos(omega * t), math.sin(omega * t)
        rot = np.array([[c, -s], [s, c]])
        return rot.T @ np.diag(lam) @ rot

    steady = omega == 0.0 or lambda1 == lambda2
    return DiffusionModel(alpha=alpha, mu=float(lam.min()), beta=float(lam.max()),
                          lipschitz_t=abs(omega) * abs(lambda1 - lambda2),
                          time_dependent=not steady,
                          diagonal=steady)


def validate_diffusion(model: DiffusionModel, times) -> None:
    """Sampled consistency check of the declared bounds.

    Verifies symmetry, eigenvalue range [mu, beta] and finite-difference
    Lipschitz quotients against ``lipschitz_t`` on the given time grid.
    """
    times = np.asarray(times, dtype=float)
    prev_a, prev_t = None, None
    for t in times:
        a = model.alpha(float(t))
        if not np.allclose(a, a.T, atol=1e-13 * max(1.0, np.abs(a).max())):
            raise ValueError(f"alpha({t}) is not symmetric")
        eigs = np.linalg.eigvalsh(a)
        if eigs[0] < model.mu * (1 - 1e-9) or eigs[-1] > model.beta * (1 + 1e-9):
            raise ValueError(f"alpha({t}) eigenvalues {eigs} leave [mu, beta]")
        if prev_a is not None and t != prev_t:
            quot = np.linalg.norm(a - prev_a, 2) / abs(t - prev_t)
            if quot > model.lipschitz_t * (1 + 1e-6) + 1e-12:
                raise ValueError(
                    f"Lipschitz quotient {quot:.6e} exceeds declared {model.lipschitz_t:.6e}")
        prev_a, prev_t = a, t


# ---------------------------------------------------------------------------
# discrete operator


@dataclass(frozen=True, eq=False)
class GalerkinOperator:
    """Precomputed 1D matrices of the sine basis.

    stiffness_1d : (N, N) diagonal matrix with entries (n pi)^2.
    grad_coupling_1d : (N, N) skew-symmetric matrix of first-derivative
        couplings, entry (i, j) = integral( phi_j' phi_i ).
    v_weights : (N, N) grid of (n1 pi)^2 + (n2 pi)^2 used by the V-norms.
    """

    basis_dim: int
    stiffness_1d: np.ndarray
    grad_coupling_1d: np.ndarray
    v_weights: np.ndarray


def _gauss_01(n: int = 256):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def build_operator(basis_dim: int, verify: bool = False) -> GalerkinOperator:
    """Assemble the 1D blocks for modes 1..basis_dim.

    The derivative couplings have the closed form
    ``4 i j / (i^2 - j^2)`` for ``i + j`` odd and vanish otherwise.  With
    ``verify=True`` both matrices are re-derived by Gauss-Legendre quadrature
    of the defining integrals and compared to 1e-10.
    """
    if basis_dim < 1:
        raise ValueError("basis_dim must be >= 1")
    n = np.arange(1, basis_dim + 1)
    lam = (n * np.pi) ** 2
    stiff = np.diag(lam)
    i = n[:, None].astype(float)
    j = n[None, :].astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = 4.0 * i * j / (i * i - j * j)
    grad[(n[:, None] + n[None, :]) % 2 == 0] = 0.0
    weights = lam[:, None] + lam[None, :]
    op = GalerkinOperator(basis_dim, stiff, grad, weights)
    if verify:
        x, w = _gauss_01(max(256, 8 * basis_dim))
        phi = np.sqrt(2.0) * np.sin(np.outer(n, np.pi * x))          # (N, q)
        dphi = np.sqrt(2.0) * (n[:, None] * np.pi) * np.cos(np.outer(n, np.pi * x))
        stiff_q = (dphi * w) @ dphi.T
        grad_q = (phi * w) @ dphi.T                                   # (i, j) = int phi_j' phi_i
        if not np.allclose(stiff_q, stiff, atol=1e-10 * max(1.0, lam.max())):
            raise ValueError("stiffness block disagrees with quadrature")
        if not np.allclose(grad_q, grad, atol=1e-10 * max(1.0, np.abs(grad).max())):
            raise ValueError("gradient coupling disagrees with quadrature")
    return op


def apply_a1(op: GalerkinOperator, model: DiffusionModel, t: float, coeffs: np.ndarray) -> np.ndarray:
    """Divergence part: ``a11 L Y + a22 Y L`` (acts on rows / columns only)."""
    a = model.alpha(t)
    lam = np.diagonal(op.stiffness_1d)
    return a[0, 0] * lam[:, None] * coeffs + a[1, 1] * coeffs * lam[None, :]


def apply_a2(op: GalerkinOperator, model: DiffusionModel, t: float, coeffs: np.ndarray) -> np.ndarray:
    """Mixed-derivative part: ``(a12 + a21) G Y G``."""
    a = model.alpha(t)
    c = a[0, 1] + a[1, 0]
    if c == 0.0:
        return np.zeros_like(coeffs)
    g = op.grad_coupling_1d
    return c * (g @ coeffs @ g)


def apply_operator(op: GalerkinOperator, model: DiffusionModel, t: float, coeffs: np.ndarray) -> np.ndarray:
    """Full weak operator in coefficient space; symmetric positive definite."""
    return apply_a1(op, model, t, coeffs) + apply_a2(op, model, t, coeffs)


def operator_matrix(op: GalerkinOperator, model: DiffusionModel, t: float) -> np.ndarray:
    """Dense N^2-by-N^2 matrix of :func:`apply_operator` acting on
    column-major vectorized coefficients."""
    a = model.alpha(t)
    n = op.basis_dim
    eye = np.eye(n)
    stiff = op.stiffness_1d
    g = op.grad_coupling_1d
    mat = a[0, 0] * np.kron(eye, stiff) + a[1, 1] * np.kron(stiff, eye)
    c = a[0, 1] + a[1, 0]
    if c != 0.0:
        mat -= c * np.kron(g, g)   # vec(G Y G) = (G^T kron G) vec(Y), G skew
    return mat


def bilinear_a(op: GalerkinOperator, model: DiffusionModel, t: float,
               y: np.ndarray, z: np.ndarray) -> float:
    """Weak form a(y, z; t) = <A(t) y, z>_F."""
    return float(np.sum(apply_operator(op, model, t, y) * z))


def h_norm(coeffs: np.ndarray) -> float:
    """L2 norm of the represented function = Frobenius norm of coefficients."""
    return float(np.linalg.norm(coeffs))


def v_norm(op: GalerkinOperator, coeffs: np.ndarray) -> float:
    """Gradient seminorm of the represented function (exact in this basis)."""
    return float(np.sqrt(np.sum(op.v_weights * coeffs * coeffs)))


def v_dual_norm(op: GalerkinOperator, coeffs: np.ndarray) -> float:
    """Dual norm with reciprocal gradient weights."""
    return float(np.sqrt(np.sum(coeffs * coeffs / op.v_weights)))


# ---------------------------------------------------------------------------
# separable source terms


@dataclass(frozen=True)
class TimeProfile:
    """Scalar time factor: constant c, linear c*t, or cosine c*cos(omega t)."""

    kind: str
    scale: float
    omega: float = 0.0

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return self.scale
        if self.kind == "linear":
            return self.scale * t
        if self.kind == "cosine":
            return self.scale * math.cos(self.omega * t)
        raise ValueError(f"unknown time profile {self.kind!r}")

    def mean(self, t_a: float, t_b: float) -> float:
        """Exact average over [t_a, t_b] (midpoint value for linear)."""
        if t_b <= t_a:
            raise ValueError("interval must have positive length")
        if self.kind == "constant":
            return self.scale
        if self.kind == "linear":
            return self.scale * 0.5 * (t_a + t_b)
        if self.kind == "cosine":
            if self.omega == 0.0:
                return self.scale
            return self.scale * (math.sin(self.omega * t_b) - math.sin(self.omega * t_a)) \
                / (self.omega * (t_b - t_a))
        raise ValueError(f"unknown time profile {self.kind!r}")


def constant_profile(c: float) -> TimeProfile:
    return TimeProfile("constant", float(c))


def linear_profile(c: float) -> TimeProfile:
    return TimeProfile("linear", float(c))


def cosine_profile(c: float, omega: float) -> TimeProfile:
    return TimeProfile("cosine", float(c), float(omega))


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """Finite sum of separable terms ``profile(t) * outer(p, q)``."""

    basis_dim: int
    terms: tuple

    def value(self, t: float) -> np.ndarray:
        out = np.zeros((self.basis_dim, self.basis_dim))
        for profile, p, q in self.terms:
            out += profile.value(t) * np.outer(p, q)
        return out

    def scaled(self, c: float) -> "SourceSpec":
        terms = tuple(
            (TimeProfile(pr.kind, pr.scale * c, pr.omega), p, q)
            for pr, p, q in self.terms)
        return SourceSpec(self.basis_dim, terms)


def zero_source(basis_dim: int) -> SourceSpec:
    return SourceSpec(basis_dim, ())


def separable_source(basis_dim: int, terms) -> SourceSpec:
    """Build a source from (profile, p, q) triples of N-vectors."""
    packed = []
    for profile, p, q in terms:
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != (basis_dim,) or q.shape != (basis_dim,):
            raise ValueError("source factors must be N-vectors")
        packed.append((profile, p, q))
    return SourceSpec(basis_dim, tuple(packed))


def rhs_mean(source: SourceSpec, t_a: float, t_b: float) -> np.ndarray:
    """Exact interval mean of the source, term by term."""
    out = np.zeros((source.basis_dim, source.basis_dim))
    for profile, p, q in source.terms:
        out += profile.mean(t_a, t_b) * np.outer(p, q)
    return out


# ---------------------------------------------------------------------------
# closed-form solution for the decoupled case


def exact_diagonal_solution(op: GalerkinOperator, model: DiffusionModel,
                            u0: LowRankState, t: float) -> LowRankState:
    """Homogeneous solution for constant diagonal alpha.

    Every mode decays independently, so the factors are scaled column-wise
    by ``exp(-t a11 (n pi)^2)`` / ``exp(-t a22 (n pi)^2)`` and the state is
    reorthonormalized; the rank is preserved for any t.
    """
    if model.time_dependent or not model.diagonal:
        raise ValueError("closed form requires a constant diagonal tensor")
    a = model.alpha(0.0)
    lam = np.diagonal(op.stiffness_1d)
    decay1 = np.exp(-t * a[0, 0] * lam)
    decay2 = np.exp(-t * a[1, 1] * lam)
    scaled = LowRankState(decay1[:, None] * u0.u1_factors, u0.core.copy(),
                          decay2[:, None] * u0.u2_factors)
    return reorthonormalize(scaled)
