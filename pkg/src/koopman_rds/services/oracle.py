"""Reference spectra: closed-form eigenvalues and eigenfunctions of the catalog
models, plus two numerical oracles (finite-difference backward Kolmogorov
generator in 1D and brute-force enumeration over discrete noise).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.special import eval_hermite

from koopman_rds.domain.enums import Boundary, ModelKind
from koopman_rds.domain.models import ModelSpec
from koopman_rds.errors import (
    GridResolutionError,
    InvalidArgumentError,
    NumericalError,
    UnsupportedError,
)
from koopman_rds.services.noise import DiscreteDistribution
from koopman_rds.services.systems import (
    discrete_linear_matrix,
    lotka_volterra_equilibrium,
    lotka_volterra_jacobian,
    switching_matrix,
)

VAN_DER_POL_OMEGA0 = 0.9944151  # Hankel DMD estimate for mu = 0.3
MAX_ENUMERATION_STEPS = 12
DENSE_FD_LIMIT = 600
LOGNORMAL_MIN_SWITCHES = 30

TimeScale = Literal["generator", "discrete", "time"]


@dataclass(frozen=True)
class Eigenfunction:
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.value(x)


@dataclass(frozen=True)
class AnalyticSpectrum:
    eigenvalues: np.ndarray
    labels: List[str]
    time_scale: TimeScale
    eigenfunctions: List[Optional[Eigenfunction]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": "1.0",
            "time_scale": self.time_scale,
            "eigenvalues": [
                {"label": lbl, "re": float(v.real), "im": float(v.imag)}
                for lbl, v in zip(self.labels, self.eigenvalues)
            ],
            "notes": list(self.notes),
        }


def rotation_spectrum(theta: float, delta: float, j_max: int) -> AnalyticSpectrum:
    """One-step eigenvalues ``sinc(j delta) exp(2 pi i j theta)``, j = -j_max..j_max."""
    if delta < 0:
        raise InvalidArgumentError("delta must be >= 0")
    js = np.arange(-j_max, j_max + 1)
    lam = np.sinc(js * delta) * np.exp(2j * np.pi * js * theta)
    funcs = [
        Eigenfunction(
            value=lambda x, j=j: np.exp(2j * np.pi * j * np.asarray(x)[..., 0]),
            gradient=lambda x, j=j: (
                2j * np.pi * j * np.exp(2j * np.pi * j * np.asarray(x)[..., 0])
            )[..., None],
        )
        for j in js
    ]
    return AnalyticSpectrum(lam, [f"j={j}" for j in js], "discrete", funcs)


def quantized_rotation_eigenvalue(theta: float, delta: float, j: int, q: int) -> complex:
    """Exact ``E[exp(2 pi i j (theta + v))]`` for v uniform on q cell midpoints of [-delta/2, delta/2]."""
    if q < 1:
        raise InvalidArgumentError("q must be >= 1")
    levels = quantized_levels(delta, q)
    return complex(np.exp(2j * np.pi * j * theta) * np.exp(2j * np.pi * j * levels).mean())


def quantized_levels(delta: float, q: int) -> np.ndarray:
    return -delta / 2 + (np.arange(q) + 0.5) * delta / q


def expected_cocycle_matrix(distribution: DiscreteDistribution, n: int) -> np.ndarray:
    """``E[A(w_n) ... A(w_1)]`` by enumerating every noise sequence."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if len(distribution.values) ** n > 2**MAX_ENUMERATION_STEPS:
        raise InvalidArgumentError(f"enumeration over {len(distribution.values)}^{n} sequences")
    mats = [discrete_linear_matrix(v) for v in distribution.values]
    total = np.zeros((2, 2))
    for seq in itertools.product(range(len(mats)), repeat=n):
        prod = np.eye(2)
        weight = 1.0
        for i in seq:
            prod = mats[i] @ prod
            weight *= distribution.probabilities[i]
        total += weight * prod
    return total


def discrete_linear_spectrum(distribution: DiscreteDistribution, n: int = 1) -> AnalyticSpectrum:
    """Eigenvalues of ``E[Phi(n)] = E[A]^n`` for i.i.d. skew matrices ``A(w)``.

    Eigenfunctions are ``<x, w_j>`` with ``w_j`` the left eigenvectors of ``E[A]``.
    """
    mean_a = discrete_linear_matrix(distribution.mean())
    lam, vl = scipy.linalg.eig(mean_a, left=True, right=False)
    order = np.argsort(-lam.imag)
    lam, vl = lam[order], vl[:, order]
    funcs = [
        Eigenfunction(
            value=lambda x, w=np.conj(vl[:, i]): np.asarray(x) @ w,
            gradient=lambda x, w=np.conj(vl[:, i]): np.broadcast_to(w, np.shape(x)),
        )
        for i in range(2)
    ]
    return AnalyticSpectrum(
        lam**n,
        ["+", "-"],
        "discrete",
        funcs,
        [f"{n}-step eigenvalues of E[A]^{n}, E[w] = {distribution.mean()}"],
    )


def lognormal_regime_reached(switch_dt: float, t) -> np.ndarray:
    """True where ``t / switch_dt`` reaches the switch count the log-normal law needs."""
    return np.asarray(t, dtype=float) / switch_dt >= LOGNORMAL_MIN_SWITCHES - 1e-9


def switching_linear_spectrum(
    a1: float, a2: float, b: float, p1: float, switch_dt: float, t
) -> np.ndarray:
    """Log-normal approximation ``exp((a_hat +- i b) t + s2 / 2)``,
    ``s2 = p1 (1 - p1) (a1 - a2)^2 switch_dt t``.

    `t` is a time or an array of times, each a nonnegative multiple of
    `switch_dt`; the result has shape ``t.shape + (2,)``.
    """
    times = np.asarray(t, dtype=float)
    switches = times / switch_dt
    bad = (times < 0) | (np.abs(switches - np.round(switches)) > 1e-9 * np.maximum(switches, 1.0))
    if np.any(bad):
        raise InvalidArgumentError(
            f"t={times[bad].flat[0]} must be a nonnegative multiple of switch_dt={switch_dt}"
        )
    short = (times > 0) & ~lognormal_regime_reached(switch_dt, times)
    if np.any(short):
        logging.warning(
            f"{int(short.sum())} of {times.size} times have t/switch_dt < "
            f"{LOGNORMAL_MIN_SWITCHES}: log-normal regime not reached"
        )
    a_hat = p1 * a1 + (1 - p1) * a2
    s2 = p1 * (1 - p1) * (a1 - a2) ** 2 * switch_dt * times
    rates = np.array([a_hat + 1j * b, a_hat - 1j * b])
    return np.exp(rates * times[..., None] + s2[..., None] / 2)


def switching_linear_exact_spectrum(
    a1: float, a2: float, b: float, p1: float, switch_dt: float, t: float
) -> np.ndarray:
    """Exact eigenvalues of ``E[Phi(t)]`` for i.i.d. switching intervals.

    The generators ``A(w) = w I + [[0, 1], [-b^2, 0]]`` commute, so the
    expectation factorizes over intervals, the last one possibly partial.
    """
    full = math.floor(t / switch_dt + 1e-9)
    rest = max(t - full * switch_dt, 0.0)
    per_full = p1 * math.exp(a1 * switch_dt) + (1 - p1) * math.exp(a2 * switch_dt)
    per_rest = p1 * math.exp(a1 * rest) + (1 - p1) * math.exp(a2 * rest)
    growth = per_full**full * per_rest
    return growth * np.exp(np.array([1j * b, -1j * b]) * t)


def hermite_scale(mu: float, sigma: float) -> float:
    """Scale alpha with ``H_n(alpha x)`` the OU eigenfunctions: ``sqrt(|mu|) / sigma``."""
    return math.sqrt(abs(mu)) / sigma


def van_der_pol_omega0(mu: float) -> Tuple[float, float]:
    """Base frequency used as reference and the expansion ``1 - mu^2 / 16``."""
    expansion = 1.0 - mu**2 / 16
    return (VAN_DER_POL_OMEGA0 if math.isclose(mu, 0.3) else expansion), expansion


def _ou_spectrum(model: ModelSpec, count: int) -> AnalyticSpectrum:
    mu, sigma = model["mu"], model["sigma"]
    ns = np.arange(count)
    if sigma > 0:
        alpha = hermite_scale(mu, sigma)
        funcs = [
            Eigenfunction(lambda x, n=n: eval_hermite(n, alpha * np.asarray(x)[..., 0]))
            for n in ns
        ]
        notes = [f"phi_n = H_n(alpha x), alpha = {alpha:.6g}"]
    else:
        funcs = [Eigenfunction(lambda x, n=n: np.asarray(x)[..., 0] ** n) for n in ns]
        notes = ["phi_n = x^n"]
    return AnalyticSpectrum(ns * mu + 0j, [f"n={n}" for n in ns], "generator", funcs, notes)


def _pitchfork_spectrum(model: ModelSpec, count: int) -> AnalyticSpectrum:
    mu = model["mu"]
    ns = np.arange(count)
    funcs = [
        Eigenfunction(
            lambda x, n=n: (np.asarray(x)[..., 0] / np.sqrt(np.asarray(x)[..., 0] ** 2 + abs(mu)))
            ** n
        )
        for n in ns
    ]
    notes = ["deterministic eigenfunctions (x / sqrt(x^2 + |mu|))^n, accurate for small sigma"]
    return AnalyticSpectrum(ns * mu + 0j, [f"n={n}" for n in ns], "generator", funcs, notes)


def _stuart_landau_spectrum(model: ModelSpec, count: int) -> AnalyticSpectrum:
    p = model.params
    delta, beta, eps = p["delta"], p["beta"], p["epsilon"]
    omega0 = p["gamma"] - beta * delta
    lam, labels, funcs = [], [], []
    for n in range(-count, count + 1):
        lam.append(-(n**2) * eps**2 * (1 + beta**2) / (2 * delta) + 1j * n * omega0)
        labels.append(f"l=0,n={n}")
        funcs.append(
            Eigenfunction(
                lambda x, n=n: np.exp(
                    1j
                    * n
                    * (
                        np.asarray(x)[..., 1]
                        - beta * np.log(np.asarray(x)[..., 0] / math.sqrt(delta))
                    )
                )
            )
        )
    for n in range(-count, count + 1):
        lam.append(-2 * delta + 1j * n * omega0)
        labels.append(f"l=1,n={n}")
        funcs.append(None)
    notes = [
        f"omega0 = gamma - beta delta = {omega0}",
        "l=0 branch accurate to O(eps^4), l>0 to O(eps^2)",
    ]
    return AnalyticSpectrum(np.array(lam), labels, "generator", funcs, notes)


def _van_der_pol_spectrum(model: ModelSpec, count: int) -> AnalyticSpectrum:
    mu = model["mu"]
    omega0, expansion = van_der_pol_omega0(mu)
    lam, labels = [], []
    for level in (0, 1):
        for k in range(-count, count + 1):
            lam.append(-level * mu + 1j * k * omega0)
            labels.append(f"l={level},k={k}")
    notes = [f"omega0 = {omega0}", f"1 - mu^2/16 = {expansion:.7f}"]
    if not model.is_deterministic:
        notes.append("stochastic spectrum not known in closed form; deterministic lattice shown")
    return AnalyticSpectrum(np.array(lam), labels, "generator", [], notes)


def _lotka_volterra_spectrum(model: ModelSpec) -> AnalyticSpectrum:
    stochastic = not model.is_deterministic
    point = lotka_volterra_equilibrium(model, ito_corrected=stochastic)
    lam = np.linalg.eigvals(lotka_volterra_jacobian(model, point))
    lam = lam[np.argsort(-lam.imag)]
    eigenvalues = np.concatenate([[0j], lam])
    notes = [f"equilibrium ({point[0]:.5f}, {point[1]:.5f})"]
    if stochastic:
        notes.append("Jacobian at the Ito-corrected fixed point (heuristic linearization)")
    return AnalyticSpectrum(eigenvalues, ["0", "+", "-"], "generator", [], notes)


def sde_spectra(model: ModelSpec, count: int = 10) -> AnalyticSpectrum:
    """Generator-scale reference spectrum for the SDE and oscillator kinds."""
    match model.kind:
        case ModelKind.OU_LINEAR_SDE:
            return _ou_spectrum(model, count)
        case ModelKind.SCALAR_PITCHFORK_SDE:
            return _pitchfork_spectrum(model, count)
        case ModelKind.STUART_LANDAU:
            return _stuart_landau_spectrum(model, count)
        case ModelKind.VAN_DER_POL:
            return _van_der_pol_spectrum(model, count)
        case ModelKind.LOTKA_VOLTERRA:
            return _lotka_volterra_spectrum(model)
    raise UnsupportedError(f"no SDE spectrum for {model.kind.value}")


def generator_matrix(
    drift_fn: Callable[[np.ndarray], np.ndarray],
    sigma_fn: Callable[[np.ndarray], np.ndarray],
    domain: Tuple[float, float],
    grid_n: int,
    boundary: Boundary = Boundary.REFLECTING,
) -> Tuple[np.ndarray, scipy.sparse.csr_matrix]:
    """Central-difference discretization of ``G f' + sigma^2 f'' / 2`` on a uniform grid.

    Reflecting boundaries use a mirrored ghost node (zero flux), so constants
    stay in the kernel. Absorbing boundaries pin f = 0 at both ends and
    return the interior nodes only.
    """
    a, b = domain
    if b <= a:
        raise InvalidArgumentError(f"empty domain {domain}")
    x = np.linspace(a, b, grid_n)
    h = x[1] - x[0]
    g = np.broadcast_to(np.asarray(drift_fn(x), dtype=float), x.shape)
    s2 = np.broadcast_to(np.asarray(sigma_fn(x), dtype=float) ** 2, x.shape)
    lower = -g / (2 * h) + s2 / (2 * h**2)
    diag = -s2 / h**2
    upper = g / (2 * h) + s2 / (2 * h**2)

    if boundary == Boundary.REFLECTING:
        up = upper[:-1].copy()
        lo = lower[1:].copy()
        up[0] = s2[0] / h**2
        lo[-1] = s2[-1] / h**2
        L = scipy.sparse.diags([lo, diag, up], [-1, 0, 1], format="csr")
        return x, L
    inner = slice(1, -1)
    L = scipy.sparse.diags(
        [lower[inner][1:], diag[inner], upper[inner][:-1]], [-1, 0, 1], format="csr"
    )
    return x[inner], L


def _leading_eigenvalues(L: scipy.sparse.csr_matrix, k: int, shift: float) -> np.ndarray:
    n = L.shape[0]
    if L.count_nonzero() == 0:
        return np.zeros(k, dtype=complex)
    if n <= DENSE_FD_LIMIT or k >= n - 2:
        lam = scipy.linalg.eigvals(L.toarray())
    else:
        try:
            lam = scipy.sparse.linalg.eigs(
                L.tocsc(), k=k, sigma=shift, which="LM", return_eigenvectors=False
            )
        except scipy.sparse.linalg.ArpackError as e:
            raise NumericalError(f"shift-invert eigensolve failed: {e}") from e
    lam = lam[np.argsort(-lam.real, kind="stable")]
    return lam[:k]


def kolmogorov_fd_spectrum(
    drift_fn: Callable[[np.ndarray], np.ndarray],
    sigma_fn: Callable[[np.ndarray], np.ndarray],
    domain: Tuple[float, float],
    grid_n: int,
    k_eigs: int,
    *,
    boundary: Boundary = Boundary.REFLECTING,
    shift: float = 1e-3,
    check_refinement: bool = True,
) -> AnalyticSpectrum:
    """Leading eigenvalues (largest real part first) of the FD backward Kolmogorov generator.

    With `check_refinement` the same problem is solved on a grid of half the
    size; a leading eigenvalue moving by more than 1% raises `GridResolutionError`.
    """
    if grid_n < 200:
        raise InvalidArgumentError(f"grid_n must be >= 200, got {grid_n}")
    if k_eigs < 1:
        raise InvalidArgumentError("k_eigs must be >= 1")
    _, L = generator_matrix(drift_fn, sigma_fn, domain, grid_n, boundary)
    lam = _leading_eigenvalues(L, k_eigs, shift)
    if check_refinement:
        _, coarse_L = generator_matrix(drift_fn, sigma_fn, domain, grid_n // 2, boundary)
        coarse = _leading_eigenvalues(coarse_L, k_eigs, shift)
        scale = max(float(np.max(np.abs(lam))), 1e-12)
        moved = np.abs(lam - coarse) / np.maximum(np.abs(lam), 1e-2 * scale)
        if np.any(moved > 0.01):
            raise GridResolutionError(
                f"leading eigenvalues moved by up to {moved.max():.2%} between "
                f"{grid_n // 2} and {grid_n} nodes"
            )
    return AnalyticSpectrum(
        lam.astype(complex),
        [f"k={i}" for i in range(len(lam))],
        "generator",
        [],
        [f"central differences, {boundary.value} boundary, {grid_n} nodes on {domain}"],
    )


def model_fd_spectrum(
    model: ModelSpec, grid_n: int, k_eigs: int, *, width: Optional[float] = None
) -> AnalyticSpectrum:
    """FD oracle for the scalar SDE kinds on a domain scaled to the stationary spread."""
    if model.kind not in (ModelKind.OU_LINEAR_SDE, ModelKind.SCALAR_PITCHFORK_SDE):
        raise UnsupportedError(f"no 1D generator for {model.kind.value}")
    mu, sigma = model["mu"], model["sigma"]
    if width is None:
        width = 12 * sigma / math.sqrt(2 * abs(mu))
    if model.kind == ModelKind.OU_LINEAR_SDE:
        drift_fn = lambda x: mu * x  # noqa: E731
    else:
        drift_fn = lambda x: mu * x - x**3  # noqa: E731
    return kolmogorov_fd_spectrum(
        drift_fn, lambda x: np.full_like(x, sigma), (-width, width), grid_n, k_eigs
    )


def expected_switching_matrix(model: ModelSpec) -> np.ndarray:
    """``E[A] = [[a_hat, 1], [-b^2, a_hat]]`` of the switching linear RDE."""
    if model.kind != ModelKind.SWITCHING_LINEAR_RDE:
        raise UnsupportedError(f"{model.kind.value} is not a random differential equation")
    a_hat = model["p1"] * model["a1"] + (1 - model["p1"]) * model["a2"]
    return switching_matrix(model, a_hat)


def linear_rde_principal_eigenfunctions(
    model: ModelSpec,
) -> List[Tuple[complex, Eigenfunction]]:
    """Generator eigenpairs ``(lambda_j, <x, w_j>)`` with ``w_j`` left eigenvectors of ``E[A]``."""
    mean_a = expected_switching_matrix(model)
    lam, vl = scipy.linalg.eig(mean_a, left=True, right=False)
    pairs = []
    for i in range(len(lam)):
        w = np.conj(vl[:, i])
        pairs.append(
            (
                complex(lam[i]),
                Eigenfunction(
                    value=lambda x, w=w: np.asarray(x) @ w,
                    gradient=lambda x, w=w: np.broadcast_to(w, np.shape(x)).astype(complex),
                ),
            )
        )
    return pairs


CONSTANT_EIGENFUNCTION = Eigenfunction(
    value=lambda x: np.ones(np.shape(x)[:-1], dtype=complex),
    gradient=lambda x: np.zeros(np.shape(x), dtype=complex),
)


def generator_product_property_check(
    lambda1: complex,
    phi1: Eigenfunction,
    lambda2: complex,
    phi2: Eigenfunction,
    model: ModelSpec,
    *,
    grid: Optional[np.ndarray] = None,
    tol: float = 1e-10,
) -> Tuple[bool, float]:
    """Checks ``E[F] . grad(phi1 phi2) = (lambda1 + lambda2) phi1 phi2`` on sample points.

    Default points: a 10 x 10 grid on ``[-1, 1]^2``.
    """
    mean_a = expected_switching_matrix(model)
    if phi1.gradient is None or phi2.gradient is None:
        raise InvalidArgumentError("eigenfunction gradients are required")
    if grid is None:
        axis = np.linspace(-1.0, 1.0, 10)
        grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    vector_field = grid @ mean_a.T
    f1, f2 = phi1.value(grid), phi2.value(grid)
    grad = f2[:, None] * phi1.gradient(grid) + f1[:, None] * phi2.gradient(grid)
    lhs = np.sum(vector_field * grad, axis=1)
    rhs = (lambda1 + lambda2) * f1 * f2
    deviation = float(np.max(np.abs(lhs - rhs)))
    return deviation <= tol, deviation


def oracle_for(model: ModelSpec, count: int = 10) -> AnalyticSpectrum:
    """Reference spectrum of any catalog model, on its natural time scale."""
    match model.kind:
        case ModelKind.NOISY_ROTATION:
            return rotation_spectrum(model["theta"], model["delta"], count)
        case ModelKind.DISCRETE_LINEAR:
            return discrete_linear_spectrum(
                DiscreteDistribution.two_point(model["omega1"], model["omega2"], model["p1"])
            )
        case ModelKind.SWITCHING_LINEAR_RDE:
            pairs = sorted(linear_rde_principal_eigenfunctions(model), key=lambda p: -p[0].imag)
            return AnalyticSpectrum(
                np.array([lam for lam, _ in pairs]),
                ["+", "-"],
                "generator",
                [f for _, f in pairs],
                ["generator of the averaged RDE; time-t eigenvalues: switching_linear_spectrum"],
            )
    return sde_spectra(model, count)

