"""DMD with refined Rayleigh–Ritz data (column scaling, epsilon-truncated SVD,
Rayleigh quotient, per-pair residuals) and the companion-matrix route for
Hankel data.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from koopman_rds.domain.enums import Layout
from koopman_rds.domain.models import DmdOptions
from koopman_rds.errors import (
    DegenerateDataError,
    InvalidArgumentError,
    NumericalError,
    UnsupportedError,
)

GRAM_EPS_FACTOR = 10.0


@dataclass(frozen=True)
class SnapshotMatrices:
    X: np.ndarray
    Y: np.ndarray
    layout: Layout
    dt: float  # time represented by one application of the operator

    def __post_init__(self) -> None:
        if self.X.shape != self.Y.shape or self.X.ndim != 2:
            raise InvalidArgumentError(
                f"X and Y must be matrices of equal shape, got {self.X.shape} and {self.Y.shape}"
            )
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise InvalidArgumentError("snapshot matrices contain NaN or infinite entries")
        if self.dt <= 0:
            raise InvalidArgumentError("dt must be > 0")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]


@dataclass
class SnapshotMoments:
    """Running sums ``G = sum x x^H`` and ``C = sum y x^H`` over snapshot pairs.

    Enough for DMD RRR when there are far more columns than rows. With
    `scale_columns` each pair is divided by ``|x|`` before it is added, as
    `dmd_rrr` does.
    """

    n: int
    layout: Layout
    dt: float
    scale_columns: bool = True
    count: int = 0
    zero_norm_columns: int = 0
    gram: Optional[np.ndarray] = field(default=None, repr=False)
    cross: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidArgumentError("n must be >= 1")
        if self.dt <= 0:
            raise InvalidArgumentError("dt must be > 0")
        if self.gram is None:
            self.gram = np.zeros((self.n, self.n), dtype=complex)
        if self.cross is None:
            self.cross = np.zeros((self.n, self.n), dtype=complex)

    @property
    def m(self) -> int:
        return self.count

    def add(self, X: np.ndarray, Y: np.ndarray) -> None:
        X = np.asarray(X, dtype=complex)
        Y = np.asarray(Y, dtype=complex)
        if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != self.n:
            raise InvalidArgumentError(
                f"expected two {self.n}-row matrices of equal shape, got {X.shape} and {Y.shape}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidArgumentError("snapshot matrices contain NaN or infinite entries")
        if self.scale_columns:
            norms = np.linalg.norm(X, axis=0)
            zero = norms == 0
            self.zero_norm_columns += int(zero.sum())
            d = np.where(zero, 1.0, norms)
            X = X / d
            Y = Y / d
        self.gram += X @ X.conj().T
        self.cross += Y @ X.conj().T
        self.count += X.shape[1]

    @classmethod
    def from_snapshots(
        cls, data: SnapshotMatrices, *, scale_columns: bool = True
    ) -> "SnapshotMoments":
        moments = cls(n=data.n, layout=data.layout, dt=data.dt, scale_columns=scale_columns)
        moments.add(data.X, data.Y)
        return moments


@dataclass(frozen=True)
class RitzPair:
    eigenvalue: complex
    ritz_vector: np.ndarray  # unit 2-norm
    residual: float
    continuous_eigenvalue: complex
    coords: Optional[np.ndarray] = None  # right eigenvector of S_r
    left_coords: Optional[np.ndarray] = None  # left eigenvector of S_r


@dataclass(frozen=True)
class DmdResult:
    pairs: List[RitzPair]
    rejected: List[RitzPair]
    rank: int
    singular_values: np.ndarray
    scaling_applied: bool
    layout: Layout
    dt: float
    residual_threshold: float
    zero_norm_columns: int = 0
    basis: Optional[np.ndarray] = field(default=None, repr=False)  # U_r
    rayleigh: Optional[np.ndarray] = field(default=None, repr=False)  # S_r

    @property
    def all_pairs(self) -> List[RitzPair]:
        return self.pairs + self.rejected

    def eigenvalues(self) -> np.ndarray:
        return np.array([p.eigenvalue for p in self.pairs], dtype=complex)

    def continuous_eigenvalues(self) -> np.ndarray:
        return np.array([p.continuous_eigenvalue for p in self.pairs], dtype=complex)

    def residuals(self) -> np.ndarray:
        return np.array([p.residual for p in self.pairs])


def _to_continuous(lam: np.ndarray, dt: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(lam.astype(complex)) / dt


def _svd(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError:
        logging.warning("gesdd did not converge, retrying with gesvd")
    try:
        return scipy.linalg.svd(X, full_matrices=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"SVD of a {X.shape} snapshot matrix failed: {e}") from e


def _eig(S: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.eig(S, left=True, right=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigendecomposition of a {S.shape} matrix failed: {e}") from e


def _sorted_pairs(pairs: List[RitzPair]) -> List[RitzPair]:
    if not pairs:
        return pairs
    res = np.array([p.residual for p in pairs])
    mag = np.array([abs(p.eigenvalue) for p in pairs])
    return [pairs[i] for i in np.lexsort((-mag, res))]


def _split(pairs: List[RitzPair], threshold: float) -> Tuple[List[RitzPair], List[RitzPair]]:
    pairs = _sorted_pairs(pairs)
    kept = [p for p in pairs if p.residual <= threshold]
    rejected = [p for p in pairs if p.residual > threshold]
    return kept, rejected


def _ritz_pairs(
    Ur: np.ndarray, B: np.ndarray, dt: float
) -> Tuple[List[RitzPair], np.ndarray]:
    """Rayleigh quotient ``S = U_r^H B`` and its pairs, residuals ``|B w - lambda U_r w|``."""
    S = Ur.conj().T @ B
    lam, wl, wr = _eig(S)
    Z = Ur @ wr
    znorm = np.linalg.norm(Z, axis=0)
    znorm[znorm == 0] = 1.0
    wr = wr / znorm
    Z = Z / znorm
    residuals = np.linalg.norm(B @ wr - Z * lam, axis=0)
    cont = _to_continuous(lam, dt)
    pairs = [
        RitzPair(
            eigenvalue=complex(lam[i]),
            ritz_vector=Z[:, i],
            residual=float(residuals[i]),
            continuous_eigenvalue=complex(cont[i]),
            coords=wr[:, i],
            left_coords=wl[:, i],
        )
        for i in range(len(lam))
    ]
    return pairs, S


def _truncated_rank(s: np.ndarray, eps: float, max_rank: Optional[int]) -> int:
    rank = int(np.count_nonzero(s >= s[0] * eps))
    if max_rank is not None and rank > max_rank:
        logging.info(f"Rank {rank} capped at {max_rank}")
        rank = max_rank
    return rank


def _rayleigh_ritz(
    data: SnapshotMatrices,
    *,
    eps: float,
    max_rank: Optional[int],
    scale_columns: bool,
):
    if data.m < 2 or data.n < 1:
        raise InvalidArgumentError(f"need m >= 2 snapshots and n >= 1 rows, got {data.X.shape}")
    X = data.X.astype(complex)
    Y = data.Y.astype(complex)
    norms = np.linalg.norm(X, axis=0)
    nonzero = norms > 0
    if not nonzero.any():
        raise DegenerateDataError("all columns of X are zero", numerical_rank=0)
    zero_cols = int((~nonzero).sum())
    if zero_cols:
        logging.warning(f"{zero_cols} zero-norm columns left unscaled")
    if scale_columns:
        d = np.where(nonzero, norms, 1.0)
        X = X / d
        Y = Y / d

    U, s, Vh = _svd(X)
    rank = _truncated_rank(s, eps, max_rank)
    Ur = U[:, :rank]
    B = (Y @ Vh[:rank].conj().T) / s[:rank]  # K U_r
    pairs, S = _ritz_pairs(Ur, B, data.dt)
    return pairs, rank, s, zero_cols, Ur, S


def dmd_rrr(data: SnapshotMatrices, opts: Optional[DmdOptions] = None) -> DmdResult:
    """Ritz pairs of the data-driven Koopman compression, filtered by residual.

    Residuals are measured in the frame DMD runs in (after column scaling).
    """
    opts = opts or DmdOptions()
    pairs, rank, s, zero_cols, Ur, S = _rayleigh_ritz(
        data, eps=opts.eps, max_rank=opts.max_rank, scale_columns=opts.scale_columns
    )
    kept, rejected = _split(pairs, opts.residual_threshold)
    logging.debug(
        f"DMD RRR on {data.X.shape} {data.layout.value} data: rank {rank}, "
        f"{len(kept)} pairs retained, {len(rejected)} rejected"
    )
    return DmdResult(
        pairs=kept,
        rejected=rejected,
        rank=rank,
        singular_values=s,
        scaling_applied=opts.scale_columns,
        layout=data.layout,
        dt=data.dt,
        residual_threshold=opts.residual_threshold,
        zero_norm_columns=zero_cols,
        basis=Ur,
        rayleigh=S,
    )


def dmd_rrr_moments(
    moments: SnapshotMoments, opts: Optional[DmdOptions] = None
) -> DmdResult:
    """`dmd_rrr` on the stacked columns behind `moments`, without the columns.

    ``G = U diag(s^2) U^H`` gives the left singular pairs of X and
    ``K U_r = C U_r diag(s^-2)``. The Gram route cannot resolve singular values
    below about ``sqrt(n * machine eps) * s_1``, so `opts.eps` is raised to
    ``GRAM_EPS_FACTOR`` times that.
    """
    opts = opts or DmdOptions()
    if moments.count < 2:
        raise InvalidArgumentError(f"need m >= 2 snapshots, got {moments.count}")
    if moments.zero_norm_columns:
        logging.warning(f"{moments.zero_norm_columns} zero-norm columns left unscaled")
    try:
        evals, U = scipy.linalg.eigh(moments.gram)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            f"eigendecomposition of a {moments.gram.shape} Gram matrix failed: {e}"
        ) from e
    evals, U = evals[::-1], U[:, ::-1]
    s = np.sqrt(np.maximum(evals, 0.0))
    if s[0] == 0:
        raise DegenerateDataError("all columns of X are zero", numerical_rank=0)
    eps = max(opts.eps, GRAM_EPS_FACTOR * float(np.sqrt(moments.n * np.finfo(float).eps)))
    rank = _truncated_rank(s, eps, opts.max_rank)
    Ur = U[:, :rank]
    B = (moments.cross @ Ur) / s[:rank] ** 2  # K U_r
    pairs, S = _ritz_pairs(Ur, B, moments.dt)
    kept, rejected = _split(pairs, opts.residual_threshold)
    logging.debug(
        f"DMD RRR on moments of {moments.count} {moments.layout.value} columns: rank {rank}, "
        f"{len(kept)} pairs retained, {len(rejected)} rejected"
    )
    return DmdResult(
        pairs=kept,
        rejected=rejected,
        rank=rank,
        singular_values=s,
        scaling_applied=moments.scale_columns,
        layout=moments.layout,
        dt=moments.dt,
        residual_threshold=opts.residual_threshold,
        zero_norm_columns=moments.zero_norm_columns,
        basis=Ur,
        rayleigh=S,
    )


def dmd_standard(
    data: SnapshotMatrices, *, eps: float = 1e-12, max_rank: Optional[int] = None
) -> DmdResult:
    """Exact DMD without scaling or residual filtering; every Ritz pair is kept."""
    pairs, rank, s, zero_cols, Ur, S = _rayleigh_ritz(
        data, eps=eps, max_rank=max_rank, scale_columns=False
    )
    return DmdResult(
        pairs=_sorted_pairs(pairs),
        rejected=[],
        rank=rank,
        singular_values=s,
        scaling_applied=False,
        layout=data.layout,
        dt=data.dt,
        residual_threshold=float("inf"),
        zero_norm_columns=zero_cols,
        basis=Ur,
        rayleigh=S,
    )


def companion_dmd(
    data: SnapshotMatrices, opts: Optional[DmdOptions] = None
) -> DmdResult:
    """Eigenvalues of the least-squares companion matrix ``C = X^+ Y``.

    Ritz vectors are ``X v`` scaled to unit norm; residuals are ``|Y v - lambda X v|``.
    """
    if data.layout != Layout.HANKEL:
        raise UnsupportedError(f"companion DMD needs Hankel data, got {data.layout.value}")
    opts = opts or DmdOptions()
    X = data.X.astype(complex)
    Y = data.Y.astype(complex)
    n, m = X.shape
    U, s, Vh = _svd(X)
    tol = n * np.finfo(float).eps * s[0]
    numerical_rank = int(np.count_nonzero(s > tol))
    if s[0] == 0 or m > n or numerical_rank < m:
        raise DegenerateDataError(
            f"X ({n}x{m}) is not of full column rank: numerical rank {numerical_rank}",
            numerical_rank=numerical_rank,
        )
    C = Vh.conj().T @ ((U.conj().T @ Y) / s[:, None])
    lam, _, V = _eig(C)
    XV = X @ V
    scale = np.linalg.norm(XV, axis=0)
    V = V / scale
    XV = XV / scale
    residuals = np.linalg.norm(Y @ V - XV * lam, axis=0)
    cont = _to_continuous(lam, data.dt)
    pairs = [
        RitzPair(
            eigenvalue=complex(lam[i]),
            ritz_vector=XV[:, i],
            residual=float(residuals[i]),
            continuous_eigenvalue=complex(cont[i]),
            coords=V[:, i],
        )
        for i in range(m)
    ]
    kept, rejected = _split(pairs, opts.residual_threshold)
    return DmdResult(
        pairs=kept,
        rejected=rejected,
        rank=m,
        singular_values=s,
        scaling_applied=False,
        layout=data.layout,
        dt=data.dt,
        residual_threshold=opts.residual_threshold,
    )


def eigenfunction_coefficients(
    result: DmdResult, data: Union[SnapshotMatrices, SnapshotMoments]
) -> np.ndarray:
    """Eigenfunction representation of each retained pair, one column per pair.

    * hankel: rows of the data are samples along one trajectory, so the
      columns are the (unit) Ritz vectors, i.e. eigenfunction values there.
    * ensemble_pairs / time_delayed: rows are dictionary functions; column
      ``xi = U_r z`` (z a left eigenvector of S_r, unit norm) defines
      ``phi(x) = xi^H f(x)``, see `evaluate_eigenfunctions`.
    """
    if result.layout != data.layout:
        raise InvalidArgumentError("result and data layouts differ")
    if not result.pairs:
        return np.zeros((data.n, 0), dtype=complex)
    if data.layout == Layout.HANKEL:
        return np.column_stack([p.ritz_vector for p in result.pairs])
    if result.basis is None or any(p.left_coords is None for p in result.pairs):
        raise UnsupportedError(
            f"no eigenfunction reconstruction for {data.layout.value} data without a Ritz basis"
        )
    xi = result.basis @ np.column_stack([p.left_coords for p in result.pairs])
    return xi / np.linalg.norm(xi, axis=0)


def evaluate_eigenfunctions(xi: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``phi_k(x_j) = xi_k^H f(x_j)`` for dictionary values ``[n x P]``; returns ``[k x P]``."""
    return xi.conj().T @ values
