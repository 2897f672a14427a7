"""
Dense linear algebra and log-domain arithmetic for the soft detectors.

Every routine accepts leading batch dimensions, so a whole frame of channel
uses goes through the same call as a single instance.  Complex vectors enter
the Gaussian metric in their stacked real form [Re x; Im x].
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SYMMETRY_TOL = 1e-10

# Approximate max-star: ln(1 + e^-d) tabulated at 8 knots, linear in between,
# falling to zero at the ninth knot and beyond
_CORRECTION_STEP = 0.625
_CORRECTION_KNOTS = np.arange(9) * _CORRECTION_STEP
_CORRECTION_TABLE = np.append(np.log1p(np.exp(-_CORRECTION_KNOTS[:8])), 0.0)


class NotPositiveDefiniteError(ValueError):
    """A covariance that must be SPD failed to factorize."""


class LogSum(str, Enum):
    """How pairs of log-domain values are combined."""
    EXACT = "exact"
    MAX_LOG = "max-log"
    APPROX = "approx"


@dataclass
class OpCounter:
    """
    Real-valued multiply-accumulate counts, bucketed by category.

    Every kernel charges what its operands' shapes imply. Categories used
    across the package:
        per-use work: "residual", "moments", "interference", "metric",
                      "normalize", "inverse", "llr", "candidates", "logsum"
        one-off work: "setup" (building and inverting the full covariance)
    """
    counts: dict[str, int] = field(default_factory=dict)

    def add(self, category: str, n: int):
        self.counts[category] = self.counts.get(category, 0) + int(n)

    def total(self, *categories: str) -> int:
        if not categories:
            return sum(self.counts.values())
        return sum(self.counts.get(c, 0) for c in categories)

    def reset(self):
        self.counts.clear()


@dataclass(frozen=True, eq=False)
class CompositeCovariance:
    """Stacked real covariance of an improper complex vector."""
    lam: np.ndarray       # (..., 2N_r, 2N_r)
    cov: np.ndarray       # (..., N_r, N_r) Hermitian
    pseudo: np.ndarray    # (..., N_r, N_r) complex-symmetric

    @property
    def n_r(self) -> int:
        return self.cov.shape[-1]


def _batch_count(shape: tuple, core_ndim: int) -> int:
    return int(np.prod(shape[:len(shape) - core_ndim], dtype=np.int64))


def matmul_ops(a: np.ndarray, b: np.ndarray) -> int:
    """Multiply-accumulates in a @ b, broadcasting leading dims."""
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    return int(np.prod(batch, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1]


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def to_composite(x: np.ndarray) -> np.ndarray:
    """Complex (..., n) -> real (..., 2n) as [Re x; Im x]."""
    x = np.asarray(x)
    return np.concatenate([x.real, x.imag], axis=-1)


def from_composite(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape[-1] % 2:
        raise ValueError(f"composite vector length {r.shape[-1]} is odd")
    n = r.shape[-1] // 2
    return r[..., :n] + 1j * r[..., n:]


def compose_covariance(cov: np.ndarray, pseudo: np.ndarray) -> CompositeCovariance:
    """
    Build the 2N_r x 2N_r real covariance of [Re x; Im x].

    Args:
        cov: Hermitian covariance E[(x-mu)(x-mu)^H], shape (..., N_r, N_r)
        pseudo: symmetric pseudo-covariance E[(x-mu)(x-mu)^T], same shape

    Returns:
        CompositeCovariance with lam = [[Re(C+P), -Im(C-P)], [Im(C+P), Re(C-P)]]
    """
    cov = np.asarray(cov, dtype=complex)
    pseudo = np.asarray(pseudo, dtype=complex)

    if cov.ndim < 2 or cov.shape[-1] != cov.shape[-2] or cov.shape[-1] == 0:
        raise ValueError(f"covariance must be square and non-empty, got {cov.shape}")
    if pseudo.shape != cov.shape:
        raise ValueError(f"pseudo-covariance shape {pseudo.shape} != covariance shape {cov.shape}")
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(pseudo))):
        raise ValueError("covariance entries must be finite")

    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - _swap(cov).conj())) > SYMMETRY_TOL * scale:
        raise ValueError("covariance is not Hermitian")
    if np.max(np.abs(pseudo - _swap(pseudo)), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("pseudo-covariance is not symmetric")

    total = cov + pseudo
    diff = cov - pseudo
    top = np.concatenate([total.real, -diff.imag], axis=-1)
    bottom = np.concatenate([total.imag, diff.real], axis=-1)
    lam = np.concatenate([top, bottom], axis=-2)
    lam = 0.5 * (lam + _swap(lam))

    return CompositeCovariance(lam=lam, cov=cov, pseudo=pseudo)


def pd_inverse(lam: CompositeCovariance | np.ndarray, counter: OpCounter | None = None,
               category: str = "inverse") -> np.ndarray:
    """Inverse of a (stack of) SPD matrices via Cholesky."""
    a = lam.lam if isinstance(lam, CompositeCovariance) else np.asarray(lam, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")

    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"Cholesky factorization failed: {e}") from e

    n = a.shape[-1]
    eye = np.broadcast_to(np.eye(n), a.shape)
    chol_inv = np.linalg.solve(chol, eye)
    inv = _swap(chol_inv) @ chol_inv
    inv = 0.5 * (inv + _swap(inv))

    if counter is not None:
        counter.add(category, _batch_count(a.shape, 2) * n ** 3)
    return inv


def symbol_contribution(h: np.ndarray, var: np.ndarray,
                        pseudo_var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Composite factors of one symbol's share of the covariance.

    Returns (G, Q) with G Q G^T == compose(var*h h^H, pseudo_var*h h^T).lam.
    G has shape (..., 2N_r, 2) and Q has shape (..., 2, 2).
    """
    h = np.asarray(h, dtype=complex)
    var = np.asarray(var, dtype=float)
    pseudo_var = np.asarray(pseudo_var, dtype=complex)

    col_re = np.concatenate([h.real, h.imag], axis=-1)
    col_im = np.concatenate([-h.imag, h.real], axis=-1)
    g = np.stack([col_re, col_im], axis=-1)

    q = np.empty(var.shape + (2, 2))
    q[..., 0, 0] = var + pseudo_var.real
    q[..., 0, 1] = pseudo_var.imag
    q[..., 1, 0] = pseudo_var.imag
    q[..., 1, 1] = var - pseudo_var.real
    return g, q


def low_rank_update(lam_inv: np.ndarray, h: np.ndarray, var: np.ndarray,
                    pseudo_var: np.ndarray, sign: float,
                    counter: OpCounter | None = None) -> np.ndarray:
    """
    Inverse after adding (sign=+1) or removing (sign=-1) one symbol's contribution.

    Woodbury in the form that never inverts Q, so rank-deficient
    contributions (real constellations, point masses) need no special case:
        (A + s G Q G^T)^-1 = A^-1 - s B (I + s Q K)^-1 Q B^T,
    with B = A^-1 G and K = G^T B.
    """
    lam_inv = np.asarray(lam_inv, dtype=float)
    g, q = symbol_contribution(h, var, pseudo_var)
    if g.shape[-2] != lam_inv.shape[-1]:
        raise ValueError(f"channel column length {g.shape[-2] // 2} does not match "
                         f"covariance size {lam_inv.shape[-1] // 2}")

    b = lam_inv @ g
    k = _swap(g) @ b
    core = np.eye(2) + sign * (q @ k)
    try:
        x = np.linalg.solve(core, q)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError("low-rank update is singular") from e

    bx = b @ x
    out = lam_inv - sign * (bx @ _swap(b))
    out = 0.5 * (out + _swap(out))

    diag = np.diagonal(out, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(out)) or np.any(diag <= 0.0):
        raise NotPositiveDefiniteError("updated inverse lost positive definiteness")

    if counter is not None:
        # 2x2 LU with two right-hand sides: 16
        ops = (matmul_ops(lam_inv, g) + matmul_ops(_swap(g), b) + matmul_ops(q, k)
               + _batch_count(core.shape, 2) * 16
               + matmul_ops(b, x) + matmul_ops(bx, _swap(b)) + 2 * out.size)
        counter.add("inverse", ops)
    return out


def downdate_inverse(lam_total_inv: np.ndarray, h: np.ndarray, var: np.ndarray,
                     pseudo_var: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """Remove symbol i's contribution from an inverse composite covariance."""
    return low_rank_update(lam_total_inv, h, var, pseudo_var, -1.0, counter)


def quadratic_form(w: np.ndarray, lam_inv: np.ndarray,
                   counter: OpCounter | None = None) -> np.ndarray:
    """
    -w^T lam_inv w for real composite vectors, broadcasting over batch dims.

    Args:
        w: (..., n) real
        lam_inv: (..., n, n) real symmetric, broadcastable against w

    Returns:
        (...,) array of non-positive metrics for SPD lam_inv
    """
    w = np.asarray(w, dtype=float)
    lam_inv = np.asarray(lam_inv, dtype=float)
    n = w.shape[-1]
    if lam_inv.shape[-1] != n or lam_inv.shape[-2] != n:
        raise ValueError(f"vector length {n} does not match matrix {lam_inv.shape[-2:]}")

    beta = -np.einsum("...j,...jk,...k->...", w, lam_inv, w)

    if counter is not None:
        counter.add("metric", _batch_count(w.shape, 1) * (n * n + n))
    return beta


def max_star(a, b, mode: LogSum | str = LogSum.EXACT):
    """
    Jacobian logarithm ln(e^a + e^b) and its approximations.

    -inf is the identity element in every mode.
    """
    mode = LogSum(mode)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    hi = np.maximum(a, b)
    if mode is LogSum.MAX_LOG:
        return hi

    with np.errstate(invalid="ignore"):
        gap = np.abs(a - b)
    gap = np.where(np.isnan(gap), np.inf, gap)

    if mode is LogSum.EXACT:
        return hi + np.log1p(np.exp(-gap))

    return hi + np.interp(gap, _CORRECTION_KNOTS, _CORRECTION_TABLE, right=0.0)


def max_star_maxlog(a, b):
    return max_star(a, b, LogSum.MAX_LOG)


def max_star_reduce(x: np.ndarray, axis: int = -1, mode: LogSum | str = LogSum.EXACT) -> np.ndarray:
    """Fold max_star along an axis in index order."""
    mode = LogSum(mode)
    x = np.asarray(x, dtype=float)
    if mode is LogSum.EXACT:
        return np.logaddexp.reduce(x, axis=axis)
    if mode is LogSum.MAX_LOG:
        return np.max(x, axis=axis)

    x = np.moveaxis(x, axis, 0)
    acc = x[0]
    for row in x[1:]:
        acc = max_star(acc, row, mode)
    return acc
