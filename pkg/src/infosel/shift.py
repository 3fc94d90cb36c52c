"""Vector scaling for label shift.

When only the label marginal differs between the training distribution and
the calibration/test distribution, the target posteriors are the training
posteriors re-weighted by per-class factors ``exp(b_k)``.  The offsets are
fitted by maximum likelihood on labelled target data subject to
``sum(b) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DidNotConverge, DimensionMismatch, NonFinite, TooFew

LOG_FLOOR = -30.0
B_BOUND = 15.0
GRAD_TOL = 1e-8
MAX_ITER = 10_000


@dataclass(frozen=True)
class ShiftCoefficients:
    b: np.ndarray
    converged: bool
    final_gradient_norm: float

    def to_json(self) -> dict:
        return {
            "b": [float(v) for v in self.b],
            "converged": bool(self.converged),
            "grad_norm": float(self.final_gradient_norm),
        }


def as_logits(rows, logits: bool = False) -> np.ndarray:
    """Logits from probability rows (``log p`` floored at ``LOG_FLOOR``) or pass-through."""
    Z = np.atleast_2d(np.asarray(rows, dtype=float))
    if logits:
        if not np.all(np.isfinite(Z)):
            raise NonFinite("logits must be finite")
        return Z
    if np.any(np.isnan(Z)) or np.any(Z < 0):
        raise NonFinite("probabilities must be nonnegative numbers")
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(Z), LOG_FLOOR)


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _logsumexp(Z):
    c = Z.max(axis=1)
    return c + np.log(np.exp(Z - c[:, None]).sum(axis=1))


def full_b(free) -> np.ndarray:
    """Complete ``K - 1`` free coordinates with the zero-sum coordinate."""
    free = np.asarray(free, dtype=float)
    return np.append(free, -free.sum()) + 0.0


def nll(b, Z, y) -> float:
    """Negative log-likelihood of 0-based labels ``y`` under offsets ``b``."""
    S = Z + b[None, :]
    return float(np.sum(_logsumexp(S) - S[np.arange(y.size), y]))


def nll_gradient(b, Z, y) -> np.ndarray:
    """Gradient in ``b``: predicted class mass minus label counts, centered.

    Centering projects onto the zero-sum hyperplane; without clipping the raw
    gradient already sums to zero.
    """
    K = Z.shape[1]
    g = _softmax(Z + b[None, :]).sum(axis=0) - np.bincount(y, minlength=K)
    return g - g.mean()


def _hessian_free(b, Z):
    """Hessian of the NLL in the ``K - 1`` free coordinates."""
    S = _softmax(Z + b[None, :])
    H = np.diag(S.sum(axis=0)) - S.T @ S
    K = b.size
    J = np.vstack([np.eye(K - 1), -np.ones((1, K - 1))])
    return J.T @ H @ J


def _newton_polish(free, Z, y, tol, steps=50):
    """Newton steps accepted only while they shrink the gradient norm.

    Near the optimum the objective stops changing in floating point, which
    stalls line searches on function values; the gradient still resolves.
    """
    def grad(f):
        g = nll_gradient(full_b(f), Z, y)
        return g[:-1] - g[-1], float(np.linalg.norm(g))

    gf, gn = grad(free)
    for _ in range(steps):
        if gn <= tol:
            break
        try:
            d = np.linalg.solve(_hessian_free(full_b(free), Z), gf)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-6:
            cand = np.clip(free - t * d, -B_BOUND, B_BOUND)
            gc, nc = grad(cand)
            if nc < gn:
                break
            t *= 0.5
        else:
            break
        free, gf, gn = cand, gc, nc
    return free


def fit_vector_scaling(rows, labels, *, logits: bool = False, tol: float = GRAD_TOL,
                       max_iter: int = MAX_ITER, strict: bool = True) -> ShiftCoefficients:
    """Maximum likelihood offsets ``b`` with ``sum(b) = 0``.

    Parameters
    ----------
    rows : array_like, shape (n, K)
        Training-model probabilities, or logits when ``logits=True``.
    labels : array_like of int
        1-based target labels.
    tol : float
        Required norm of the projected gradient.
    strict : bool
        Raise :class:`DidNotConverge` (carrying the best iterate) when the
        tolerance is missed; otherwise return it with ``converged=False``.

    Examples
    --------
    >>> fit_vector_scaling([[0.7, 0.3], [0.3, 0.7]], [1, 2]).b
    array([0., 0.])
    """
    Z = as_logits(rows, logits)
    n, K = Z.shape
    y = np.asarray(labels).astype(np.int64) - 1
    if y.shape != (n,):
        raise DimensionMismatch("one label per row is required")
    if n < K:
        raise TooFew(f"need at least K={K} rows, got {n}")
    if y.min() < 0 or y.max() >= K:
        raise DimensionMismatch(f"labels must be in 1..{K}")

    def fun(free):
        b = full_b(free)
        g = nll_gradient(b, Z, y)
        # chain rule through the last coordinate
        return nll(b, Z, y), g[:-1] - g[-1]

    res = minimize(
        fun, np.zeros(K - 1), jac=True, method="L-BFGS-B",
        bounds=[(-B_BOUND, B_BOUND)] * (K - 1),
        options={"maxiter": max_iter, "gtol": tol * 1e-2, "ftol": 0.0, "maxcor": 20},
    )
    b = full_b(_newton_polish(res.x, Z, y, tol))
    gn = float(np.linalg.norm(nll_gradient(b, Z, y)))
    out = ShiftCoefficients(b, gn <= tol, gn)
    if not out.converged and strict:
        raise DidNotConverge(
            f"gradient norm {gn:.3e} above {tol:.1e} after {res.nit} iterations "
            f"({res.message}); max |b| = {np.abs(b).max():.2f}",
            best=out,
        )
    return out


def apply_vector_scaling(probs, coeffs, *, logits: bool = False) -> np.ndarray:
    """Softmax of ``log p + b``; accepts one row or a matrix.

    Zero entries stay zero.

    >>> apply_vector_scaling([0.25, 0.25, 0.25, 0.25], np.log([0.1, 0.7, 0.1, 0.1]))
    array([0.1, 0.7, 0.1, 0.1])
    """
    b = np.asarray(getattr(coeffs, "b", coeffs), dtype=float)
    X = np.asarray(probs, dtype=float)
    one = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != b.size:
        raise DimensionMismatch(f"{X.shape[1]} columns but {b.size} coefficients")
    if logits:
        out = _softmax(X + b)
    else:
        W = X * np.exp(b - b.max())
        out = W / W.sum(axis=1, keepdims=True)
    return out[0] if one else out


def split_for_shift(cal_data, fraction: float, seed) -> tuple:
    """Seeded split of calibration indices into a shift-fit part and the rest.

    ``cal_data`` is a row count or anything with a length.  Returns sorted
    index arrays of sizes ``floor(fraction n)`` and ``n - floor(fraction n)``.

    >>> [len(p) for p in split_for_shift(500, 0.2, 1)]
    [100, 400]
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = int(cal_data) if np.isscalar(cal_data) else len(cal_data)
    k = math.floor(fraction * n + 1e-9)
    if k == 0 or k == n:
        raise TooFew(f"splitting {n} rows at fraction {fraction} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])
