"""Exact and approximate finite-alphabet least-squares solvers.

Three routes to min ||c - G z||^2 with z restricted entrywise to a finite
label set: exhaustive enumeration (the oracle), Schnorr-Euchner sphere
decoding over a triangularized system (exact, usually far cheaper), and
expectation propagation (near-optimal, polynomial cost).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .alphabets import Alphabet

BRUTE_FORCE_GUARD = 2**24

LAMBDA_FLOOR = 1e-8      # moment-matched precisions are clamped here
OMEGA_FLOOR = 1e-12      # tilted variances are floored to avoid blow-up
SIGMA2_FLOOR = 1e-12     # error-variance estimate kept away from zero


class SingularGramError(np.linalg.LinAlgError):
    """Gram matrix not factorizable; carries a suggested diagonal loading."""

    def __init__(self, suggested_ridge: float):
        self.suggested_ridge = suggested_ridge
        super().__init__(
            f"Gram matrix numerically singular; retry with ridge={suggested_ridge:g}"
        )


class SearchSpaceError(ValueError):
    """Exhaustive enumeration refused: label count ** dimension over guard."""


class EPNumericalError(RuntimeError):
    """Non-finite intermediate inside the EP loop."""

    def __init__(self, iteration: int, what: str):
        self.iteration = iteration
        super().__init__(f"EP produced non-finite {what} at iteration {iteration}")


@dataclass
class TriangularSystem:
    """min ||c - G z||^2 rewritten as min ||d - R z||^2 + constant_offset."""

    r: np.ndarray
    d: np.ndarray
    constant_offset: float
    ridge: float = 0.0


@dataclass
class SolveResult:
    z: np.ndarray
    objective: float
    nodes_visited: int = 0
    iterations: int = 0
    wall_time_s: float = 0.0
    truncated: bool = False
    diagnostics: Optional[dict] = None


@dataclass
class EPState:
    """Snapshot of the EP factor parameters and moments at one iteration."""

    lambda_diag: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    sigma_diag: np.ndarray
    sigma2_hat: float
    cavity_var: np.ndarray
    cavity_mean: np.ndarray
    tilted_mean: np.ndarray
    tilted_var: np.ndarray
    iteration: int


def suggested_ridge(gram: np.ndarray) -> float:
    """Default diagonal loading when a Gram factorization fails."""
    base = 1e-10 * float(np.real(np.trace(gram))) / max(gram.shape[0], 1)
    return base if base > 0 else 1e-12


def prepare_triangular(g: np.ndarray, c: np.ndarray, ridge: float = 0.0) -> TriangularSystem:
    """Cholesky reduction of ||c - G z||^2 to an upper-triangular system.

    With ridge = 0 the two objectives agree up to ``constant_offset``;
    a positive ridge regularizes the Gram matrix (adds ridge*||z||^2).
    Raises SingularGramError with a suggested ridge when factorization fails.
    """
    g = np.asarray(g)
    c = np.asarray(c)
    gram = g.conj().T @ g
    if ridge > 0:
        gram = gram + ridge * np.eye(gram.shape[0], dtype=gram.dtype)
    try:
        lower = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise SingularGramError(suggested_ridge(gram)) from None
    r = lower.conj().T
    d = solve_triangular(lower, g.conj().T @ c, lower=True)
    offset = float(np.real(np.vdot(c, c) - np.vdot(d, d)))
    return TriangularSystem(r=r, d=d, constant_offset=offset, ridge=ridge)


def realify(d: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stacked real form of a complex system; squared norms are preserved.

    Returns ([Re d; Im d], [[Re r, -Im r], [Im r, Re r]]).
    """
    d = np.asarray(d)
    r = np.asarray(r)
    d_r = np.concatenate([d.real, d.imag])
    r_r = np.block([[r.real, -r.imag], [r.imag, r.real]])
    return d_r, r_r


def residual_norm_sq(c: np.ndarray, g: np.ndarray, z: np.ndarray) -> float:
    diff = c - g @ z
    return float(np.real(np.vdot(diff, diff)))


def brute_force_ml(c: np.ndarray, g: np.ndarray, alphabet: Alphabet,
                   guard: int = BRUTE_FORCE_GUARD) -> SolveResult:
    """Global minimizer of ||c - G z||^2 by full enumeration.

    Ties resolve to the lexicographically smallest label-index vector.
    Refuses when |alphabet|^M exceeds ``guard``.
    """
    t0 = time.perf_counter()
    c = np.asarray(c)
    g = np.asarray(g)
    labels = alphabet.labels
    m = g.shape[1]
    n_cand = len(labels) ** m
    if n_cand > guard:
        raise SearchSpaceError(
            f"{len(labels)}^{m} = {n_cand} candidates exceeds guard {guard}"
        )
    best_obj = np.inf
    best_idx: Optional[np.ndarray] = None
    shape = (len(labels),) * m
    chunk = 1 << 16
    for start in range(0, n_cand, chunk):
        flat = np.arange(start, min(start + chunk, n_cand))
        idx = np.stack(np.unravel_index(flat, shape), axis=1)
        zc = labels[idx]
        resid = c[None, :] - zc @ g.T
        obj = np.einsum("ij,ij->i", resid, resid.conj()).real
        j = int(np.argmin(obj))
        if obj[j] < best_obj:
            best_obj = float(obj[j])
            best_idx = idx[j].copy()
    z = labels[best_idx]
    return SolveResult(
        z=z,
        objective=residual_norm_sq(c, g, z),
        nodes_visited=n_cand,
        wall_time_s=time.perf_counter() - t0,
    )


def _round_to_labels(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    idx = np.argmin(np.abs(values[:, None] - labels[None, :]), axis=1)
    return labels[idx]


def sesd_solve(system: TriangularSystem, alphabet: Alphabet,
               warm_starts: Sequence[np.ndarray] = ()) -> SolveResult:
    """Schnorr-Euchner sphere decoder: exact minimizer of ||d - R z||^2.

    Depth-first search over the label tree; at each level candidates are
    visited in order of increasing partial-residual increment, branches whose
    partial cost reaches the incumbent radius are pruned, and the radius
    tightens on every full-depth improvement. The incumbent is seeded from
    nearest-label rounding of the unconstrained triangular solve plus any
    ``warm_starts`` (which must be alphabet-member vectors); incumbents
    affect speed only, never optimality.
    """
    t0 = time.perf_counter()
    r = system.r
    d = system.d
    labels = alphabet.labels
    m = len(d)
    if m == 0:
        raise ValueError("empty system")
    dtype = np.result_type(r.dtype, d.dtype, labels.dtype)
    r = r.astype(dtype, copy=False)
    d = d.astype(dtype, copy=False)
    labels = labels.astype(dtype, copy=False)

    unconstrained = solve_triangular(r, d, lower=False)
    z_best = _round_to_labels(unconstrained, labels)
    best = residual_norm_sq(d, r, z_best)
    for cand in warm_starts:
        cand = np.asarray(cand, dtype=dtype)
        obj = residual_norm_sq(d, r, cand)
        if obj < best:
            best = obj
            z_best = cand.copy()

    diag = np.real(np.diag(r)).copy()
    cols = [r[:i, i].copy() for i in range(m)]
    z = np.zeros(m, dtype=dtype)
    nodes = 0

    def descend(level: int, y: np.ndarray, cost: float) -> None:
        nonlocal best, z_best, nodes
        increments = np.abs(y[level] - diag[level] * labels) ** 2
        for k in np.argsort(increments, kind="stable"):
            child = cost + increments[k]
            if child >= best:
                return  # sorted ascending: the rest only get worse
            nodes += 1
            z[level] = labels[k]
            if level == 0:
                best = child
                z_best = z.copy()
            else:
                descend(level - 1, y[:level] - cols[level] * labels[k], child)

    descend(m - 1, d.copy(), 0.0)
    return SolveResult(
        z=z_best,
        objective=best + system.constant_offset,
        nodes_visited=nodes,
        wall_time_s=time.perf_counter() - t0,
    )


def _robust_inverse(a: np.ndarray, iteration: int) -> np.ndarray:
    """Matrix inverse with relative jitter retries for extreme scalings.

    The likelihood precision can dwarf the factor precisions by enough that
    their diagonal contribution is absorbed in floating point, leaving an
    exactly singular matrix; a tiny relative jitter restores it.
    """
    if not np.all(np.isfinite(a)):
        raise EPNumericalError(iteration, "posterior precision")
    try:
        return np.linalg.inv(a)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.abs(np.diagonal(a)).max()) or 1.0
    jitter = 1e-14 * scale
    eye = np.eye(a.shape[0])
    while jitter <= 1e-3 * scale:
        try:
            return np.linalg.inv(a + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise EPNumericalError(iteration, "posterior covariance")


def ep_solve(c: np.ndarray, g: np.ndarray, alphabet: Alphabet,
             damping: float = 0.2, max_iter: int = 30, tol: float = 1e-4) -> SolveResult:
    """Expectation propagation for min ||c - G z||^2 over a finite alphabet.

    Iterates the Gaussian approximation of the discrete posterior: global
    moments, per-entry cavity moments, tilted moments over the labels,
    damped moment matching, and a residual-based refresh of the error
    variance. Runs complex-valued when inputs are complex, real-valued
    otherwise. Returns the best hard decision (entrywise nearest label to
    the posterior mean) observed across iterations.
    """
    t0 = time.perf_counter()
    if not 0.0 <= damping <= 1.0:
        raise ValueError(f"damping must be in [0, 1], got {damping}")
    c = np.asarray(c)
    g = np.asarray(g)
    labels = alphabet.labels
    complex_mode = np.iscomplexobj(g) or np.iscomplexobj(c) or np.iscomplexobj(labels)
    dtype = np.complex128 if complex_mode else np.float64
    c = c.astype(dtype, copy=False)
    g = g.astype(dtype, copy=False)
    labels = labels.astype(dtype, copy=False)
    m = g.shape[1]
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
        raise EPNumericalError(1, "inputs")

    gram = g.conj().T @ g
    gc = g.conj().T @ c
    eye = np.eye(m)

    lam = np.ones(m)
    gam = np.zeros(m, dtype=dtype)
    sigma2 = 1.0

    z_best = None
    best = np.inf
    mu_prev = None
    var_prev = None
    zeta = nu = rho = omega = None
    truncated = True
    iteration = 0

    for iteration in range(1, max_iter + 1):
        cov = _robust_inverse(gram / sigma2 + lam * eye, iteration)
        mu = cov @ (gc / sigma2 + gam)
        var = np.real(np.diag(cov))
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise EPNumericalError(iteration, "posterior moments")

        idx = np.argmin(np.abs(mu[:, None] - labels[None, :]), axis=1)
        z = labels[idx]
        obj = residual_norm_sq(c, g, z)
        if obj < best:
            best = obj
            z_best = z

        if mu_prev is not None:
            dm = np.linalg.norm(mu - mu_prev) / max(np.linalg.norm(mu_prev), 1e-30)
            dv = np.linalg.norm(var - var_prev) / max(np.linalg.norm(var_prev), 1e-30)
            if dm < tol and dv < tol:
                truncated = False
                break
        mu_prev = mu
        var_prev = var

        denom = np.maximum(1.0 - var * lam, 1e-12)
        zeta = np.maximum(var / denom, 1e-300)
        nu = zeta * (mu / var - gam)

        # subtract the per-row minimum before scaling so the best label sits at
        # log-weight 0 even when the cavity variance has collapsed
        sq = np.abs(labels[None, :] - nu[:, None]) ** 2
        sq -= sq.min(axis=1, keepdims=True)
        if complex_mode:
            logw = -sq / zeta[:, None]
        else:
            logw = -sq / (2.0 * zeta[:, None])
        w = np.exp(logw)
        w /= w.sum(axis=1, keepdims=True)
        rho = w @ labels
        omega = np.maximum(
            np.sum(w * np.abs(labels[None, :] - rho[:, None]) ** 2, axis=1), OMEGA_FLOOR
        )

        lam_new = 1.0 / omega - 1.0 / zeta
        gam_new = rho / omega - nu / zeta
        bad = lam_new <= LAMBDA_FLOOR
        lam_new = np.where(bad, LAMBDA_FLOOR, lam_new)
        gam_new = np.where(bad, gam, gam_new)
        lam = (1.0 - damping) * lam_new + damping * lam
        gam = (1.0 - damping) * gam_new + damping * gam

        sigma2 = max(residual_norm_sq(c, g, rho) / m, SIGMA2_FLOOR)
        if not np.isfinite(sigma2):
            raise EPNumericalError(iteration, "error variance")

    state = EPState(
        lambda_diag=lam, gamma=gam, mu=mu, sigma_diag=var, sigma2_hat=sigma2,
        cavity_var=zeta, cavity_mean=nu, tilted_mean=rho, tilted_var=omega,
        iteration=iteration,
    )
    return SolveResult(
        z=z_best,
        objective=best,
        iterations=iteration,
        wall_time_s=time.perf_counter() - t0,
        truncated=truncated,
        diagnostics={"state": state},
    )
