"""Discrete Monge-Ampere densities and the twisted slice solvers.

The density of a potential averages the determinants of the two
one-sided Hessian variants on 2-d grids (a single variant in 1-d).
Admissibility means every variant matrix is positive definite at every
grid point; solvers keep their iterates strictly inside that cone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import (
    ContinuityBreakdown,
    NoConvergence,
    NonAdmissible,
    NonAdmissibleStep,
    UnsupportedDimension,
    ValidationError,
)
from .grid import HessianField, PeriodicGrid, hessian

logger = logging.getLogger(__name__)

_MAX_HALVINGS = 50


# ---------------------------------------------------------------------------
# background data


@dataclass(frozen=True)
class BackgroundGeometry:
    """Problem data: grid, sign lam, class matrices A_i, and density f.

    ``A`` has shape (k, n, n) with each class matrix symmetric positive
    definite; ``f`` is a strictly positive field on the grid.
    """

    grid: PeriodicGrid
    lam: int
    A: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        problems = []
        if self.lam not in (-1, 1):
            problems.append(f"lambda must be -1 or +1, got {self.lam}")
        n = self.grid.n
        if self.A.ndim != 3 or self.A.shape[1:] != (n, n):
            problems.append(
                f"A must have shape (k, {n}, {n}), got {self.A.shape}"
            )
        elif self.A.shape[0] < 1:
            problems.append("at least one class matrix is required")
        else:
            for i, mat in enumerate(self.A):
                if not np.allclose(mat, mat.T, rtol=1e-12, atol=0.0):
                    problems.append(f"A_{i + 1} is not symmetric")
                elif np.linalg.eigvalsh(mat).min() <= 0.0:
                    problems.append(f"A_{i + 1} is not positive definite")
        if self.f.shape != self.grid.shape:
            problems.append(
                f"f has shape {self.f.shape}, expected {self.grid.shape}"
            )
        elif not np.all(np.isfinite(self.f)):
            problems.append("f contains non-finite values")
        elif self.f.min() <= 0.0:
            problems.append(f"f must be positive, min value {self.f.min()}")
        if problems:
            raise ValidationError(problems)

    @property
    def k(self) -> int:
        return self.A.shape[0]

    @property
    def volumes(self) -> np.ndarray:
        """Class volumes det(A_i); conserved by the density integral."""
        return np.array([float(np.linalg.det(mat)) for mat in self.A])


# ---------------------------------------------------------------------------
# mixed discriminants


def _det(mat: np.ndarray) -> float:
    return float(np.linalg.det(mat))


def mixed_discriminant(mats) -> float:
    """Mixed discriminant of n symmetric n-by-n matrices by polarization.

    Fully symmetric and multilinear, normalized so that all arguments
    equal gives back the plain determinant.  Supports n <= 3.
    """
    mats = [np.asarray(m, dtype=float) for m in mats]
    n = len(mats)
    for m in mats:
        if m.shape != (n, n):
            raise ValueError(
                f"expected {n} matrices of shape ({n}, {n}), got {m.shape}"
            )
        if not np.allclose(m, m.T, rtol=1e-12, atol=1e-12):
            raise ValueError("mixed discriminant needs symmetric inputs")
    if n == 1:
        return float(mats[0][0, 0])
    if n == 2:
        a, b = mats
        return 0.5 * (_det(a + b) - _det(a) - _det(b))
    if n == 3:
        a, b, c = mats
        total = _det(a + b + c)
        pairs = _det(a + b) + _det(a + c) + _det(b + c)
        singles = _det(a) + _det(b) + _det(c)
        return (total - pairs + singles) / 6.0
    raise UnsupportedDimension(
        f"mixed discriminants implemented for n <= 3, got n={n}"
    )


# ---------------------------------------------------------------------------
# densities and admissibility


def _variant_dets(grid, A, hess: HessianField):
    """Determinants of A + H for each one-sided Hessian variant."""
    if grid.n == 1:
        return [A[0, 0] + hess.diag[0]]
    m00 = A[0, 0] + hess.diag[0]
    m11 = A[1, 1] + hess.diag[1]
    dets = []
    for q in (hess.mixed_plus, hess.mixed_minus):
        off = A[0, 1] + q
        dets.append(m00 * m11 - off * off)
    return dets


def ma_density(grid, A, psi=None, hess=None) -> np.ndarray:
    """Discrete Monge-Ampere density det(A + D^2 psi).

    On 2-d grids this is the average of the two one-sided variant
    determinants.  The value can be negative for non-admissible fields;
    use :func:`is_admissible` to test cone membership.
    """
    A = np.asarray(A, dtype=float)
    if hess is None:
        hess = hessian(grid, psi)
    dets = _variant_dets(grid, A, hess)
    return sum(dets) / len(dets)


def admissibility_margin(grid, A, psi=None, hess=None) -> float:
    """Smallest eigenvalue of any variant matrix A + H over the grid."""
    A = np.asarray(A, dtype=float)
    if hess is None:
        hess = hessian(grid, psi)
    if grid.n == 1:
        return float((A[0, 0] + hess.diag[0]).min())
    m00 = A[0, 0] + hess.diag[0]
    m11 = A[1, 1] + hess.diag[1]
    margin = np.inf
    for q in (hess.mixed_plus, hess.mixed_minus):
        off = A[0, 1] + q
        tr = m00 + m11
        det = m00 * m11 - off * off
        disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
        margin = min(margin, float((0.5 * (tr - disc)).min()))
    return margin


def is_admissible(grid, A, psi=None, hess=None) -> bool:
    return admissibility_margin(grid, A, psi=psi, hess=hess) > 0.0


@dataclass(frozen=True)
class AdmissiblePotential:
    """A potential together with its cached Hessian and class index."""

    index: int
    psi: np.ndarray
    hess: HessianField

    @classmethod
    def create(cls, grid, A, index, psi):
        psi = np.asarray(psi, dtype=float)
        hess = hessian(grid, psi)
        if not is_admissible(grid, A, hess=hess):
            raise NonAdmissible(
                f"potential for class {index + 1} leaves the positivity cone"
            )
        return cls(index=index, psi=psi, hess=hess)


@dataclass
class SolveReport:
    """Outcome record of one twisted slice solve."""

    outcome: str
    newton_iterations: int
    damping_factors: list
    residual: float
    continuity_trace: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    c: float = float("nan")


# ---------------------------------------------------------------------------
# sparse stencil operators

_SHIFT_CACHE: dict = {}


def _shift_matrix(grid: PeriodicGrid, offset) -> sp.csr_matrix:
    """Sparse matrix of u(x) -> u(x + offset) on the flat C-ordered field."""
    key = (grid.n, grid.N, tuple(offset))
    cached = _SHIFT_CACHE.get(key)
    if cached is not None:
        return cached
    idx = np.arange(grid.num_points).reshape(grid.shape)
    cols = idx
    for axis, step in enumerate(offset):
        cols = np.roll(cols, -step, axis=axis)
    mat = sp.csr_matrix(
        (
            np.ones(grid.num_points),
            (idx.ravel(), cols.ravel()),
        ),
        shape=(grid.num_points, grid.num_points),
    )
    _SHIFT_CACHE[key] = mat
    return mat


def _stencil_matrix(grid, terms) -> sp.csr_matrix:
    out = None
    for offset, coeff in terms:
        piece = coeff * _shift_matrix(grid, offset)
        out = piece if out is None else out + piece
    return (out / grid.h**2).tocsr()


def _operator_matrices(grid: PeriodicGrid) -> dict:
    """Second-difference and skew-mixed stencils as sparse matrices."""
    key = ("ops", grid.n, grid.N)
    cached = _SHIFT_CACHE.get(key)
    if cached is not None:
        return cached
    ops = {}
    if grid.n == 1:
        ops["d0"] = _stencil_matrix(grid, [((1,), 1.0), ((-1,), 1.0), ((0,), -2.0)])
    else:
        ops["d0"] = _stencil_matrix(
            grid, [((1, 0), 1.0), ((-1, 0), 1.0), ((0, 0), -2.0)]
        )
        ops["d1"] = _stencil_matrix(
            grid, [((0, 1), 1.0), ((0, -1), 1.0), ((0, 0), -2.0)]
        )
        ops["qp"] = _stencil_matrix(
            grid,
            [((1, 1), 1.0), ((1, 0), -1.0), ((0, 1), -1.0), ((0, 0), 1.0)],
        )
        ops["qm"] = _stencil_matrix(
            grid,
            [((0, 0), 1.0), ((-1, 0), -1.0), ((0, -1), -1.0), ((-1, -1), 1.0)],
        )
    _SHIFT_CACHE[key] = ops
    return ops


def log_ma_linearization(grid, A, psi=None, hess=None) -> sp.csr_matrix:
    """Sparse derivative of log ma_density at the given admissible field.

    This is the operator L in the Newton systems; it annihilates
    constants and is negative semidefinite on admissible backgrounds.
    """
    A = np.asarray(A, dtype=float)
    if hess is None:
        hess = hessian(grid, psi)
    dens = ma_density(grid, A, hess=hess)
    if dens.min() <= 0.0:
        raise NonAdmissible("cannot linearize at a non-admissible field")
    ops = _operator_matrices(grid)
    inv = (1.0 / dens).ravel()
    if grid.n == 1:
        return (sp.diags(inv) @ ops["d0"]).tocsr()
    m00 = (A[0, 0] + hess.diag[0]).ravel()
    m11 = (A[1, 1] + hess.diag[1]).ravel()
    qp = (A[0, 1] + hess.mixed_plus).ravel()
    qm = (A[0, 1] + hess.mixed_minus).ravel()
    mat = (
        sp.diags(inv * m11) @ ops["d0"]
        + sp.diags(inv * m00) @ ops["d1"]
        - sp.diags(inv * qp) @ ops["qp"]
        - sp.diags(inv * qm) @ ops["qm"]
    )
    return mat.tocsr()


# ---------------------------------------------------------------------------
# Newton machinery


def newton_step(grid, A, lam, rhs, phi, s=0.0, t=1.0):
    """One Newton direction for the log-form slice residual.

    For lam=-1 the unknown is the unnormalized potential phi with
    residual log ma_density(A, phi) - phi - rhs; the multiplicative
    constant is absorbed into phi, which eliminates it in closed form.
    Returns (delta_phi, 0.0, predicted_residual).

    For lam=+1 the residual is log ma_density + t*phi - rhs - s with the
    mean-zero constraint bordered in as an extra row and the constant s
    as the matching extra unknown.  Returns (delta_phi, delta_s,
    predicted_residual).
    """
    phi = np.asarray(phi, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    hess = hessian(grid, phi)
    if not is_admissible(grid, A, hess=hess):
        raise NonAdmissible("newton_step requires an admissible iterate")
    dens = ma_density(grid, A, hess=hess)
    lin = log_ma_linearization(grid, A, hess=hess)
    P = grid.num_points
    if lam == -1:
        res = np.log(dens) - phi - rhs
        jac = (lin - sp.identity(P)).tocsc()
        delta = spsolve(jac, -res.ravel()).reshape(grid.shape)
        predicted = float(
            np.abs(res.ravel() + jac @ delta.ravel()).max()
        )
        return delta, 0.0, predicted
    if lam != 1:
        raise ValueError(f"lambda must be -1 or +1, got {lam}")
    res = np.log(dens) + t * phi - rhs - s
    ones = np.ones((P, 1))
    jac = sp.bmat(
        [
            [lin + t * sp.identity(P), -ones],
            [ones.T / P, None],
        ],
        format="csc",
    )
    full_res = np.concatenate([res.ravel(), [phi.mean()]])
    sol = spsolve(jac, -full_res)
    delta = sol[:P].reshape(grid.shape)
    delta_s = float(sol[P])
    predicted = float(np.abs(full_res + jac @ sol).max())
    return delta, delta_s, predicted


def _line_search(grid, A, phi, delta, res_norm, eval_residual):
    """Backtrack until the iterate stays admissible and the residual drops."""
    alpha = 1.0
    saw_admissible = False
    for _ in range(_MAX_HALVINGS):
        cand = phi + alpha * delta
        hess = hessian(grid, cand)
        if is_admissible(grid, A, hess=hess):
            saw_admissible = True
            res = eval_residual(cand, hess)
            norm = float(np.abs(res).max())
            if norm <= (1.0 - 0.25 * alpha) * res_norm:
                return cand, hess, res, norm, alpha
        alpha *= 0.5
    if not saw_admissible:
        raise NonAdmissibleStep(
            "no damping factor keeps the Newton iterate admissible"
        )
    raise NoConvergence("Newton line search failed to reduce the residual")


def _solve_monotone(grid, A, rhs, tol, phi0, max_newton):
    """Damped Newton for log ma_density(phi) - phi - rhs = 0 (lam = -1)."""

    def eval_residual(cand, hess):
        return np.log(ma_density(grid, A, hess=hess)) - cand - rhs

    phi = np.asarray(phi0, dtype=float).copy()
    hess = hessian(grid, phi)
    if not is_admissible(grid, A, hess=hess):
        raise NonAdmissible("monotone solve needs an admissible start")
    res = eval_residual(phi, hess)
    norm = float(np.abs(res).max())
    history = [norm]
    dampings = []
    P = grid.num_points
    for iteration in range(max_newton):
        if norm <= tol:
            return phi, iteration, dampings, history
        lin = log_ma_linearization(grid, A, hess=hess)
        jac = (lin - sp.identity(P)).tocsc()
        delta = spsolve(jac, -res.ravel()).reshape(grid.shape)
        phi, hess, res, norm, alpha = _line_search(
            grid, A, phi, delta, norm, eval_residual
        )
        dampings.append(alpha)
        history.append(norm)
    raise NoConvergence(
        f"monotone Newton stalled at residual {norm:.3e} after {max_newton} iterations"
    )


def _solve_bordered(grid, A, rhs, t, tol, phi0, s0, max_newton):
    """Damped Newton for log ma_density + t*phi - rhs - s = 0, mean phi = 0."""
    phi = np.asarray(phi0, dtype=float).copy()
    phi = phi - phi.mean()
    s = float(s0)
    hess = hessian(grid, phi)
    if not is_admissible(grid, A, hess=hess):
        raise NonAdmissible("bordered solve needs an admissible start")
    P = grid.num_points
    ones = np.ones((P, 1))

    def residual(cand_phi, cand_s, hess):
        return np.log(ma_density(grid, A, hess=hess)) + t * cand_phi - rhs - cand_s

    res = residual(phi, s, hess)
    norm = float(np.abs(res).max())
    history = [norm]
    dampings = []
    for iteration in range(max_newton):
        if norm <= tol:
            return phi, s, iteration, dampings, history
        lin = log_ma_linearization(grid, A, hess=hess)
        jac = sp.bmat(
            [[lin + t * sp.identity(P), -ones], [ones.T / P, None]],
            format="csc",
        )
        full_res = np.concatenate([res.ravel(), [phi.mean()]])
        sol = spsolve(jac, -full_res)
        delta = sol[:P].reshape(grid.shape)
        delta_s = float(sol[P])

        alpha = 1.0
        accepted = False
        saw_admissible = False
        for _ in range(_MAX_HALVINGS):
            cand_phi = phi + alpha * delta
            cand_s = s + alpha * delta_s
            cand_hess = hessian(grid, cand_phi)
            if is_admissible(grid, A, hess=cand_hess):
                saw_admissible = True
                cand_res = residual(cand_phi, cand_s, cand_hess)
                cand_norm = float(np.abs(cand_res).max())
                if cand_norm <= (1.0 - 0.25 * alpha) * norm:
                    phi, s, hess = cand_phi, cand_s, cand_hess
                    res, norm = cand_res, cand_norm
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if not saw_admissible:
                raise NonAdmissibleStep(
                    "no damping factor keeps the bordered iterate admissible"
                )
            raise NoConvergence(
                "bordered Newton line search failed to reduce the residual"
            )
        dampings.append(alpha)
        history.append(norm)
    raise NoConvergence(
        f"bordered Newton stalled at residual {norm:.3e} after {max_newton} iterations"
    )


# ---------------------------------------------------------------------------
# public slice solvers


def _normalize(phi, mode):
    """Return (psi, shift) with psi = phi - shift in the requested gauge."""
    if mode == "sup":
        shift = float(phi.max())
    elif mode == "mean":
        shift = float(phi.mean())
    else:
        raise ValueError(f"unknown norm_mode {mode!r}")
    return phi - shift, shift


def _finalize(geom, index, g, phi, mode, tol_inner, report):
    """Normalize, recompute the compatibility constant, record the residual."""
    grid = geom.grid
    A = geom.A[index]
    psi, _ = _normalize(phi, mode)
    hess = hessian(grid, psi)
    dens = ma_density(grid, A, hess=hess)
    weight = np.exp(-geom.lam * (psi + g)) * geom.f
    c = grid.integrate(dens) / grid.integrate(weight)
    residual = float(
        np.abs(np.log(dens) - np.log(c) + geom.lam * (psi + g) - np.log(geom.f)).max()
    )
    if residual > tol_inner:
        raise NoConvergence(
            f"slice residual {residual:.3e} above tol_inner {tol_inner:.3e} "
            "after constant compatibility update"
        )
    report.residual = residual
    report.c = c
    potential = AdmissiblePotential(index=index, psi=psi, hess=hess)
    return potential, report


def solve_tke(geom, index, g, *, tol_inner=1e-10, max_newton=40,
              norm_mode="sup", warm_start=None):
    """Solve one twisted slice equation for class ``index``.

    The equation in the density form is

        ma_density(A_i, psi) = c * exp(-lam * (psi + g)) * f,

    solved in log form to the sup-norm tolerance ``tol_inner``.  The
    constant c is recomputed from the exact volume compatibility
    identity before the final residual is recorded.  Returns
    (AdmissiblePotential, SolveReport).
    """
    grid = geom.grid
    A = geom.A[index]
    g = np.asarray(g, dtype=float)
    if g.shape != grid.shape:
        raise ValueError("coupling field g has wrong shape")
    if not np.all(np.isfinite(g)):
        raise ValueError("coupling field g must be finite")
    inner_tol = 0.25 * tol_inner
    log_f = np.log(geom.f)

    if geom.lam == -1:
        rhs = g + log_f
        phi0 = np.zeros(grid.shape)
        if warm_start is not None and is_admissible(grid, A, warm_start):
            phi0 = np.asarray(warm_start, dtype=float)
        phi, iters, dampings, history = _solve_monotone(
            grid, A, rhs, inner_tol, phi0, max_newton
        )
        report = SolveReport(
            outcome="converged",
            newton_iterations=iters,
            damping_factors=dampings,
            residual=float("nan"),
            residual_history=history,
        )
        return _finalize(geom, index, g, phi, norm_mode, tol_inner, report)

    # lam = +1: try a direct solve from the warm start, else walk the path.
    rhs = log_f - g
    if warm_start is not None and is_admissible(grid, A, warm_start):
        phi0 = np.asarray(warm_start, dtype=float)
        phi0 = phi0 - phi0.mean()
        s0 = float((np.log(ma_density(grid, A, phi0)) + phi0 - rhs).mean())
        try:
            phi, s, iters, dampings, history = _solve_bordered(
                grid, A, rhs, 1.0, inner_tol, phi0, s0, max_newton=20
            )
            report = SolveReport(
                outcome="converged",
                newton_iterations=iters,
                damping_factors=dampings,
                residual=float("nan"),
                continuity_trace=[(1.0, iters)],
                residual_history=history,
            )
            return _finalize(
                geom, index, g, phi, norm_mode, tol_inner, report
            )
        except (NoConvergence, NonAdmissibleStep):
            logger.debug(
                "direct positive-sign solve failed for class %d; "
                "falling back to the continuity path",
                index + 1,
            )
    return continuity_solve(
        geom, index, g,
        tol_inner=tol_inner, max_newton=max_newton, norm_mode=norm_mode,
    )


def continuity_solve(geom, index, g, *, tol_inner=1e-10, max_newton=40,
                     norm_mode="sup"):
    """Reach the lam=+1 slice solution along the parameter path t: 0 -> 1.

    Each rung solves log ma_density + t*psi = t*(log f - g) + (1-t)*0 ...
    more precisely the homotopy keeps the full right-hand side and
    scales only the zeroth-order coefficient:

        log ma_density(A_i, phi) + t * phi = log f - g + s,  mean phi = 0.

    The step starts at 0.1, doubles after success (capped), halves on
    failure, and aborts with ContinuityBreakdown below 1e-4.
    """
    if geom.lam != 1:
        raise ValueError("continuity path applies to lam = +1 problems")
    grid = geom.grid
    A = geom.A[index]
    g = np.asarray(g, dtype=float)
    rhs = np.log(geom.f) - g
    inner_tol = 0.25 * tol_inner

    trace = []
    total_iters = 0
    all_dampings = []
    # t = 0 rung: the Calabi-Yau-type equation, solvable from zero.
    phi, s, iters, dampings, history = _solve_bordered(
        grid, A, rhs, 0.0, inner_tol, np.zeros(grid.shape), 0.0, max_newton
    )
    trace.append((0.0, iters))
    total_iters += iters
    all_dampings.extend(dampings)

    t_cur = 0.0
    dt = 0.1
    while t_cur < 1.0:
        t_try = min(1.0, t_cur + dt)
        try:
            phi_new, s_new, iters, dampings, history = _solve_bordered(
                grid, A, rhs, t_try, inner_tol, phi, s, max_newton
            )
        except (NoConvergence, NonAdmissibleStep):
            dt *= 0.5
            if dt < 1e-4:
                raise ContinuityBreakdown(
                    f"continuity path for class {index + 1} stalled at "
                    f"t = {t_cur:.6f} with step below 1e-4",
                    last_good_t=t_cur,
                    trace=trace,
                )
            continue
        phi, s = phi_new, s_new
        t_cur = t_try
        trace.append((t_try, iters))
        total_iters += iters
        all_dampings.extend(dampings)
        dt = min(dt * 2.0, 0.25)

    report = SolveReport(
        outcome="converged",
        newton_iterations=total_iters,
        damping_factors=all_dampings,
        residual=float("nan"),
        continuity_trace=trace,
        residual_history=history,
    )
    return _finalize(geom, index, g, phi, norm_mode, tol_inner, report)


def solve_calabi_yau(grid, A, rho, *, tol_inner=1e-10, max_newton=40):
    """Solve ma_density(A, psi) = c * rho with mean(psi) = 0.

    ``rho`` must be strictly positive; c comes out as the volume ratio
    integrate(ma_density) / integrate(rho).  Returns
    (AdmissiblePotential, c, SolveReport).
    """
    A = np.asarray(A, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != grid.shape:
        raise ValueError("target density has wrong shape")
    if rho.min() <= 0.0 or not np.all(np.isfinite(rho)):
        raise ValueError("target density must be positive and finite")
    inner_tol = 0.25 * tol_inner
    phi, s, iters, dampings, history = _solve_bordered(
        grid, A, np.log(rho), 0.0, inner_tol, np.zeros(grid.shape), 0.0,
        max_newton,
    )
    hess = hessian(grid, phi)
    dens = ma_density(grid, A, hess=hess)
    c = grid.integrate(dens) / grid.integrate(rho)
    residual = float(np.abs(np.log(dens) - np.log(c) - np.log(rho)).max())
    if residual > tol_inner:
        raise NoConvergence(
            f"volume-form residual {residual:.3e} above tol {tol_inner:.3e}"
        )
    report = SolveReport(
        outcome="converged",
        newton_iterations=iters,
        damping_factors=dampings,
        residual=residual,
        residual_history=history,
        c=c,
    )
    potential = AdmissiblePotential(index=0, psi=phi, hess=hess)
    return potential, c, report
