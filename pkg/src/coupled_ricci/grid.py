"""Periodic grids on the unit torus and the discrete calculus on them.

Fields are plain numpy arrays shaped like ``grid.shape``; the flat order
used for files and stacked linear algebra is C (lexicographic) order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, ParseError, UnsupportedDimension

_FIELD_HEADER = re.compile(r"^CRI-FIELD v1 n=(\d+) N=(\d+)\s*$")


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on [0,1)^n with N points per axis."""

    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise UnsupportedDimension(
                f"grid dimension must be 1 or 2, got {self.n}"
            )
        if self.N < 4 or self.N % 2 != 0:
            raise ValueError(f"N must be an even integer >= 4, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def num_points(self) -> int:
        return self.N**self.n

    def coords(self) -> tuple:
        """Return per-axis coordinate arrays broadcast to ``self.shape``."""
        axes = np.meshgrid(
            *[np.arange(self.N) * self.h for _ in range(self.n)],
            indexing="ij",
        )
        return tuple(axes)

    def integrate(self, values: np.ndarray) -> float:
        """Exact torus quadrature: h^n times the sum over grid points."""
        values = np.asarray(values)
        if values.shape != self.shape:
            raise ValueError(
                f"field shape {values.shape} does not match grid {self.shape}"
            )
        return float(values.sum() * self.h**self.n)

    def mean(self, values: np.ndarray) -> float:
        return self.integrate(values)  # the torus has unit volume

    def second_diff(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Centered second difference along one axis."""
        return (
            np.roll(values, -1, axis=axis)
            + np.roll(values, 1, axis=axis)
            - 2.0 * values
        ) / self.h**2

    def forward_skew(self, values: np.ndarray) -> np.ndarray:
        """Mixed difference from composed forward first differences (n=2)."""
        if self.n != 2:
            raise ValueError("mixed differences need a 2-d grid")
        shifted_both = np.roll(np.roll(values, -1, axis=0), -1, axis=1)
        return (
            shifted_both
            - np.roll(values, -1, axis=0)
            - np.roll(values, -1, axis=1)
            + values
        ) / self.h**2

    def backward_skew(self, values: np.ndarray) -> np.ndarray:
        """Mixed difference from composed backward first differences (n=2)."""
        if self.n != 2:
            raise ValueError("mixed differences need a 2-d grid")
        shifted_both = np.roll(np.roll(values, 1, axis=0), 1, axis=1)
        return (
            values
            - np.roll(values, 1, axis=0)
            - np.roll(values, 1, axis=1)
            + shifted_both
        ) / self.h**2


@dataclass(frozen=True)
class HessianField:
    """Discrete Hessian data of a scalar field.

    ``diag`` stacks the centered second differences along each axis,
    shape (n, *grid.shape).  On 2-d grids the mixed entry is carried in
    two one-sided variants (forward/forward and backward/backward); the
    centered mixed value is their average.  Quantities built from the
    Hessian average over the two variants, which keeps the discrete
    integration-by-parts identities exact.
    """

    grid: PeriodicGrid
    diag: np.ndarray
    mixed_plus: np.ndarray | None = None
    mixed_minus: np.ndarray | None = None

    @property
    def mixed_centered(self) -> np.ndarray | None:
        if self.mixed_plus is None:
            return None
        return 0.5 * (self.mixed_plus + self.mixed_minus)

    def trace(self) -> np.ndarray:
        return self.diag.sum(axis=0)

    def matrix(self) -> np.ndarray:
        """Per-point symmetric matrix with the centered mixed entry.

        Shape (*grid.shape, n, n).
        """
        n = self.grid.n
        out = np.zeros(self.grid.shape + (n, n))
        for a in range(n):
            out[..., a, a] = self.diag[a]
        if n == 2:
            q = self.mixed_centered
            out[..., 0, 1] = q
            out[..., 1, 0] = q
        return out

    def variant_matrices(self) -> list:
        """The one-sided Hessian variants as per-point symmetric matrices.

        n=1 has a single variant (no mixed entry); n=2 has two.
        """
        n = self.grid.n
        if n == 1:
            return [self.matrix()]
        variants = []
        for q in (self.mixed_plus, self.mixed_minus):
            m = np.zeros(self.grid.shape + (2, 2))
            m[..., 0, 0] = self.diag[0]
            m[..., 1, 1] = self.diag[1]
            m[..., 0, 1] = q
            m[..., 1, 0] = q
            variants.append(m)
        return variants


def hessian(grid: PeriodicGrid, values: np.ndarray) -> HessianField:
    """Discrete Hessian of a scalar field on the torus."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(
            f"field shape {values.shape} does not match grid {grid.shape}"
        )
    diag = np.stack([grid.second_diff(values, a) for a in range(grid.n)])
    if grid.n == 1:
        return HessianField(grid, diag)
    return HessianField(
        grid,
        diag,
        mixed_plus=grid.forward_skew(values),
        mixed_minus=grid.backward_skew(values),
    )


def solve_mean_zero_linear(grid, apply_L, rhs, rel_tol=1e-10, max_iter=None):
    """Solve L x = rhs for mean-zero x, L symmetric negative definite there.

    ``apply_L`` is a callable mapping fields to fields.  Conjugate
    gradients run on the negated operator restricted to the mean-zero
    subspace; both the right-hand side and every iterate are projected.
    Raises NoConvergence if the relative residual fails to reach
    ``rel_tol`` within the iteration budget.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != grid.shape:
        raise ValueError("rhs shape does not match grid")
    if max_iter is None:
        max_iter = 20 * grid.num_points

    def project(v):
        return v - v.mean()

    b = project(-rhs)
    b_norm = np.linalg.norm(b.ravel())
    x = np.zeros(grid.shape)
    if b_norm == 0.0:
        return x
    r = b.copy()
    p = r.copy()
    rr = float((r * r).sum())
    for _ in range(max_iter):
        Ap = project(-apply_L(p))
        pAp = float((p * Ap).sum())
        if pAp <= 0.0:
            raise NoConvergence(
                "operator is not negative definite on mean-zero fields"
            )
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float((r * r).sum())
        if np.sqrt(rr_new) <= rel_tol * b_norm:
            x = project(x)
            return x
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise NoConvergence(
        f"projected CG did not reach rel_tol={rel_tol} in {max_iter} iterations"
    )


def write_field(path, grid: PeriodicGrid, values: np.ndarray) -> None:
    """Write a scalar field in the CRI-FIELD v1 text format.

    Values go one per line in C (lexicographic) order at 17 significant
    digits, which round-trips float64 exactly.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    with open(path, "w") as fh:
        fh.write(f"CRI-FIELD v1 n={grid.n} N={grid.N}\n")
        for v in values.ravel(order="C"):
            fh.write("%.17g\n" % v)


def read_field(path):
    """Read a CRI-FIELD v1 file; returns (PeriodicGrid, values)."""
    with open(path) as fh:
        header = fh.readline()
        match = _FIELD_HEADER.match(header)
        if not match:
            raise ParseError(f"{path}: bad or missing CRI-FIELD header")
        n, N = int(match.group(1)), int(match.group(2))
        tokens = fh.read().split()
    try:
        grid = PeriodicGrid(n=n, N=N)
    except (UnsupportedDimension, ValueError) as exc:
        raise ParseError(f"{path}: invalid grid in header: {exc}") from exc
    if len(tokens) != grid.num_points:
        raise ParseError(
            f"{path}: expected {grid.num_points} values, found {len(tokens)}"
        )
    try:
        flat = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric value: {exc}") from exc
    if not np.all(np.isfinite(flat)):
        raise ParseError(f"{path}: field contains non-finite values")
    return grid, flat.reshape(grid.shape)
