"""
Exact Cauchy-matrix algebra and the coefficient families c_j, d_j.

Every value in this module is a ``fractions.Fraction``; floats are refused at
the boundary so that the identities below are checked with zero residual.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import pandas

logger = logging.getLogger(__name__)

RationalLike = Union[int, Fraction, str]
RationalMatrix = List[List[Fraction]]


def _as_rational(value: RationalLike) -> Fraction:
    if isinstance(value, bool) or isinstance(value, float):
        raise TypeError(f"Exact arithmetic only: got {type(value).__name__} value {value!r}")
    return Fraction(value)


@dataclass(frozen=True)
class CauchyMatrix:
    x: Tuple[Fraction, ...]
    y: Tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(_as_rational(v) for v in self.x))
        object.__setattr__(self, "y", tuple(_as_rational(v) for v in self.y))
        if len(self.x) != len(self.y):
            raise ValueError(f"Cauchy nodes must have equal length, got {len(self.x)} and {len(self.y)}")
        if len(set(self.x)) != len(self.x):
            raise ValueError(f"x nodes must be distinct: {[str(v) for v in self.x]}")
        if len(set(self.y)) != len(self.y):
            raise ValueError(f"y nodes must be distinct: {[str(v) for v in self.y]}")
        for i, xi in enumerate(self.x):
            for j, yj in enumerate(self.y):
                if xi == yj:
                    raise ValueError(f"Coincident Cauchy nodes at (i, j) = ({i}, {j}): x_i = y_j = {xi}")

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def entries(self) -> RationalMatrix:
        return [[1 / (xi - yj) for yj in self.y] for xi in self.x]

    def leading(self, m: int) -> "CauchyMatrix":
        """Leading m x m block, itself a Cauchy matrix on the first m nodes."""
        return CauchyMatrix(self.x[:m], self.y[:m])


@dataclass(frozen=True)
class CoefficientFamily:
    dim: int
    k: int
    ktilde: int
    c: Tuple[Fraction, ...]
    dvec: Tuple[Fraction, ...]


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    dim: int
    index: Optional[int]
    residual: Fraction

    @property
    def holds(self) -> bool:
        return self.residual == 0


@dataclass(frozen=True)
class IdentityReport:
    dim: int
    checks: Tuple[IdentityCheck, ...] = field(default_factory=tuple)

    @property
    def all_hold(self) -> bool:
        return all(check.holds for check in self.checks)

    @property
    def failures(self) -> List[IdentityCheck]:
        return [check for check in self.checks if not check.holds]


def cauchy_entry(x: Sequence[RationalLike], y: Sequence[RationalLike]) -> RationalMatrix:
    """
    Builds the Cauchy matrix a_ij = 1/(x_i - y_j).

    Raises:
        ValueError: if the nodes repeat or some x_i equals some y_j; the message names (i, j).
    """
    return CauchyMatrix(tuple(x), tuple(y)).entries


def cauchy_determinant(matrix: CauchyMatrix) -> Fraction:
    x, y, m = matrix.x, matrix.y, matrix.size
    numerator = Fraction(1)
    for i in range(m):
        for j in range(i + 1, m):
            numerator *= (x[i] - x[j]) * (y[j] - y[i])
    denominator = Fraction(1)
    for xi in x:
        for yj in y:
            denominator *= xi - yj
    return numerator / denominator


def lagrange_basis(nodes: Sequence[Fraction], i: int, point: Fraction) -> Fraction:
    """Value at ``point`` of the i-th Lagrange polynomial of ``nodes``."""
    value = Fraction(1)
    for l, node in enumerate(nodes):
        if l != i:
            value *= (point - node) / (nodes[i] - node)
    return value


def cauchy_inverse(matrix: CauchyMatrix) -> RationalMatrix:
    """
    Explicit inverse b_ij = (x_j - y_i) A_j(y_i) B_i(x_j), with A_j, B_i the Lagrange
    polynomials of the x and y nodes.
    """
    x, y, m = matrix.x, matrix.y, matrix.size
    return [
        [(x[j] - y[i]) * lagrange_basis(x, j, y[i]) * lagrange_basis(y, i, x[j]) for j in range(m)]
        for i in range(m)
    ]


def matmul(a: RationalMatrix, b: RationalMatrix) -> RationalMatrix:
    return [[sum((a[i][l] * b[l][j] for l in range(len(b))), Fraction(0)) for j in range(len(b[0]))] for i in range(len(a))]


def _check_dimension(d: int):
    if isinstance(d, bool) or not isinstance(d, int):
        raise ValueError(f"Dimension must be an integer, got {d!r}")
    if d < 3 or d % 2 == 0:
        raise ValueError(f"Dimension must be odd and >= 3, got d={d}")


def basis_counts(d: int) -> Tuple[int, int]:
    """(k, k~) = (floor(d/4), floor((d+2)/4))."""
    _check_dimension(d)
    return d // 4, (d + 2) // 4


def _product_coefficient(shift: int, count: int, j: int) -> Fraction:
    numerator = Fraction(1)
    for l in range(1, count + 1):
        numerator *= shift - 2 * l - 2 * j
    denominator = Fraction(1)
    for l in range(1, count + 1):
        if l != j:
            denominator *= 2 * l - 2 * j
    return numerator / denominator


def coefficients(d: int) -> CoefficientFamily:
    k, ktilde = basis_counts(d)
    c = tuple(_product_coefficient(d, k, j) for j in range(1, k + 1))
    dvec = tuple(_product_coefficient(d + 2, ktilde, j) for j in range(1, ktilde + 1))
    return CoefficientFamily(dim=d, k=k, ktilde=ktilde, c=c, dvec=dvec)


def l2_gram_cauchy(d: int) -> CauchyMatrix:
    """A(1) = [1/(d-2i-2j)] as a Cauchy matrix with x_i = d-2i, y_j = 2j."""
    k, _ = basis_counts(d)
    return CauchyMatrix(tuple(d - 2 * i for i in range(1, k + 1)), tuple(2 * j for j in range(1, k + 1)))


def h1_gram_cauchy(d: int) -> CauchyMatrix:
    """[1/(d+2-2i-2j)] as a Cauchy matrix with x_i = d+2-2i, y_j = 2j."""
    _, ktilde = basis_counts(d)
    return CauchyMatrix(tuple(d + 2 - 2 * i for i in range(1, ktilde + 1)), tuple(2 * j for j in range(1, ktilde + 1)))


def leading_minors(matrix: CauchyMatrix) -> List[Fraction]:
    return [cauchy_determinant(matrix.leading(m)) for m in range(1, matrix.size + 1)]


def is_positive_definite(matrix: CauchyMatrix) -> bool:
    """Sylvester's criterion on a symmetric Cauchy matrix."""
    if matrix.entries != [list(row) for row in zip(*matrix.entries)]:
        return False
    return all(minor > 0 for minor in leading_minors(matrix))


def verify_identities(fam: CoefficientFamily) -> IdentityReport:
    d, k, ktilde = fam.dim, fam.k, fam.ktilde
    checks: List[IdentityCheck] = []

    for m in range(1, k + 1):
        total = sum((fam.c[j - 1] / (d - 2 * m - 2 * j) for j in range(1, k + 1)), Fraction(0))
        checks.append(IdentityCheck("ci-identity-1", d, m, total - 1))

    lhs = sum((fam.c[j - 1] / (2 * j) for j in range(1, k + 1)), Fraction(0)) + 1
    rhs = Fraction(1)
    for l in range(1, k + 1):
        rhs *= Fraction(d - 2 * l, 2 * l)
    checks.append(IdentityCheck("ci-identity-2", d, None, lhs - rhs))

    for m in range(1, ktilde + 1):
        total = sum((fam.dvec[j - 1] / (d + 2 - 2 * m - 2 * j) for j in range(1, ktilde + 1)), Fraction(0))
        checks.append(IdentityCheck("di-identity-1", d, m, total - 1))

    lhs = sum((fam.dvec[j - 1] / (2 * j) for j in range(1, ktilde + 1)), Fraction(0)) + 1
    rhs = Fraction(1)
    for l in range(1, ktilde + 1):
        rhs *= Fraction(d + 2 - 2 * l, 2 * l)
    checks.append(IdentityCheck("di-identity-2", d, None, lhs - rhs))

    for j in range(1, k + 1):
        total = sum((fam.c[i - 1] / (d - 2 * i - 2 * j) ** 2 for i in range(1, k + 1)), Fraction(0))
        checks.append(IdentityCheck("ci-inverse-square", d, j, total - 1 / fam.c[j - 1]))

    report = IdentityReport(dim=d, checks=tuple(checks))
    for failure in report.failures:
        logger.warning(
            f"Identity {failure.name} fails for d={d} (index {failure.index}): residual {failure.residual}"
        )
    return report


def tabulate(dims: Iterable[int]) -> pandas.DataFrame:
    """
    Rows (d, family, index, numerator, denominator) for c_j, d_j and every identity
    residual, one block per odd d.
    """
    rows = []
    for d in dims:
        if d < 3 or d % 2 == 0:
            continue
        fam = coefficients(d)
        for j, value in enumerate(fam.c, start=1):
            rows.append((d, "c", j, value.numerator, value.denominator))
        for j, value in enumerate(fam.dvec, start=1):
            rows.append((d, "d", j, value.numerator, value.denominator))
        for check in verify_identities(fam).checks:
            rows.append(
                (d, f"residual:{check.name}", check.index or 0, check.residual.numerator, check.residual.denominator)
            )
    logger.info(f"Tabulated {len(rows)} exact coefficient rows")
    return pandas.DataFrame(rows, columns=["d", "family", "index", "numerator", "denominator"])
