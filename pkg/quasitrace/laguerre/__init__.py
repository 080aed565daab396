"""
Laguerre functions phi_k(xi_n) = (2 sigma)^1/2 (sigma - i xi_n)^k (sigma + i xi_n)^-k-1 and the
xi_n-compositions of singular Green, Poisson and resolvent symbols with them.

Composition constants are computed, not tabulated: each integral is evaluated by residues and its
value is fitted against the structural basis the composition must land in.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import sympy

from quasitrace import SIGMA, KAPPA_PLUS, KAPPA_MINUS, XI, Binding, evaluate, random_bindings, is_zero
from quasitrace.boundary import ClassicalSymbol, SymbolClassTag
from quasitrace.ratfun import PoleAtom, RatFun, from_factors, h_split, integrate_line, residue_pairing

DEFAULT_J_MAX = 40


def laguerre_fn(k: int, normalized: bool = True) -> RatFun:
    if k < 0:
        raise ValueError(f"Laguerre index must be >= 0, got {k}")
    coef = sympy.sqrt(2 * SIGMA) if normalized else 1
    return from_factors({PoleAtom.SIGMA_MINUS: k, PoleAtom.SIGMA_PLUS: -k - 1}, coef)


def laguerre_conj(k: int, normalized: bool = True) -> RatFun:
    """Complex conjugate of phi_k on the real line."""
    coef = sympy.sqrt(2 * SIGMA) if normalized else 1
    return from_factors({PoleAtom.SIGMA_PLUS: k, PoleAtom.SIGMA_MINUS: -k - 1}, coef)


def laguerre_expr(k: int, normalized: bool = True, var=XI, conjugate: bool = False) -> sympy.Expr:
    coef = sympy.sqrt(2 * SIGMA) if normalized else 1
    top, bottom = (SIGMA + sympy.I * var, SIGMA - sympy.I * var) if conjugate else \
        (SIGMA - sympy.I * var, SIGMA + sympy.I * var)
    return coef * top ** k * bottom ** (-k - 1)


def laguerre_value(k: int, xi_n, sigma, normalized: bool = True):
    sigma = mpmath.mpmathify(sigma)
    value = (sigma - 1j * xi_n) ** k * (sigma + 1j * xi_n) ** (-k - 1)
    return mpmath.sqrt(2 * sigma) * value if normalized else value


def laguerre_pair(j: int, k: int) -> RatFun:
    """phi_j * conj(phi_k) on the real line, normalized."""
    return from_factors({PoleAtom.SIGMA_MINUS: j - k - 1, PoleAtom.SIGMA_PLUS: k - j - 1}, 2 * SIGMA)


@dataclass(frozen=True)
class LaguerreDerivative:
    """d phi_k = lower * phi_{k-1} + same * phi_k + upper * phi_{k+1}."""
    k: int
    direction: str
    lower: sympy.Expr
    same: sympy.Expr
    upper: sympy.Expr

    def as_ratfun(self, normalized: bool = True) -> RatFun:
        total = laguerre_fn(self.k, normalized).scale(self.same) + laguerre_fn(self.k + 1, normalized).scale(self.upper)
        if self.k > 0:
            total = total + laguerre_fn(self.k - 1, normalized).scale(self.lower)
        return total


XI_J = sympy.Symbol("xi_j", real=True)


def laguerre_deriv(k: int, direction: str = "xi_n", normalized: bool = True) -> LaguerreDerivative:
    """
    xi_n:  -i (k phi_{k-1} + (2k+1) phi_k + (k+1) phi_{k+1}) / (2 sigma)
    xi_j:  (k phi_{k-1} - (k+1) phi_{k+1}) / (2 sigma) * d sigma/d xi_j, with d sigma/d xi_j = xi_j / sigma.
    For the unnormalized functions the xi_j rule picks up -phi'_k / (2 sigma) in the middle.
    """
    if k < 0:
        raise ValueError(f"Laguerre index must be >= 0, got {k}")
    half = 1 / (2 * SIGMA)
    lower = k * half if k > 0 else sympy.Integer(0)
    if direction == "xi_n":
        return LaguerreDerivative(k, direction, -sympy.I * lower, -sympy.I * (2 * k + 1) * half,
                                  -sympy.I * (k + 1) * half)
    if direction == "xi_j":
        chain = XI_J / SIGMA
        same = sympy.Integer(0) if normalized else -half
        return LaguerreDerivative(k, direction, lower * chain, same * chain, -(k + 1) * half * chain)
    raise ValueError(f"unknown direction {direction!r}")


def inner_product(j: int, k: int) -> sympy.Expr:
    """∫ phi_j conj(phi_k) d̄xi_n by residues."""
    return sympy.simplify(integrate_line(laguerre_pair(j, k)))


@dataclass(frozen=True)
class CompositionResult:
    """Residue value of a Laguerre composition and its coordinates in the structural basis."""
    value: sympy.Expr
    basis_labels: tuple
    constants: tuple
    residual: object
    tag: SymbolClassTag | None = None
    vanishes: bool = False

    @property
    def in_span(self) -> bool:
        return self.residual <= mpmath.mpf(10) ** (-(mpmath.mp.dps // 3))

    def to_dict(self) -> dict:
        return {
            "value": str(self.value),
            "basis": list(self.basis_labels),
            "constants": [mpmath.nstr(c, 15) for c in self.constants],
            "residual": float(self.residual),
            "tag": str(self.tag) if self.tag else None,
            "vanishes": self.vanishes,
        }


def fit_constants(value: sympy.Expr, basis: list, samples: int | None = None, seed: int = 11):
    """
    Least-squares coordinates of value in span(basis) from random bindings; returns
    (constants, relative residual). A residual at working precision means value lies in the span.
    """
    if not basis:
        return (), mpmath.mpf(0) if is_zero(value) else mpmath.mpf(1)
    samples = samples or len(basis) + 6
    bindings = random_bindings(samples, seed=seed)
    rows, rhs = [], []
    for binding in bindings:
        rows.append([evaluate(b, binding) for b in basis])
        rhs.append(evaluate(value, binding))
    A = mpmath.matrix(rows)
    y = mpmath.matrix(rhs)
    solution, residual = mpmath.qr_solve(A, y)
    norm = mpmath.norm(y)
    constants = tuple(_clean(solution[i]) for i in range(len(basis)))
    return constants, residual / norm if norm else residual


def _clean(value):
    value = mpmath.mpmathify(value)
    tolerance = mpmath.mpf(10) ** (-(mpmath.mp.dps // 2))
    if abs(mpmath.im(value)) < tolerance * max(1, abs(value)):
        value = mpmath.re(value)
    return value


def _kappa(sign: str):
    if sign not in ("+", "-"):
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    return (KAPPA_PLUS, PoleAtom.KAPPA_PLUS) if sign == "+" else (KAPPA_MINUS, PoleAtom.KAPPA_MINUS)


def compose_laguerre_kappa(m: int, j: int, sign: str = "+") -> CompositionResult:
    """
    ∫ (sigma ± i xi_n)^m (sigma ∓ i xi_n)^-m-1 (kappa± ± i xi_n)^-j d̄xi_n against the basis
    kappa^(1-j) (sigma - kappa)^m' (sigma + kappa)^-m'-1, |m' - m| < j.
    """
    if m < 0 or j < 1:
        raise ValueError(f"compose_laguerre_kappa needs m >= 0 and j >= 1, got m={m}, j={j}")
    kappa, atom = _kappa(sign)
    if sign == "+":
        exponents = {PoleAtom.SIGMA_PLUS: m, PoleAtom.SIGMA_MINUS: -m - 1, atom: -j}
    else:
        exponents = {PoleAtom.SIGMA_MINUS: m, PoleAtom.SIGMA_PLUS: -m - 1, atom: -j}
    value = integrate_line(from_factors(exponents))
    indices = [mp for mp in range(max(0, m - j + 1), m + j)]
    basis = [kappa ** (1 - j) * (SIGMA - kappa) ** mp * (SIGMA + kappa) ** (-mp - 1) for mp in indices]
    constants, residual = fit_constants(value, basis)
    return CompositionResult(value, tuple(f"m'={mp}" for mp in indices), constants, residual,
                             tag=SymbolClassTag(0, 0, -j))


def compose_kappa_pair(m: int, j: int, jp: int) -> CompositionResult:
    """
    s_{j,j',m} = ∫ (sigma - i xi_n)^m (sigma + i xi_n)^-m-1 (kappa+ + i xi_n)^-j (kappa- - i xi_n)^-j' d̄xi_n.

    For m >= 0 the basis is (kappa-)^-j'' (sigma - kappa-)^m' (sigma + kappa-)^-m'-1
    (kappa+ + kappa-)^(-j-j'+1+j'') with |m - m'| <= j'' < j'; m < 0 mirrors it with
    kappa+ <-> kappa-, j <-> j' and m -> -m-1.
    """
    if j < 1 or jp < 1:
        raise ValueError(f"compose_kappa_pair needs j, j' >= 1, got j={j}, j'={jp}")
    exponents = {PoleAtom.SIGMA_MINUS: m, PoleAtom.SIGMA_PLUS: -m - 1,
                 PoleAtom.KAPPA_PLUS: -j, PoleAtom.KAPPA_MINUS: -jp}
    value = integrate_line(from_factors(exponents))
    if m >= 0:
        near, r, outer, inner = KAPPA_MINUS, m, j, jp
    else:
        near, r, outer, inner = KAPPA_PLUS, -m - 1, jp, j
    total = KAPPA_PLUS + KAPPA_MINUS
    labels, basis = [], []
    for jpp in range(inner):
        for mp in range(max(0, r - jpp), r + jpp + 1):
            labels.append(f"j''={jpp},m'={mp}")
            basis.append(near ** (-jpp) * (SIGMA - near) ** mp * (SIGMA + near) ** (-mp - 1)
                         * total ** (-outer - inner + 1 + jpp))
    constants, residual = fit_constants(value, basis)
    return CompositionResult(value, tuple(labels), constants, residual, tag=SymbolClassTag(0, 0, -j - jp))


def compose_laguerre_pair(l: int, m: int, j: int, sign: str = "+") -> CompositionResult:
    """
    s±_{j,l,m} = ∫ phi'_l conj(phi'_m) (kappa± ± i xi_n)^-j d̄xi_n.

    Zero for m < l (sign +) and for m > l (sign -); ((kappa± + sigma)^j 2 sigma)^-1 for m = l;
    otherwise in span kappa^(1-j) (sigma - kappa)^m' (sigma + kappa)^-m'-2.
    """
    if l < 0 or m < 0 or j < 1:
        raise ValueError(f"compose_laguerre_pair needs l, m >= 0 and j >= 1, got l={l}, m={m}, j={j}")
    kappa, atom = _kappa(sign)
    exponents = {PoleAtom.SIGMA_MINUS: l - m - 1, PoleAtom.SIGMA_PLUS: m - l - 1, atom: -j}
    f = from_factors(exponents)
    # the contour on the side free of poles gives the structural zero
    lower_free = all(a.upper for a in f.atoms)
    upper_free = all(not a.upper for a in f.atoms)
    if lower_free or upper_free:
        value = integrate_line(f, contour="lower" if lower_free else "upper", check_decay=False)
        return CompositionResult(sympy.sympify(value), (), (), mpmath.mpf(0), tag=SymbolClassTag(0, 0, -j - 1),
                                 vanishes=value == 0)
    value = integrate_line(f)
    if m == l:
        closed = 1 / ((kappa + SIGMA) ** j * 2 * SIGMA)
        constants, residual = fit_constants(value, [closed])
        return CompositionResult(value, ("closed",), constants, residual, tag=SymbolClassTag(-1, 0, -j))
    shift = abs(m - l) - 1
    indices = [mp for mp in range(max(0, shift - j + 1), shift + j)]
    basis = [kappa ** (1 - j) * (SIGMA - kappa) ** mp * (SIGMA + kappa) ** (-mp - 2) for mp in indices]
    constants, residual = fit_constants(value, basis)
    return CompositionResult(value, tuple(f"m'={mp}" for mp in indices), constants, residual,
                             tag=SymbolClassTag(0, 0, -j - 1))


def trn_qN_laguerre(model, N: int, l: int, m: int) -> CompositionResult:
    """
    tr_n(phi_l h+(q^N conj(phi_m))) = 2 sigma ∫ phi'_l conj(phi'_m) q^N d̄xi_n with
    q^N = a^-N (kappa+ + i xi_n)^-N (kappa- - i xi_n)^-N; alpha^(N) on the diagonal.
    """
    a = sympy.nsimplify(model.a)
    f = from_factors({PoleAtom.SIGMA_MINUS: l - m - 1, PoleAtom.SIGMA_PLUS: m - l - 1,
                      PoleAtom.KAPPA_PLUS: -N, PoleAtom.KAPPA_MINUS: -N}, 2 * SIGMA * a ** (-N))
    value = integrate_line(f)
    tag = SymbolClassTag(0, 0, -2 * N) if l == m else SymbolClassTag(1, 0, -2 * N - 1)
    return CompositionResult(value, (), (), mpmath.mpf(0), tag=tag)


@dataclass(frozen=True)
class PlusRemovalResult:
    values: tuple
    agree: bool


def plus_removal_check(k: int, q: RatFun, l: int) -> PlusRemovalResult:
    """
    Compares ∫ conj(phi_k) h+[q phi_l], ∫ conj(phi_k) q phi_l and ∫ h-[conj(phi_k) q] phi_l.
    """
    phi_l = laguerre_fn(l)
    conj_k = laguerre_conj(k)
    plus, _ = h_split(q * phi_l)
    _, minus = h_split(conj_k * q)
    values = (
        integrate_line(conj_k * plus),
        integrate_line(conj_k * q * phi_l),
        integrate_line(minus * phi_l),
    )
    agree = is_zero(values[0] - values[1]) and is_zero(values[1] - values[2])
    return PlusRemovalResult(values, agree)


@lru_cache(maxsize=4096)
def poisson_coefficient(atom: PoleAtom, order: int, j: int) -> sympy.Expr:
    """∫ F_atom^-order conj(phi_j) d̄xi_n for an upper atom (Poisson side)."""
    return residue_pairing(laguerre_expr(j, conjugate=True), atom, order)


@lru_cache(maxsize=4096)
def trace_coefficient(atom: PoleAtom, order: int, k: int) -> sympy.Expr:
    """∫ F_atom^-order phi_k d̄xi_n for a lower atom (trace side)."""
    return residue_pairing(laguerre_expr(k), atom, order)


@dataclass(frozen=True)
class LaguerreMatrix:
    """d_jk with g = Σ d_jk phi_j(xi_n) conj(phi_k)(eta_n)."""
    J_max: int
    entries: tuple
    flagged: bool = False
    decay_ratio: object = None

    def entry(self, j, k):
        return self.entries[j][k]

    def trace(self):
        total = self.entries[0][0]
        for j in range(1, self.J_max + 1):
            total += self.entries[j][j]
        return total

    def at(self, binding: Binding) -> "LaguerreMatrix":
        rows = tuple(tuple(evaluate(e, binding) for e in row) for row in self.entries)
        return numeric_matrix(rows)

    def evaluate(self, xi_n, eta_n, sigma):
        """Σ d_jk phi_j(xi_n) conj(phi_k)(eta_n) for numeric entries."""
        left = [laguerre_value(j, xi_n, sigma) for j in range(self.J_max + 1)]
        right = [mpmath.conj(laguerre_value(k, mpmath.conj(eta_n), sigma)) for k in range(self.J_max + 1)]
        return sum(self.entries[j][k] * left[j] * right[k]
                   for j in range(self.J_max + 1) for k in range(self.J_max + 1))

    def to_dict(self) -> dict:
        def encode(value):
            if isinstance(value, sympy.Basic):
                return str(value)
            value = mpmath.mpmathify(value)
            return [float(mpmath.re(value)), float(mpmath.im(value))]

        return {"J_max": self.J_max, "entries": [[encode(e) for e in row] for row in self.entries],
                "flagged": self.flagged}


def numeric_matrix(rows, tolerance=None) -> LaguerreMatrix:
    J_max = len(rows) - 1
    tolerance = tolerance if tolerance is not None else mpmath.mpf(10) ** -10
    scale = max(abs(e) for row in rows for e in row) or mpmath.mpf(1)
    edge = max([abs(rows[J_max][k]) for k in range(J_max + 1)] + [abs(rows[j][J_max]) for j in range(J_max + 1)])
    ratio = None
    if J_max >= 2 and abs(rows[J_max - 1][J_max - 1]) > 0:
        ratio = abs(rows[J_max][J_max] / rows[J_max - 1][J_max - 1])
    return LaguerreMatrix(J_max, tuple(tuple(r) for r in rows), flagged=edge > tolerance * scale, decay_ratio=ratio)


def sgo_to_laguerre(g, J_max: int = DEFAULT_J_MAX, binding: Binding | None = None) -> LaguerreMatrix:
    """
    d_jk = ∫∫ g(xi_n, eta_n) conj(phi_j)(xi_n) phi_k(eta_n) d̄xi_n d̄eta_n, one residue per factor.

    g is an SGOResolventSymbol (terms in (kappa+ + i xi_n)^-j (kappa- - i eta_n)^-j'). With a binding
    the entries are numeric and the last row and column are checked against the tail tolerance.
    """
    terms = getattr(g, "terms", None)
    if terms is None:
        raise ValueError("sgo_to_laguerre needs a symbol with (J, j, j') terms")
    rows = []
    for j in range(J_max + 1):
        row = []
        for k in range(J_max + 1):
            entry = sympy.Integer(0)
            for (_, a, b), coef in terms.items():
                entry += coef * poisson_coefficient(PoleAtom.KAPPA_PLUS, a, j) \
                    * trace_coefficient(PoleAtom.KAPPA_MINUS, b, k)
            row.append(entry if binding is None else evaluate(entry, binding))
        rows.append(row)
    if binding is None:
        return LaguerreMatrix(J_max, tuple(tuple(r) for r in rows))
    return numeric_matrix(rows)


def laguerre_to_sgo(matrix: LaguerreMatrix, sigma):
    """The kernel symbol (xi_n, eta_n) -> Σ d_jk phi_j(xi_n) conj(phi_k)(eta_n) at fixed sigma."""
    def symbol(xi_n, eta_n):
        return matrix.evaluate(xi_n, eta_n, sigma)

    return symbol


def poisson_to_laguerre(k_symbol: RatFun, J_max: int = DEFAULT_J_MAX, binding: Binding | None = None) -> tuple:
    """C_j = ∫ K conj(phi_j) d̄xi_n, so that K = Σ C_j phi_j; K must be an h+ function."""
    if not k_symbol.is_proper:
        raise ValueError("poisson_to_laguerre: symbol has a polynomial part")
    if any(not atom.upper for atom in k_symbol.atoms):
        raise ValueError("poisson_to_laguerre: Poisson symbols carry upper poles only")
    out = []
    for j in range(J_max + 1):
        c = sympy.Integer(0)
        for (atom, order), coef in k_symbol.fractions:
            c += coef * poisson_coefficient(atom, order, j)
        c = sympy.simplify(c)
        out.append(c if binding is None else evaluate(c, binding))
    return tuple(out)


@dataclass(frozen=True)
class LaguerreSGO:
    """
    Class-0 singular Green operator on the half-space given by Laguerre coefficients c_jk(xi'),
    symbol Σ c_jk(xi') phi_j(xi_n, sigma) conj(phi_k)(eta_n, sigma).
    """
    coefficients: dict = field(default_factory=dict)
    dimension: int = 1

    @property
    def order(self) -> float:
        return max((c.order for c in self.coefficients.values()), default=float("-inf"))

    def trace_normal(self) -> ClassicalSymbol | None:
        """tr_n = Σ_j c_jj by orthonormality."""
        diagonal = [c for (j, k), c in sorted(self.coefficients.items()) if j == k]
        if not diagonal:
            return None
        total = diagonal[0]
        for c in diagonal[1:]:
            total = total + c
        return total

    def scale(self, factor) -> "LaguerreSGO":
        return LaguerreSGO({key: c.scale(factor) for key, c in self.coefficients.items()}, self.dimension)

    def __add__(self, other: "LaguerreSGO") -> "LaguerreSGO":
        merged = dict(self.coefficients)
        for key, c in other.coefficients.items():
            merged[key] = merged[key] + c if key in merged else c
        return LaguerreSGO(merged, self.dimension)


def tr_n(g):
    """Normal trace of an SGO symbol, a Laguerre matrix or Laguerre-coefficient data."""
    if isinstance(g, LaguerreMatrix):
        return g.trace()
    if isinstance(g, LaguerreSGO):
        return g.trace_normal()
    if hasattr(g, "trace_normal"):
        return g.trace_normal()
    raise ValueError(f"tr_n: unsupported symbol {type(g).__name__}")
