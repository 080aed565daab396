import random
import sys
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import mpmath
import sympy

__version__ = "0.3.0"

DIR_ROOT = Path(__file__).parent.parent
DIR_PRESETS = DIR_ROOT / "presets"

DEFAULT_DPS = 50

VERBOSE = False

# Symbolic atoms shared by every module. Coefficient expressions live in these four.
SIGMA = sympy.Symbol("sigma", positive=True)
KAPPA_PLUS = sympy.Symbol("kappa_plus")
KAPPA_MINUS = sympy.Symbol("kappa_minus")
MU = sympy.Symbol("mu")
ATOMS = (SIGMA, KAPPA_PLUS, KAPPA_MINUS, MU)

# Covariables in the normal direction.
XI = sympy.Symbol("xi_n", real=True)
ETA = sympy.Symbol("eta_n", real=True)


def log(*args):
    if VERBOSE:
        print("i:", *args, file=sys.stderr)


@dataclass(frozen=True)
class Binding:
    """Numeric values for the atoms (sigma, kappa_plus, kappa_minus, mu)."""
    sigma: object
    kappa_plus: object
    kappa_minus: object
    mu: object

    def values(self):
        return self.sigma, self.kappa_plus, self.kappa_minus, self.mu

    def scaled(self, t):
        return Binding(self.sigma * t, self.kappa_plus * t, self.kappa_minus * t, self.mu * t)


def random_binding(rng: random.Random) -> Binding:
    """
    Draws a generic binding: sigma and mu positive, kappa± complex with positive real part.
    Atoms are independent, so identities checked at such bindings hold as identities in the atoms.
    """
    def uniform(a, b):
        return mpmath.mpf(rng.uniform(a, b))

    return Binding(
        sigma=uniform(0.5, 3.0),
        kappa_plus=mpmath.mpc(uniform(0.5, 3.0), uniform(-1.0, 1.0)),
        kappa_minus=mpmath.mpc(uniform(0.5, 3.0), uniform(-1.0, 1.0)),
        mu=uniform(0.5, 3.0),
    )


def random_bindings(count: int, seed: int = 0) -> list[Binding]:
    rng = random.Random(seed)
    return [random_binding(rng) for _ in range(count)]


@lru_cache(maxsize=8192)
def compile_expr(expr: sympy.Expr):
    return sympy.lambdify(ATOMS, expr, modules="mpmath")


def evaluate(expr, binding: Binding):
    """Evaluates a coefficient expression at a numeric binding in the current mpmath precision."""
    return mpmath.mpmathify(compile_expr(sympy.sympify(expr))(*binding.values()))


def coef_equal(a, b, bindings=None, trials: int = 5, seed: int = 0, dps: int = DEFAULT_DPS) -> bool:
    """
    Probabilistic identity test for coefficient expressions.

    Both sides are evaluated at independent random bindings (or the given ones) in dps-digit
    arithmetic; they are declared equal when every relative difference is below 10^(-dps/2).
    """
    with mpmath.workdps(dps):
        if bindings is None:
            bindings = random_bindings(trials, seed)
        tolerance = mpmath.mpf(10) ** (-(dps // 2))
        for binding in bindings:
            left = evaluate(a, binding)
            right = evaluate(b, binding)
            scale = max(mpmath.mpf(1), abs(left), abs(right))
            if abs(left - right) > tolerance * scale:
                return False
        return True


def is_zero(expr, bindings=None, trials: int = 5, seed: int = 0, dps: int = DEFAULT_DPS) -> bool:
    expr = sympy.sympify(expr)
    if expr == 0:
        return True
    return coef_equal(expr, 0, bindings=bindings, trials=trials, seed=seed, dps=dps)
