"""Dense monomial bases in three variables.

A polynomial is a coefficient vector over ``exps`` (shape (n_mono, 3)).  All
evaluators broadcast over leading axes of the point array.
"""

from __future__ import annotations

from itertools import product
from math import comb

import numpy as np
import sympy

P_SYMBOLS = sympy.symbols("p1 p2 p3")


def monomial_exps(degree: int) -> np.ndarray:
    rows = [e for e in product(range(degree + 1), repeat=3) if sum(e) <= degree]
    rows.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    return np.array(rows, dtype=int).reshape(-1, 3)


def parse_poly(expr: str | float | int, exps: np.ndarray) -> np.ndarray:
    """Coefficients of a real polynomial string in p1, p2, p3 over ``exps``."""
    from .errors import ConfigError, DegreeOverflow

    try:
        poly = sympy.Poly(sympy.sympify(str(expr)), *P_SYMBOLS)
    except (sympy.SympifyError, sympy.PolynomialError, TypeError) as exc:
        raise ConfigError(f"cannot parse polynomial {expr!r}: {exc}") from exc
    index = {tuple(e): i for i, e in enumerate(exps.tolist())}
    out = np.zeros(len(exps))
    for mon, c in poly.terms():
        if tuple(mon) not in index:
            raise DegreeOverflow(f"monomial {mon} in {expr!r} exceeds the declared degree")
        if not c.is_real:
            raise ConfigError(f"non-real coefficient in {expr!r}")
        out[index[tuple(mon)]] = float(c)
    return out


class MonomialBasis:
    def __init__(self, exps: np.ndarray):
        self.exps = np.asarray(exps, dtype=int).reshape(-1, 3)
        self.degree = int(self.exps.max()) if self.exps.size else 0

    def __len__(self):
        return len(self.exps)

    def _powers(self, w):
        w = np.asarray(w, dtype=float)
        pw = np.ones(w.shape + (self.degree + 1,))
        for j in range(1, self.degree + 1):
            pw[..., j] = pw[..., j - 1] * w
        return pw  # (..., 3, deg+1)

    def _mono(self, pw, exps):
        out = np.ones(pw.shape[:-2] + (len(exps),))
        for i in range(3):
            out = out * pw[..., i, :][..., exps[:, i]]
        return out

    def eval(self, w):
        return self._mono(self._powers(w), self.exps)

    def grad(self, w):
        pw = self._powers(w)
        out = np.zeros(pw.shape[:-2] + (len(self.exps), 3))
        for i in range(3):
            e = self.exps.copy()
            fac = e[:, i].astype(float)
            e[:, i] = np.maximum(e[:, i] - 1, 0)
            out[..., i] = self._mono(pw, e) * fac
        return out

    def hess(self, w):
        pw = self._powers(w)
        out = np.zeros(pw.shape[:-2] + (len(self.exps), 3, 3))
        for i in range(3):
            for j in range(i, 3):
                e = self.exps.copy()
                fac = e[:, i].astype(float)
                e[:, i] = np.maximum(e[:, i] - 1, 0)
                fac = fac * e[:, j]
                e[:, j] = np.maximum(e[:, j] - 1, 0)
                val = self._mono(pw, e) * fac
                out[..., i, j] = val
                out[..., j, i] = val
        return out

    def shifted(self, w0, d, min_order: int = 1):
        """Monomials of w0 + d minus their Taylor part of order < min_order.

        Built from the binomial expansion in d so that small shifts lose no
        digits to cancellation.
        """
        p0 = self._powers(w0)
        pd = self._powers(d)
        out = np.zeros(p0.shape[:-2] + (len(self.exps),))
        for n, e in enumerate(self.exps):
            for js in product(*(range(x + 1) for x in e)):
                if sum(js) < min_order:
                    continue
                term = 1.0
                for i in range(3):
                    term = term * comb(int(e[i]), js[i]) * p0[..., i, e[i] - js[i]] * pd[..., i, js[i]]
                out[..., n] += term
        return out
