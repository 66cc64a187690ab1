"""Real trigonometric polynomials on the two-torus."""

from __future__ import annotations

import numpy as np
from scipy import optimize

TWO_PI = 2.0 * np.pi


class TorusPotential:
    """V(phi) = Re sum_k c_k exp(i <k, phi>) with integer k in Z^2.

    Both k and -k are stored with conjugate coefficients, so the sum is real.
    """

    def __init__(self, K=None, C=None):
        self.K = np.zeros((0, 2)) if K is None else np.asarray(K, dtype=float).reshape(-1, 2)
        self.C = np.zeros(0, complex) if C is None else np.asarray(C, dtype=complex).reshape(-1)

    @classmethod
    def from_terms(cls, terms, const=0.0):
        """terms: iterable of (k, a, b) meaning a cos<k,phi> + b sin<k,phi>."""
        acc = {}
        if const:
            acc[(0, 0)] = complex(const)
        for k, a, b in terms:
            k = (int(k[0]), int(k[1]))
            if k == (0, 0):
                acc[k] = acc.get(k, 0) + a
                continue
            mk = (-k[0], -k[1])
            acc[k] = acc.get(k, 0) + (a - 1j * b) / 2
            acc[mk] = acc.get(mk, 0) + (a + 1j * b) / 2
        keys = sorted(k for k, v in acc.items() if v != 0)
        return cls(np.array(keys, float).reshape(-1, 2), np.array([acc[k] for k in keys], complex))

    @classmethod
    def pendulum(cls, axis=0, amplitude=1.0):
        """amplitude * (cos phi_axis - 1)."""
        k = (1, 0) if axis == 0 else (0, 1)
        return cls.from_terms([(k, amplitude, 0.0)], const=-amplitude)

    @property
    def is_zero(self) -> bool:
        return len(self.C) == 0 or not np.any(np.abs(self.C) > 0)

    def shift(self, c):
        return self + TorusPotential(np.zeros((1, 2)), np.array([c], complex))

    def scale(self, lam):
        return TorusPotential(self.K, self.C * lam)

    def __add__(self, other):
        acc = {}
        for K, C in ((self.K, self.C), (other.K, other.C)):
            for k, c in zip(map(tuple, K.tolist()), C):
                acc[k] = acc.get(k, 0) + c
        keys = sorted(acc)
        return TorusPotential(np.array(keys, float).reshape(-1, 2), np.array([acc[k] for k in keys]))

    def _ph(self, phi):
        return np.exp(1j * (np.asarray(phi, float) @ self.K.T))

    def value(self, phi):
        if len(self.C) == 0:
            return np.zeros(np.shape(phi)[:-1])
        return (self._ph(phi) @ self.C).real

    def grad(self, phi):
        if len(self.C) == 0:
            return np.zeros(np.shape(phi))
        return (self._ph(phi) @ (1j * self.C[:, None] * self.K)).real

    def hess(self, phi):
        if len(self.C) == 0:
            return np.zeros(np.shape(phi) + (2,))
        w = -self.C[:, None, None] * self.K[:, :, None] * self.K[:, None, :]
        return np.einsum("...m,mij->...ij", self._ph(phi), w).real

    def grid(self, n=128):
        x = np.arange(n) * TWO_PI / n
        X = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
        return X, self.value(X)

    def extremum(self, sign=+1, n=128):
        """(argmax, max) for sign=+1, (argmin, min) for sign=-1, grid plus polish."""
        if self.is_zero:
            return np.zeros(2), 0.0
        X, V = self.grid(n)
        i = np.unravel_index(np.argmax(sign * V), V.shape)
        x0 = X[i]
        res = optimize.minimize(lambda x: -sign * float(self.value(x)), x0,
                                jac=lambda x: -sign * self.grad(x), method="BFGS",
                                options={"gtol": 1e-14})
        x = np.mod(res.x, TWO_PI)
        val = float(self.value(x))
        if sign * val < sign * float(V[i]):
            return x0, float(V[i])
        return x, val

    def max(self):
        return self.extremum(+1)[1]

    def min(self):
        return self.extremum(-1)[1]

    def to_json(self):
        out, seen = [], set()
        for k, c in zip(map(tuple, self.K.astype(int).tolist()), self.C):
            if k in seen:
                continue
            mk = (-k[0], -k[1])
            seen.update({k, mk})
            if k == (0, 0):
                out.append({"k": [0, 0], "cos": float(c.real), "sin": 0.0})
            else:
                out.append({"k": list(k), "cos": float(2 * c.real), "sin": float(-2 * c.imag)})
        return out

    @classmethod
    def from_json(cls, data):
        const = sum(d["cos"] for d in data if tuple(d["k"]) == (0, 0))
        return cls.from_terms([(d["k"], d["cos"], d["sin"]) for d in data if tuple(d["k"]) != (0, 0)],
                              const=const)
