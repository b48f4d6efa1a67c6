"""Geodesic zipper: conformal map of a polygon interior onto the unit disk.

Boundary points w_0..w_{N-1} (counterclockwise). The first map opens the
chord [w_0, w_1]; each following point is pushed to the real line by the
slit map of the hyperbolic geodesic from 0 to its current image. The last
edge is closed by a Moebius map and a square, then the upper half-plane is
sent to the disk with the base point at 0 and w_0 at 1.
"""

from __future__ import annotations

import numpy as np


def _signed_sqrt(w, ref):
    # principal root, sign chosen so Re(s) has the sign of Re(ref); keeps H -> H
    s = np.sqrt(w)
    np.negative(s, out=s, where=ref.real < 0)
    return s


class Zipper:
    def __init__(self, w: np.ndarray, base: complex):
        w = np.asarray(w, dtype=complex)
        n = len(w)
        self.w0, self.w1 = w[0], w[1]
        self.base = complex(base)
        # slit parameters (b, k = 1/c^2) of every geodesic step
        bs = np.empty(n - 2)
        ks = np.empty(n - 2)
        z = 1j * np.sqrt((w[2:] - w[1]) / (w[2:] - w[0]))
        bpt = 1j * np.sqrt((self.base - w[1]) / (self.base - w[0]))
        prior = np.zeros(n - 1)  # images of w_1..w_{n-1} once they reach the real line
        zinf = np.inf  # image of w_0
        for k in range(n - 2):
            a = z[k]
            if a.imag <= 0:
                a = complex(a.real, 1e-300 + abs(a.imag))
            aa = abs(a) ** 2
            b = a.real / aa
            kk = (aa / a.imag) ** 2
            bs[k], ks[k] = b, kk
            # finished points on the real line
            done = prior[: k + 1]
            T = done / (1 - b * done)
            s = np.sqrt(T * T + kk)
            prior[: k + 1] = np.where(T <= 0, -s, s)  # the tip (T = 0) goes to the domain side
            if np.isfinite(zinf):
                T = zinf / (1 - b * zinf)
                zinf = float(np.sign(T) or -1) * np.sqrt(T * T + kk)
            elif b != 0:
                T = -1.0 / b
                zinf = float(np.sign(T)) * np.sqrt(T * T + kk)
            rest = z[k + 1 :]
            T = rest / (1 - b * rest)
            z[k + 1 :] = _signed_sqrt(T * T + kk, T)
            Tb = bpt / (1 - b * bpt)
            bpt = complex(_signed_sqrt(np.atleast_1d(Tb * Tb + kk), np.atleast_1d(Tb))[0])
            prior[k + 1] = 0.0
        self.b = bs
        self.k = ks
        self.zeta0 = zinf
        v = self._close(np.asarray(bpt))
        self.sign = 1.0 if v.real > 0 else -1.0
        self.uc = complex(self.sign * v * v)
        ub = self._to_disk_tail(prior.astype(complex))
        self.boundary_angles = np.concatenate([[0.0], np.mod(np.angle(ub), 2 * np.pi)])

    def _close(self, z):
        if np.isfinite(self.zeta0):
            return z / (1 - z / self.zeta0)
        return z

    def _to_disk_tail(self, z):
        v = self._close(z)
        u = self.sign * v * v
        return (u - self.uc) / (u - np.conj(self.uc))

    def to_disk(self, z, deriv: bool = False):
        """Domain -> disk; optional complex derivative."""
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        z = z.ravel()
        q = (z - self.w1) / (z - self.w0)
        zeta = 1j * np.sqrt(q)
        if deriv:
            dq = (self.w1 - self.w0) / (z - self.w0) ** 2
            d = 1j * dq / (2 * np.sqrt(q))
        for b, kk in zip(self.b, self.k):
            den = 1 - b * zeta
            T = zeta / den
            s = _signed_sqrt(T * T + kk, T)
            if deriv:
                d = d * (T / s) / den ** 2
            zeta = s
        if np.isfinite(self.zeta0):
            den = 1 - zeta / self.zeta0
            v = zeta / den
            if deriv:
                d = d / den ** 2
        else:
            v = zeta
        u = self.sign * v * v
        if deriv:
            d = d * 2 * self.sign * v
        den = u - np.conj(self.uc)
        out = (u - self.uc) / den
        if deriv:
            d = d * (self.uc - np.conj(self.uc)) / den ** 2
            return out.reshape(shape), d.reshape(shape)
        return out.reshape(shape)

    def from_disk(self, zeta, deriv: bool = False):
        """Disk -> domain; optional complex derivative."""
        zeta = np.asarray(zeta, dtype=complex)
        shape = zeta.shape
        zeta = zeta.ravel()
        uc = self.uc
        den = zeta - 1
        u = (zeta * np.conj(uc) - uc) / den
        if deriv:
            d = (uc - np.conj(uc)) / den ** 2
        v = np.sqrt(self.sign * u)
        v = np.where(v.imag < 0, -v, v)
        if deriv:
            d = d * self.sign / (2 * v)
        if np.isfinite(self.zeta0):
            den = 1 + v / self.zeta0
            x = v / den
            if deriv:
                d = d / den ** 2
        else:
            x = v
        for b, kk in zip(self.b[::-1], self.k[::-1]):
            T = _signed_sqrt(x * x - kk, x)
            den = 1 + b * T
            if deriv:
                d = d * (x / T) / den ** 2
            x = T / den
        u = -x * x
        den = 1 - u
        out = (self.w1 - u * self.w0) / den
        if deriv:
            d = d * (-2 * x) * (self.w1 - self.w0) / den ** 2
            return out.reshape(shape), d.reshape(shape)
        return out.reshape(shape)
