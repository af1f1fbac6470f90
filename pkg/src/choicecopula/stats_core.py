"""Deterministic normal-distribution primitives, Cholesky and counter-based RNG streams.

Matrices are plain C-ordered (row-major) ``numpy`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DecompositionError, DomainError, ShapeError

# Above this the upper tail is below half an ulp of 1.0; below the lower
# threshold float64 underflows. Both are clamped explicitly.
CDF_UPPER_SATURATION = 8.5
CDF_LOWER_SATURATION = -38.5

_TWO_PI = 2.0 * np.pi

# 20-point Gauss-Legendre rule on [-1, 1], half nodes and weights.
_GL20_X = np.array([
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
    0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
    0.07652652113349733,
])
_GL20_W = np.array([
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
    0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
    0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
    0.1527533871307259,
])
# nodes mapped to (0, 2) as used by the Drezner-Wesolowsky reduction
BVN_NODES = np.concatenate([1.0 - _GL20_X, 1.0 + _GL20_X])
BVN_WEIGHTS = np.concatenate([_GL20_W, _GL20_W])


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(np.exp(-0.5 * x * x) / np.sqrt(_TWO_PI), x)


def std_normal_cdf(x):
    """Standard normal CDF with explicit tail saturation.

    Returns exactly 1 for ``x > 8.5`` and exactly 0 for ``x < -38.5``.
    """
    x = np.asarray(x, dtype=float)
    out = special.ndtr(x)
    out = np.where(x > CDF_UPPER_SATURATION, 1.0, out)
    out = np.where(x < CDF_LOWER_SATURATION, 0.0, out)
    return _scalar_or_array(out, x)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1)."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    return _scalar_or_array(special.ndtri(p), p)


def _bvn_upper(h, k, r):
    """P(X > h, Y > k) for a standard bivariate normal with correlation r.

    Vectorized port of Genz's ``bvnu`` (Drezner & Wesolowsky reduction) using the
    20-point Gauss-Legendre rule for every correlation.
    """
    h, k, r = np.broadcast_arrays(
        np.asarray(h, dtype=float), np.asarray(k, dtype=float), np.asarray(r, dtype=float)
    )
    shape = h.shape
    h = h.ravel().copy()
    k = k.ravel().copy()
    r = r.ravel()
    out = np.empty(h.size)
    x = BVN_NODES
    w = BVN_WEIGHTS

    low = np.abs(r) < 0.925
    if np.any(low):
        hl, kl, rl = h[low], k[low], r[low]
        hs = 0.5 * (hl * hl + kl * kl)
        asr = 0.5 * np.arcsin(rl)
        sn = np.sin(asr[:, None] * x[None, :])
        terms = np.exp((sn * (hl * kl)[:, None] - hs[:, None]) / (1.0 - sn * sn))
        out[low] = terms @ w * asr / _TWO_PI + special.ndtr(-hl) * special.ndtr(-kl)

    high = ~low
    if np.any(high):
        hh, kh, rh = h[high], k[high].copy(), r[high]
        neg = rh < 0
        kh[neg] = -kh[neg]
        hkh = hh * kh
        bvn = np.zeros(hh.size)
        inner = np.abs(rh) < 1.0
        if np.any(inner):
            hi, ki, ri, hki = hh[inner], kh[inner], rh[inner], hkh[inner]
            a_s = 1.0 - ri * ri
            a = np.sqrt(a_s)
            bs = (hi - ki) ** 2
            c = (4.0 - hki) / 8.0
            d = (12.0 - hki) / 16.0
            asr = -(bs / a_s + hki) / 2.0
            val = a * np.exp(asr) * (
                1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0
            )
            b = np.sqrt(bs)
            sp = np.sqrt(_TWO_PI) * special.ndtr(-b / a)
            val = np.where(
                hki > -160.0,
                val - np.exp(-hki / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0),
                val,
            )
            a2 = a / 2.0
            xs = (a2[:, None] * x[None, :]) ** 2
            asr2 = -(bs[:, None] / xs + hki[:, None]) / 2.0
            ok = asr2 > -100.0
            sp2 = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-(hki[:, None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
            contrib = np.where(ok, np.exp(np.where(ok, asr2, 0.0)) * (sp2 - ep), 0.0)
            val = (a2 * (contrib @ w) - val) / _TWO_PI
            bvn[inner] = val
        pos = rh > 0
        res = np.empty(hh.size)
        res[pos] = bvn[pos] + special.ndtr(-np.maximum(hh[pos], kh[pos]))
        npos = ~pos
        hn, kn, bn = hh[npos], kh[npos], bvn[npos]
        ge = hn >= kn
        lower_part = np.where(
            hn < 0.0, special.ndtr(kn) - special.ndtr(hn), special.ndtr(-hn) - special.ndtr(-kn)
        )
        res[npos] = np.where(ge, -bn, lower_part - bn)
        out[high] = res

    zero = r == 0.0
    out[zero] = special.ndtr(-h[zero]) * special.ndtr(-k[zero])
    return np.clip(out, 0.0, 1.0).reshape(shape)


def bivariate_normal_cdf(x, y, rho):
    """P(X <= x, Y <= y) for a standard bivariate normal with correlation ``rho``.

    Accurate to about 1e-15 absolute; vectorized over broadcastable inputs.
    """
    rho_arr = np.asarray(rho, dtype=float)
    if not np.all(np.abs(rho_arr) < 1.0):
        raise DomainError("bivariate_normal_cdf requires |rho| < 1")
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    x_c = np.clip(x_arr, -40.0, 40.0)
    y_c = np.clip(y_arr, -40.0, 40.0)
    out = _bvn_upper(-x_c, -y_c, rho_arr)
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0 and np.ndim(rho) == 0
    return float(out) if scalar else out


def bivariate_normal_pdf(x, y, rho):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    s2 = 1.0 - rho * rho
    out = np.exp(-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * s2)) / (_TWO_PI * np.sqrt(s2))
    return _scalar_or_array(out, x + y + rho)


def cholesky(sigma) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == sigma``.

    Raises
    ------
    DecompositionError
        If ``sigma`` is not symmetric positive definite; the message names the
        first non-positive pivot.
    """
    a = np.array(sigma, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky requires a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("cholesky requires finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise DecompositionError("matrix is not symmetric within 1e-10")
    n = a.shape[0]
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise DecompositionError(
                f"matrix is not positive definite: pivot {j} equals {pivot:.6g}", pivot=j
            )
        L[j, j] = np.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (a[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def truncated_normal_draw(lower, upper, u):
    """Inverse-CDF draw from N(0, 1) truncated to ``(lower, upper)``.

    Monotone increasing in ``u``. Bounds lying in the right tail are handled by
    reflection so that precision is kept on both sides.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    u = np.asarray(u, dtype=float)
    if not np.all(lower < upper):
        raise DomainError("truncated_normal_draw requires lower < upper")
    if not np.all((u > 0.0) & (u < 1.0)):
        raise DomainError("truncated_normal_draw requires 0 < u < 1")
    lower, upper, u = np.broadcast_arrays(lower, upper, u)
    flip = lower > 0.0
    lo = np.where(flip, -upper, lower)
    hi = np.where(flip, -lower, upper)
    uu = np.where(flip, 1.0 - u, u)
    p_lo = special.ndtr(lo)
    p_hi = special.ndtr(hi)
    p = p_lo + uu * (p_hi - p_lo)
    p = np.clip(p, np.nextafter(p_lo, 1.0), np.nextafter(p_hi, 0.0))
    draw = special.ndtri(p)
    draw = np.clip(draw, lo, hi)
    draw = np.where(flip, -draw, draw)
    return _scalar_or_array(draw, u if u.ndim else lower)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(master_seed, stream_id)``.

    Backed by the counter-based Philox generator, keyed through ``SeedSequence``
    so that the same pair yields the same sequence on every platform.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence([int(self.master_seed) % 2**64, int(self.stream_id)])
        return np.random.Generator(np.random.Philox(seq))

    def child(self, offset: int) -> "RngStream":
        """A stream for sub-task ``offset``, disjoint from this one."""
        return RngStream(self.master_seed, int(self.stream_id) * 1_000_003 + 7919 + int(offset))

    def uniforms(self, shape) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        return self.generator().random(shape) + 2.0**-54

    def normals(self, shape) -> np.ndarray:
        return self.generator().standard_normal(shape)

    def to_dict(self):
        return {"master_seed": int(self.master_seed), "stream_id": int(self.stream_id)}


def gauss_legendre(order: int):
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    if order < 1:
        raise DomainError("quadrature order must be positive")
    return np.polynomial.legendre.leggauss(order)
