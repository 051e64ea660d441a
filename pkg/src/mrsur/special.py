"""Univariate and bivariate standard normal distribution functions.

The bivariate CDF follows Genz's double-precision refinement of the
Drezner & Wesolowsky (1989) method: Gauss-Legendre quadrature of the
Plackett derivative in ``arcsin(rho)`` when ``|rho| < 0.925``, and an
asymptotic expansion plus quadrature of the remainder above that.
Absolute accuracy is of order 1e-15.
"""
import math

import numpy as np
from scipy.special import ndtr

from ._accel import USE_NUMBA, njit

__all__ = ["normal_cdf", "bvn_cdf"]

_TWOPI = 2.0 * math.pi
_SQRT_TWOPI = math.sqrt(_TWOPI)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

# Gauss-Legendre half-rules (positive abscissae) of order 6, 12 and 20,
# rescaled below to the interval [0, 2].
_GL_X = (
    np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
              0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
              0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
              0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
              0.07652652113349733]),
)
_GL_W = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
              0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
              0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
              0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
              0.1527533871307259]),
)
_NODES = tuple(np.concatenate([1.0 - x, 1.0 + x]) for x in _GL_X)
_WEIGHTS = tuple(np.concatenate([w, w]) for w in _GL_W)
_X6, _X12, _X20 = _NODES
_W6, _W12, _W20 = _WEIGHTS


def normal_cdf(x):
    """Standard normal CDF. Scalars go through ``math.erfc``."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) * _INV_SQRT2)
    return ndtr(np.asarray(x, dtype=float))


# --------------------------------------------------------------------------
# numba kernel
# --------------------------------------------------------------------------


@njit
def _phi_nb(x):
    return 0.5 * math.erfc(-x * 0.7071067811865476)


@njit
def _bvnu_nb(h, k, r, x6, w6, x12, w12, x20, w20):
    """P(X > h, Y > k) for finite h, k and -1 < r < 1."""
    if r == 0.0:
        return _phi_nb(-h) * _phi_nb(-k)
    hk = h * k
    ar = abs(r)
    if ar < 0.925:
        if ar < 0.3:
            x, w = x6, w6
        elif ar < 0.75:
            x, w = x12, w12
        else:
            x, w = x20, w20
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        acc = 0.0
        for i in range(x.shape[0]):
            sn = math.sin(asr * x[i])
            acc += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        return acc * asr / _TWOPI + _phi_nb(-h) * _phi_nb(-k)

    if r < 0.0:
        k = -k
        hk = -hk
    bvn = 0.0
    as_ = (1.0 - r) * (1.0 + r)
    a = math.sqrt(as_)
    bs = (h - k) * (h - k)
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    asr = -0.5 * (bs / as_ + hk)
    if asr > -100.0:
        bvn = a * math.exp(asr) * (
            1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_)
    if hk > -100.0:
        b = math.sqrt(bs)
        sp = _SQRT_TWOPI * _phi_nb(-b / a)
        bvn -= math.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
    a *= 0.5
    acc = 0.0
    for i in range(x20.shape[0]):
        xs = (a * x20[i]) ** 2
        asr = -0.5 * (bs / xs + hk)
        if asr > -100.0:
            sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
            rs = math.sqrt(1.0 - xs)
            ep = math.exp(-0.5 * hk * xs / ((1.0 + rs) ** 2)) / rs
            acc += w20[i] * math.exp(asr) * (sp - ep)
    bvn = (a * acc - bvn) / _TWOPI
    if r > 0.0:
        return bvn + _phi_nb(-max(h, k))
    return -bvn + max(0.0, _phi_nb(-h) - _phi_nb(-k))


@njit
def _bvn_scalar_nb(a, b, r, x6, w6, x12, w12, x20, w20):
    if r >= 1.0:
        return _phi_nb(min(a, b))
    if r <= -1.0:
        return max(0.0, _phi_nb(a) + _phi_nb(b) - 1.0)
    if a == -np.inf or b == -np.inf:
        return 0.0
    if a == np.inf:
        return _phi_nb(b)
    if b == np.inf:
        return _phi_nb(a)
    p = _bvnu_nb(-a, -b, r, x6, w6, x12, w12, x20, w20)
    return min(1.0, max(0.0, p))


@njit
def _bvn_cdf_nb(a, b, r, x6, w6, x12, w12, x20, w20):
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        out[i] = _bvn_scalar_nb(a[i], b[i], r[i], x6, w6, x12, w12, x20, w20)
    return out


def _bvn_numba(a, b, r):
    return _bvn_cdf_nb(a, b, r, _X6, _W6, _X12, _W12, _X20, _W20)


# --------------------------------------------------------------------------
# numpy kernel
# --------------------------------------------------------------------------


def _bvnu_low_np(h, k, r, x, w):
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = 0.5 * np.arcsin(r)
    sn = np.sin(asr[:, None] * x[None, :])
    vals = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn)) @ w
    return vals * asr / _TWOPI + ndtr(-h) * ndtr(-k)


def _bvnu_high_np(h, k, r):
    neg = r < 0.0
    k = np.where(neg, -k, k)
    hk = h * k
    as_ = (1.0 - r) * (1.0 + r)
    a = np.sqrt(as_)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    asr = -0.5 * (bs / as_ + hk)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        bvn = np.where(
            asr > -100.0,
            a * np.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0
                               + c * d * as_ * as_),
            0.0,
        )
        b = np.sqrt(bs)
        tail = (np.exp(-0.5 * hk) * _SQRT_TWOPI * ndtr(-b / a) * b
                * (1.0 - c * bs * (1.0 - d * bs) / 3.0))
        bvn = bvn - np.where(hk > -100.0, tail, 0.0)
        a2 = 0.5 * a
        xs = (a2[:, None] * _X20[None, :]) ** 2
        asr = -0.5 * (bs[:, None] / xs + hk[:, None])
        sp = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-0.5 * hk[:, None] * xs / (1.0 + rs) ** 2) / rs
        terms = np.where(asr > -100.0, np.exp(asr) * (sp - ep), 0.0)
    bvn = (a2 * (terms @ _W20) - bvn) / _TWOPI
    pos = bvn + ndtr(-np.maximum(h, k))
    negv = -bvn + np.maximum(0.0, ndtr(-h) - ndtr(-k))
    return np.where(neg, negv, pos)


def _bvn_numpy(a, b, r):
    out = np.empty(a.shape[0])
    done = np.zeros(a.shape[0], dtype=bool)

    m = r >= 1.0
    out[m] = ndtr(np.minimum(a[m], b[m]))
    done |= m
    m = ~done & (r <= -1.0)
    out[m] = np.maximum(0.0, ndtr(a[m]) + ndtr(b[m]) - 1.0)
    done |= m
    m = ~done & ((a == -np.inf) | (b == -np.inf))
    out[m] = 0.0
    done |= m
    m = ~done & (a == np.inf)
    out[m] = ndtr(b[m])
    done |= m
    m = ~done & (b == np.inf)
    out[m] = ndtr(a[m])
    done |= m
    m = ~done & (r == 0.0)
    out[m] = ndtr(a[m]) * ndtr(b[m])
    done |= m

    h, k, ar = -a, -b, np.abs(r)
    for lo, hi, x, w in ((0.0, 0.3, _X6, _W6), (0.3, 0.75, _X12, _W12),
                         (0.75, 0.925, _X20, _W20)):
        m = ~done & (ar >= lo) & (ar < hi)
        if m.any():
            out[m] = _bvnu_low_np(h[m], k[m], r[m], x, w)
        done |= m
    m = ~done
    if m.any():
        out[m] = _bvnu_high_np(h[m], k[m], r[m])
    return np.clip(out, 0.0, 1.0)


def bvn_cdf(a, b, rho):
    """P(X <= a, Y <= b) for a standard bivariate normal with correlation rho.

    Arguments broadcast against each other; a scalar comes back for scalar
    input. ``rho = +/-1`` are handled as the degenerate limits and infinite
    limits saturate.
    """
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0 and np.ndim(rho) == 0
    a, b, rho = np.broadcast_arrays(np.asarray(a, dtype=float),
                                    np.asarray(b, dtype=float),
                                    np.asarray(rho, dtype=float))
    shape = a.shape
    a = np.ascontiguousarray(a).ravel()
    b = np.ascontiguousarray(b).ravel()
    rho = np.ascontiguousarray(rho).ravel()
    if np.isnan(a).any() or np.isnan(b).any() or np.isnan(rho).any():
        raise ValueError("bvn_cdf: NaN argument")
    if (np.abs(rho) > 1.0).any():
        raise ValueError("bvn_cdf: correlation outside [-1, 1]")
    out = _bvn_numba(a, b, rho) if USE_NUMBA else _bvn_numpy(a, b, rho)
    if scalar:
        return float(out[0])
    return out.reshape(shape)
