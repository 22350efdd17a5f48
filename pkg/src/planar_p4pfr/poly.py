"""Dense real univariate polynomials and real-root extraction.

Coefficients are stored in ascending order: ``coeffs[i]`` multiplies ``x**i``.
Roots come from the eigenvalues of the balanced companion matrix. With the
numba backend the eigenvalues are computed by a compiled Hessenberg QR
(EISPACK ``hqr``); the numpy backend calls LAPACK ``geev`` through
``numpy.linalg.eigvals``, which balances internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, jit
from .errors import DegenerateDivisor, EigenFailure

TRIM_TOL = 1e-12
IM_TOL = 1e-6
POLISH_ITERS = 2
ROOT_MERGE_TOL = 1e-8
RESIDUAL_TOL = 1e-8
EPS_DIVISOR = 1e-300
HQR_MAX_ITS = 60


@dataclass(frozen=True, eq=False)
class Poly:
    """Real-coefficient polynomial, ascending-degree coefficient vector."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        if c.size == 0:
            raise ValueError("polynomial needs at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    def degree(self, trim_tol: float = TRIM_TOL) -> int:
        return _trimmed_length(self.coeffs, trim_tol) - 1

    def trim(self, trim_tol: float = TRIM_TOL) -> "Poly":
        return Poly(self.coeffs[: _trimmed_length(self.coeffs, trim_tol)])

    def __call__(self, x):
        if np.ndim(x) == 0:
            return poly_eval(self, float(x))
        return np.array([poly_eval(self, float(v)) for v in np.ravel(x)]).reshape(np.shape(x))

    def __mul__(self, other):
        if isinstance(other, Poly):
            return poly_mul(self, other)
        return Poly(self.coeffs * float(other))

    __rmul__ = __mul__

    def __add__(self, other: "Poly") -> "Poly":
        a, b = self.coeffs, _as_coeffs(other)
        out = np.zeros(max(a.size, b.size))
        out[: a.size] += a
        out[: b.size] += b
        return Poly(out)

    def __sub__(self, other: "Poly") -> "Poly":
        return self + Poly(-_as_coeffs(other))

    def __len__(self) -> int:
        return self.coeffs.size

    def __repr__(self) -> str:
        return f"Poly({self.coeffs.tolist()!r})"


@dataclass(frozen=True, eq=False)
class RootSet:
    """Real roots (sorted, deduplicated) and the count of discarded eigenvalues.

    ``multiplicity[i]`` is how many eigenvalues were merged into
    ``real_roots[i]``; ``multiplicity.sum() + complex_count`` equals the
    degree of the trimmed input. ``complex_count`` also absorbs near-real
    eigenvalues that failed the residual check.
    """

    real_roots: np.ndarray
    complex_count: int
    multiplicity: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.real_roots.size

    def __iter__(self):
        return iter(self.real_roots.tolist())


def _as_coeffs(p) -> np.ndarray:
    if isinstance(p, Poly):
        return p.coeffs
    c = np.asarray(p, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise ValueError("polynomial needs at least one coefficient")
    return c


def _trimmed_length(c: np.ndarray, trim_tol: float) -> int:
    return int(_trim_len(c, float(trim_tol)))


# --------------------------------------------------------------------------
# kernels


@jit
def _trim_len(c, trim_tol):
    scale = 0.0
    for i in range(c.shape[0]):
        scale = max(scale, abs(c[i]))
    if scale == 0.0:
        return 1
    n = c.shape[0]
    while n > 1 and abs(c[n - 1]) <= trim_tol * scale:
        n -= 1
    return n


@jit
def _horner(c, x):
    acc = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        acc = acc * x + c[i]
    return acc


@jit
def _horner_with_derivative(c, x):
    p = 0.0
    dp = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        dp = dp * x + p
        p = p * x + c[i]
    return p, dp


@jit
def _convolve(a, b):
    out = np.zeros(a.shape[0] + b.shape[0] - 1)
    for i in range(a.shape[0]):
        ai = a[i]
        for j in range(b.shape[0]):
            out[i + j] += ai * b[j]
    return out


@jit
def _deflate_forward(c, d0, d1):
    # p = q * (d1 x + d0) + rem, working down from the leading coefficient
    n = c.shape[0] - 1
    if n == 0:
        return np.zeros(1), c[0]
    q = np.zeros(n)
    carry = c[n]
    for i in range(n - 1, -1, -1):
        q[i] = carry / d1
        carry = c[i] - d0 * q[i]
    return q, carry


@jit
def _deflate_backward(c, d0, d1):
    # p = q * (d1 x + d0) + rem * x**n, working up from the constant term
    n = c.shape[0] - 1
    if n == 0:
        return np.zeros(1), c[0]
    q = np.zeros(n)
    carry = c[0]
    for i in range(n):
        q[i] = carry / d0
        carry = c[i + 1] - d1 * q[i]
    return q, carry


@jit
def _companion(c):
    # monic companion in upper Hessenberg form; c trimmed, c[-1] != 0
    n = c.shape[0] - 1
    a = np.zeros((n, n))
    lead = c[n]
    for i in range(1, n):
        a[i, i - 1] = 1.0
    for i in range(n):
        a[i, n - 1] = -c[i] / lead
    return a


@jit
def _balance(a):
    radix = 2.0
    sqrdx = radix * radix
    n = a.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            r = 0.0
            col = 0.0
            for j in range(n):
                if j != i:
                    col += abs(a[j, i])
                    r += abs(a[i, j])
            if col != 0.0 and r != 0.0:
                g = r / radix
                f = 1.0
                s = col + r
                while col < g:
                    f *= radix
                    col *= sqrdx
                g = r * radix
                while col > g:
                    f /= radix
                    col /= sqrdx
                if (col + r) / f < 0.95 * s:
                    done = False
                    g = 1.0 / f
                    for j in range(n):
                        a[i, j] *= g
                    for j in range(n):
                        a[j, i] *= f


@jit
def _sign(a, b):
    return abs(a) if b >= 0.0 else -abs(a)


@jit
def _hqr(a, max_its):
    """Eigenvalues of an upper Hessenberg matrix (destroys ``a``).

    Francis double-shift QR after EISPACK ``hqr``. Returns ``(wr, wi, ok)``;
    ``ok`` is False when some eigenvalue needed more than ``max_its`` sweeps.
    """
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i, j])
    nn = n - 1
    t = 0.0
    its = 0
    p = q = r = s = w = x = y = z = 0.0
    while nn >= 0:
        l = nn
        while l >= 1:
            s = abs(a[l - 1, l - 1]) + abs(a[l, l])
            if s == 0.0:
                s = anorm
            if abs(a[l, l - 1]) + s == s:
                a[l, l - 1] = 0.0
                break
            l -= 1
        x = a[nn, nn]
        if l == nn:
            wr[nn] = x + t
            wi[nn] = 0.0
            nn -= 1
            its = 0
            continue
        y = a[nn - 1, nn - 1]
        w = a[nn, nn - 1] * a[nn - 1, nn]
        if l == nn - 1:
            p = 0.5 * (y - x)
            q = p * p + w
            z = np.sqrt(abs(q))
            x += t
            if q >= 0.0:
                z = p + _sign(z, p)
                wr[nn - 1] = x + z
                wr[nn] = x + z
                if z != 0.0:
                    wr[nn] = x - w / z
                wi[nn - 1] = 0.0
                wi[nn] = 0.0
            else:
                wr[nn - 1] = x + p
                wr[nn] = x + p
                wi[nn - 1] = -z
                wi[nn] = z
            nn -= 2
            its = 0
            continue
        if its >= max_its:
            return wr, wi, False
        if its == 10 or its == 20:
            # exceptional shift
            t += x
            for i in range(nn + 1):
                a[i, i] -= x
            s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
            x = 0.75 * s
            y = x
            w = -0.4375 * s * s
        its += 1
        m = nn - 2
        while m >= l:
            z = a[m, m]
            r = x - z
            s = y - z
            p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
            q = a[m + 1, m + 1] - z - r - s
            r = a[m + 2, m + 1]
            s = abs(p) + abs(q) + abs(r)
            p /= s
            q /= s
            r /= s
            if m == l:
                break
            u = abs(a[m, m - 1]) * (abs(q) + abs(r))
            v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
            if u + v == v:
                break
            m -= 1
        for i in range(m + 2, nn + 1):
            a[i, i - 2] = 0.0
            if i != m + 2:
                a[i, i - 3] = 0.0
        for k in range(m, nn):
            if k != m:
                p = a[k, k - 1]
                q = a[k + 1, k - 1]
                r = 0.0
                if k != nn - 1:
                    r = a[k + 2, k - 1]
                x = abs(p) + abs(q) + abs(r)
                if x != 0.0:
                    p /= x
                    q /= x
                    r /= x
            s = _sign(np.sqrt(p * p + q * q + r * r), p)
            if s != 0.0:
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr, wi, True


@jit
def _hqr_eigvals(c, max_its):
    a = _companion(c)
    _balance(a)
    return _hqr(a, max_its)


def _lapack_eigvals(c, max_its):
    try:
        ev = np.linalg.eigvals(_companion(c))
    except np.linalg.LinAlgError:
        n = c.size - 1
        return np.zeros(n), np.zeros(n), False
    return ev.real.copy(), ev.imag.copy(), True


_eigvals = _hqr_eigvals if USE_NUMBA else _lapack_eigvals


@jit
def _deflate_stable(c, d0, d1):
    if abs(d0) <= abs(d1):
        return _deflate_forward(c, d0, d1)
    return _deflate_backward(c, d0, d1)


@jit
def _select_real(c, wr, wi, im_tol, polish_iters, merge_tol, residual_tol):
    n = c.shape[0] - 1
    cmax = 0.0
    for i in range(c.shape[0]):
        cmax = max(cmax, abs(c[i]))
    cand = np.empty(n)
    m = 0
    for i in range(n):
        if abs(wi[i]) <= im_tol * (1.0 + abs(wr[i])):
            x = wr[i]
            px = _horner(c, x)
            for _ in range(polish_iters):
                pv, dp = _horner_with_derivative(c, x)
                if dp == 0.0 or pv == 0.0:
                    break
                xn = x - pv / dp
                pn = _horner(c, xn)
                if abs(pn) <= abs(px):
                    x = xn
                    px = pn
                else:
                    break
            if abs(px) <= residual_tol * cmax * (1.0 + abs(x)) ** n:
                cand[m] = x
                m += 1
    cand = np.sort(cand[:m])
    roots = np.empty(m)
    mult = np.zeros(m, dtype=np.int64)
    k = 0
    for i in range(m):
        if k > 0 and abs(cand[i] - roots[k - 1]) <= merge_tol * (1.0 + abs(roots[k - 1])):
            mult[k - 1] += 1
        else:
            roots[k] = cand[i]
            mult[k] = 1
            k += 1
    return roots[:k], mult[:k], n - m


# --------------------------------------------------------------------------
# public API


def poly_eval(p, x: float) -> float:
    """Evaluate ``p`` at ``x`` by Horner's scheme."""
    return float(_horner(_as_coeffs(p), float(x)))


def poly_mul(a, b) -> Poly:
    """Product of two polynomials (coefficient convolution)."""
    ca, cb = _as_coeffs(a), _as_coeffs(b)
    if USE_NUMBA:
        return Poly(_convolve(ca, cb))
    return Poly(np.convolve(ca, cb))


def poly_deflate_linear(p, d0: float, d1: float, eps_divisor: float = EPS_DIVISOR):
    """Synthetic division of ``p`` by ``d1*x + d0``.

    Returns ``(quotient, remainder)`` with ``p = quotient*(d1*x + d0) + remainder``.
    A zero ``d1`` divides by the constant ``d0``; the remainder is then 0.
    """
    c = _as_coeffs(p)
    if abs(d0) <= eps_divisor and abs(d1) <= eps_divisor:
        raise DegenerateDivisor(f"divisor {d1}*x + {d0} is zero")
    if abs(d1) <= eps_divisor:
        return Poly(c / d0), 0.0
    q, rem = _deflate_forward(c, float(d0), float(d1))
    return Poly(q), float(rem)


def poly_deflate_linear_stable(p, d0: float, d1: float, eps_divisor: float = EPS_DIVISOR):
    """Like :func:`poly_deflate_linear` but picks the division direction.

    For ``|d0| > |d1|`` (divisor root outside the unit disc) the recursion runs
    from the constant term instead, and the remainder multiplies ``x**deg``.
    Either way an exact factor leaves a zero remainder.
    """
    c = _as_coeffs(p)
    if abs(d0) <= abs(d1) or c.size == 1:
        return poly_deflate_linear(c, d0, d1, eps_divisor)
    if abs(d0) <= eps_divisor:
        raise DegenerateDivisor(f"divisor {d1}*x + {d0} is zero")
    q, rem = _deflate_backward(c, float(d0), float(d1))
    return Poly(q), float(rem)


def companion_eigenvalues(p, trim_tol: float = TRIM_TOL) -> np.ndarray:
    """All complex roots of ``p`` as eigenvalues of its companion matrix.

    Negligible leading coefficients are trimmed first, so the count equals the
    trimmed degree.
    """
    c = _as_coeffs(p)
    c = c[: _trimmed_length(c, trim_tol)]
    if c.size < 2:
        raise ValueError("companion matrix needs degree >= 1")
    wr, wi, ok = _eigvals(c, HQR_MAX_ITS)
    if not ok:
        raise EigenFailure("QR iteration did not converge")
    return wr + 1j * wi


def real_roots(
    p,
    im_tol: float = IM_TOL,
    polish_iters: int = POLISH_ITERS,
    *,
    trim_tol: float = TRIM_TOL,
    merge_tol: float = ROOT_MERGE_TOL,
    residual_tol: float = RESIDUAL_TOL,
) -> RootSet:
    """Real roots of ``p``, Newton-polished and merged.

    Eigenvalues with ``|Im| <= im_tol*(1 + |Re|)`` count as real. Each one gets
    up to ``polish_iters`` safeguarded Newton steps; survivors must pass
    ``|p(x)| <= residual_tol * max|c| * (1 + |x|)**deg``.
    """
    c = _as_coeffs(p)
    c = c[: _trimmed_length(c, trim_tol)]
    if c.size < 2:
        raise ValueError("real_roots needs degree >= 1")
    wr, wi, ok = _eigvals(c, HQR_MAX_ITS)
    if not ok:
        raise EigenFailure("QR iteration did not converge")
    roots, mult, discarded = _select_real(
        c, wr, wi, float(im_tol), int(polish_iters), float(merge_tol), float(residual_tol)
    )
    return RootSet(real_roots=roots, complex_count=int(discarded), multiplicity=mult)
