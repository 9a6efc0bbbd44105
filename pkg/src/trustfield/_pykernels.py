"""Pure-Python numerical kernels.

Mirrors the compiled ``_kernels`` extension function for function.  Used
when the extension is not built or when ``TRUSTFIELD_PURE_PYTHON`` is set.
"""

from math import atan, exp, isfinite, lgamma, log, log1p, pi, sqrt

_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 5000
# integer dof up to this use the finite trigonometric series away from the tails
_SERIES_MAX_DOF = 64
# series only for t >= -3, where F >= Phi(-3) for every dof so the
# cancellation in 1/2 + A/2 costs no relative accuracy; the left tail goes
# through the continued fraction, which converges quickly there
_SERIES_MIN_T = -3.0

U_CLAMP = 30.0
DENOM_FLOOR = 1e-12

STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_BAD_WEIGHT = 2


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < _EPS:
            break
    return h


def _ibeta(a, b, x, y, lbeta):
    """I_x(a, b) given ``y == 1 - x`` computed independently."""
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    front = exp(a * log(x) + b * log(y) - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def betainc_reg(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0.0 and b > 0.0):
        raise ValueError("betainc_reg requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("betainc_reg requires 0 <= x <= 1")
    lbeta = lgamma(a) + lgamma(b) - lgamma(a + b)
    return _ibeta(a, b, x, 1.0 - x, lbeta)


def _t_lbeta(nu):
    return lgamma(0.5 * nu) + lgamma(0.5) - lgamma(0.5 * nu + 0.5)


def _t_cdf_series(t, n, q, c2):
    # closed-form CDF for integer dof n; q = n + t^2, c2 = cos^2 = n / q
    if n % 2:
        acc = 0.0
        term = 1.0
        k = 1
        while 2 * k - 1 <= n - 2:
            acc += term
            term *= c2 * (2.0 * k) / (2.0 * k + 1.0)
            k += 1
        if n == 1:
            a = atan(t)
        else:
            a = atan(t / sqrt(n)) + t * sqrt(n) / q * acc
        return 0.5 + a / pi
    acc = 0.0
    term = 1.0
    k = 1
    while 2 * k <= n:
        acc += term
        term *= c2 * (2.0 * k - 1.0) / (2.0 * k)
        k += 1
    return 0.5 + 0.5 * t / sqrt(q) * acc


def _t_cdf(t, nu, lbeta):
    if t == 0.0:
        return 0.5
    t2 = t * t
    denom = nu + t2
    x = nu / denom
    if t >= _SERIES_MIN_T and nu <= _SERIES_MAX_DOF and nu == int(nu):
        return _t_cdf_series(t, int(nu), denom, x)
    tail = 0.5 * _ibeta(0.5 * nu, 0.5, x, t2 / denom, lbeta)
    if t < 0.0:
        return tail
    return 1.0 - tail


def _t_logpdf_const(nu):
    return lgamma(0.5 * nu + 0.5) - lgamma(0.5 * nu) - 0.5 * log(nu * pi)


def _t_pdf(x, nu, logc):
    return exp(logc - 0.5 * (nu + 1.0) * log1p(x * x / nu))


def t_cdf(t, nu):
    return _t_cdf(t, nu, _t_lbeta(nu))


def t_pdf(x, nu):
    return _t_pdf(x, nu, _t_logpdf_const(nu))


def fit_robit(X, s, nu, ridge, tol, max_iter):
    """Robit EM/IRLS fit of a two-feature coefficient vector.

    ``X`` is a (T, 2) sequence of feature rows and ``s`` the 0/1 outcomes.
    Returns ``(b0, b1, iterations, converged, status)``; on a non-OK
    status the coefficients are those of the last completed iterate.
    """
    if len(X) != len(s) or any(len(r) != 2 for r in X):
        raise ValueError("fit_robit expects X of shape (T, 2) and s of length T")
    rows = [(float(r[0]), float(r[1])) for r in X]
    outcomes = [float(v) for v in s]
    nu = float(nu)
    nu2 = nu + 2.0
    scale = sqrt(1.0 + 2.0 / nu)
    lb_nu = _t_lbeta(nu)
    lb_nu2 = _t_lbeta(nu2)
    logc = _t_logpdf_const(nu)

    b0 = 1.0
    b1 = 1.0
    for k in range(1, max_iter + 1):
        s00 = ridge
        s01 = 0.0
        s11 = ridge
        r0 = 0.0
        r1 = 0.0
        for (x0, x1), st in zip(rows, outcomes):
            u = x0 * b0 + x1 * b1
            if u > U_CLAMP:
                u = U_CLAMP
            elif u < -U_CLAMP:
                u = -U_CLAMP
            sign = 2.0 * st - 1.0
            # s - (2s-1) F(-v) == F((2s-1) v) for s in {0, 1}
            num = _t_cdf(sign * scale * u, nu2, lb_nu2)
            den = _t_cdf(sign * u, nu, lb_nu)
            if num < DENOM_FLOOR:
                num = DENOM_FLOOR
            if den < DENOM_FLOOR:
                den = DENOM_FLOOR
            w = num / den
            if not (w > 0.0 and isfinite(w)):
                return b0, b1, k, False, STATUS_BAD_WEIGHT
            z = u + sign * _t_pdf(u, nu, logc) / num
            s00 += w * x0 * x0
            s01 += w * x0 * x1
            s11 += w * x1 * x1
            r0 += w * x0 * z
            r1 += w * x1 * z
        det = s00 * s11 - s01 * s01
        if not det > 1e-14 * abs(s00 * s11) or det == 0.0:
            return b0, b1, k, False, STATUS_SINGULAR
        n0 = (s11 * r0 - s01 * r1) / det
        n1 = (s00 * r1 - s01 * r0) / det
        step = max(abs(n0 - b0), abs(n1 - b1))
        b0 = n0
        b1 = n1
        if step < tol:
            return b0, b1, k, True, STATUS_OK
    return b0, b1, max_iter, False, STATUS_OK
