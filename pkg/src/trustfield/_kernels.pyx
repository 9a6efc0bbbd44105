# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels: Student-t special functions and the robit fit.

Same call signatures and return conventions as ``_pykernels``.
"""

from libc.math cimport atan, exp, fabs, floor, isfinite, lgamma, log, log1p, sqrt, M_PI

cdef double _EPS = 1e-16
cdef double _FPMIN = 1e-300
cdef int _MAXIT = 5000
cdef double _SERIES_MAX_DOF = 64.0
cdef double _SERIES_MIN_T = -3.0

U_CLAMP = 30.0
DENOM_FLOOR = 1e-12
STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_BAD_WEIGHT = 2

cdef double _U_CLAMP = 30.0
cdef double _DENOM_FLOOR = 1e-12


cdef inline double _betacf(double a, double b, double x) nogil:
    cdef double qab = a + b
    cdef double qap = a + 1.0
    cdef double qam = a - 1.0
    cdef double c = 1.0
    cdef double d = 1.0 - qab * x / qap
    cdef double h, aa, de
    cdef int m, m2
    if fabs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if fabs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if fabs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        de = d * c
        h *= de
        if fabs(de - 1.0) < _EPS:
            break
    return h


cdef inline double _ibeta(double a, double b, double x, double y, double lbeta) nogil:
    cdef double front
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    front = exp(a * log(x) + b * log(y) - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


cdef inline double _t_lbeta(double nu) nogil:
    return lgamma(0.5 * nu) + lgamma(0.5) - lgamma(0.5 * nu + 0.5)


cdef inline double _t_cdf_series(double t, int n, double q, double c2) nogil:
    cdef double acc = 0.0, term = 1.0, a
    cdef int k = 1
    if n % 2:
        while 2 * k - 1 <= n - 2:
            acc += term
            term *= c2 * (2.0 * k) / (2.0 * k + 1.0)
            k += 1
        if n == 1:
            a = atan(t)
        else:
            a = atan(t / sqrt(<double>n)) + t * sqrt(<double>n) / q * acc
        return 0.5 + a / M_PI
    while 2 * k <= n:
        acc += term
        term *= c2 * (2.0 * k - 1.0) / (2.0 * k)
        k += 1
    return 0.5 + 0.5 * t / sqrt(q) * acc


cdef inline double _t_cdf(double t, double nu, double lbeta) nogil:
    cdef double t2, denom, tail, x
    if t == 0.0:
        return 0.5
    t2 = t * t
    denom = nu + t2
    x = nu / denom
    if t >= _SERIES_MIN_T and nu <= _SERIES_MAX_DOF and nu == floor(nu):
        return _t_cdf_series(t, <int>nu, denom, x)
    tail = 0.5 * _ibeta(0.5 * nu, 0.5, x, t2 / denom, lbeta)
    if t < 0.0:
        return tail
    return 1.0 - tail


cdef inline double _t_logpdf_const(double nu) nogil:
    return lgamma(0.5 * nu + 0.5) - lgamma(0.5 * nu) - 0.5 * log(nu * M_PI)


cdef inline double _t_pdf(double x, double nu, double logc) nogil:
    return exp(logc - 0.5 * (nu + 1.0) * log1p(x * x / nu))


cdef inline double _t_pdf_int(double x, int n, double norm) nogil:
    # integer dof: (1 + x^2/n)^(-(n+1)/2) by repeated multiplication
    cdef double base = 1.0 / (1.0 + x * x / n)
    cdef double out = norm
    cdef int k
    for k in range((n + 1) // 2):
        out *= base
    if n % 2 == 0:
        out *= sqrt(base)
    return out


def betainc_reg(double a, double b, double x):
    """Regularized incomplete beta function I_x(a, b)."""
    if not (a > 0.0 and b > 0.0):
        raise ValueError("betainc_reg requires a > 0 and b > 0")
    if not (0.0 <= x <= 1.0):
        raise ValueError("betainc_reg requires 0 <= x <= 1")
    cdef double lbeta = lgamma(a) + lgamma(b) - lgamma(a + b)
    return _ibeta(a, b, x, 1.0 - x, lbeta)


def t_cdf(double t, double nu):
    return _t_cdf(t, nu, _t_lbeta(nu))


def t_pdf(double x, double nu):
    return _t_pdf(x, nu, _t_logpdf_const(nu))


def fit_robit(const double[:, :] X, const double[:] s, double nu, double ridge,
              double tol, int max_iter):
    """Robit EM/IRLS fit; returns ``(b0, b1, iterations, converged, status)``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t t
    cdef int k
    cdef double nu2 = nu + 2.0
    cdef double scale = sqrt(1.0 + 2.0 / nu)
    cdef double lb_nu = _t_lbeta(nu)
    cdef double lb_nu2 = _t_lbeta(nu2)
    cdef double logc = _t_logpdf_const(nu)
    cdef double norm = exp(logc)
    cdef bint int_dof = nu == floor(nu) and nu <= _SERIES_MAX_DOF
    cdef int n_dof = <int>nu if int_dof else 0
    cdef double b0 = 1.0, b1 = 1.0
    cdef double s00, s01, s11, r0, r1, x0, x1, u, sign, num, den, w, z
    cdef double det, n0, n1, step
    if s.shape[0] != n or X.shape[1] != 2:
        raise ValueError("fit_robit expects X of shape (T, 2) and s of length T")
    for k in range(1, max_iter + 1):
        s00 = ridge
        s01 = 0.0
        s11 = ridge
        r0 = 0.0
        r1 = 0.0
        for t in range(n):
            x0 = X[t, 0]
            x1 = X[t, 1]
            u = x0 * b0 + x1 * b1
            if u > _U_CLAMP:
                u = _U_CLAMP
            elif u < -_U_CLAMP:
                u = -_U_CLAMP
            sign = 2.0 * s[t] - 1.0
            num = _t_cdf(sign * scale * u, nu2, lb_nu2)
            den = _t_cdf(sign * u, nu, lb_nu)
            if num < _DENOM_FLOOR:
                num = _DENOM_FLOOR
            if den < _DENOM_FLOOR:
                den = _DENOM_FLOOR
            w = num / den
            if not (w > 0.0 and isfinite(w)):
                return b0, b1, k, False, STATUS_BAD_WEIGHT
            if int_dof:
                z = u + sign * _t_pdf_int(u, n_dof, norm) / num
            else:
                z = u + sign * _t_pdf(u, nu, logc) / num
            s00 += w * x0 * x0
            s01 += w * x0 * x1
            s11 += w * x1 * x1
            r0 += w * x0 * z
            r1 += w * x1 * z
        det = s00 * s11 - s01 * s01
        if not det > 1e-14 * fabs(s00 * s11) or det == 0.0:
            return b0, b1, k, False, STATUS_SINGULAR
        n0 = (s11 * r0 - s01 * r1) / det
        n1 = (s00 * r1 - s01 * r0) / det
        step = fabs(n0 - b0)
        if fabs(n1 - b1) > step:
            step = fabs(n1 - b1)
        b0 = n0
        b1 = n1
        if step < tol:
            return b0, b1, k, True, STATUS_OK
    return b0, b1, max_iter, False, STATUS_OK
