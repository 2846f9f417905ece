# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled event kernel.

Same contract as ``ckf._pykernel.event_update``.  Prior precisions are
formed from the eigendecomposition of the previous posterior covariance,
which the drift update needs anyway; posterior covariances come from a
Cholesky inverse of the posterior precision.
"""

from libc.math cimport exp, log, sqrt, fabs, expm1, nextafter, INFINITY, isinf
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memset

cimport scipy.linalg.cython_lapack as lapack
cimport scipy.special.cython_special as sc

cdef double EIG_FLOOR = 1e-10
cdef double MAX_STEP = 1.0
cdef double CURVATURE_GUARD = 1e-8
cdef double A_MIN = -40.0
cdef double A_MAX = 15.0
cdef double SQRT2 = 1.4142135623730951
cdef double SQRT_2_OVER_PI = 0.7978845608028654
cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double LOG_2PI = 1.8378770664093453
cdef double LOG_SQRT_2PI_E = 1.4189385332046727


cdef struct Side:
    int d
    int frozen
    int learn
    int mode
    double fixed_alpha
    double dt
    double a
    double a_prev
    double prec     # precision of the anchor term pulling a toward a_prev
    double gamma    # step damping
    double logdet_prior
    double logdet_post
    double *prev_mu
    double *prev_cov
    double *lam
    double *Q        # column-major eigenvectors: Q[i + k*d] is entry i of vector k
    double *Pp       # prior precision
    double *h        # Pp @ prev_mu
    double *mu
    double *cov
    double *s        # v_k^2 + M_kk for the drift step


cdef inline double phi(double x) noexcept nogil:
    if isinf(x):
        return 0.0
    return INV_SQRT_2PI * exp(-0.5 * x * x)


cdef inline double xphi(double x) noexcept nogil:
    if isinf(x):
        return 0.0
    return x * INV_SQRT_2PI * exp(-0.5 * x * x)


cdef void lower_tail(double a, double b, double *logz, double *mean, double *r2) noexcept nogil:
    cdef double hb = 0.5 * b * b
    cdef double ex_b = sc.erfcx(-b / SQRT2)
    cdef double h, e, den
    if isinf(a):
        logz[0] = -hb + log(0.5 * ex_b)
        mean[0] = -SQRT_2_OVER_PI / ex_b
        r2[0] = -b * SQRT_2_OVER_PI / ex_b
        return
    h = 0.5 * (b - a) * (b + a)
    e = exp(h)
    den = ex_b - e * sc.erfcx(-a / SQRT2)
    if not den > 0.0:
        logz[0] = -INFINITY
        mean[0] = 0.5 * (a + b)
        r2[0] = 0.5 * (a * a + b * b) - 1.0
        return
    logz[0] = -hb + log(0.5 * den)
    mean[0] = SQRT_2_OVER_PI * expm1(h) / den
    r2[0] = SQRT_2_OVER_PI * (a * e - b) / den


cdef void std_trunc_stats(double a, double b, double *logz, double *mean, double *r2) noexcept nogil:
    cdef double z
    if a >= 0.0:
        lower_tail(-b, -a, logz, mean, r2)
        mean[0] = -mean[0]
    elif b <= 0.0:
        lower_tail(a, b, logz, mean, r2)
    else:
        z = sc.ndtr(b) - sc.ndtr(a)
        logz[0] = log(z)
        mean[0] = (phi(a) - phi(b)) / z
        r2[0] = (xphi(a) - xphi(b)) / z


def trunc_norm_mean(double center, double sigma, double l, double r):
    """Compiled twin of ``ckf.probit.trunc_norm_mean`` (used for cross-checks)."""
    cdef double logz, m1, r2, out
    if not l < r:
        raise ValueError("empty truncation interval")
    std_trunc_stats((l - center) / sigma, (r - center) / sigma, &logz, &m1, &r2)
    out = center + sigma * m1
    if out <= l:
        out = nextafter(l, INFINITY)
    if out >= r:
        out = nextafter(r, -INFINITY)
    return out


cdef inline double side_rate(Side *s) noexcept nogil:
    if s.mode == 0:
        return 0.0
    if s.mode == 1:
        return s.fixed_alpha
    return exp(s.a)


cdef void build_prior(Side *s) noexcept nogil:
    """Prior precision, its action on the prior mean, and log-determinant."""
    cdef int d = s.d, i, j, k
    cdef double add = side_rate(s) * s.dt if s.dt > 0 else 0.0
    cdef double acc, inv_k
    cdef double *inv = s.s   # borrowed scratch; s is rebuilt before each drift step
    s.logdet_prior = 0.0
    for k in range(d):
        inv[k] = 1.0 / (s.lam[k] + add)
        s.logdet_prior += log(s.lam[k] + add)
    for i in range(d):
        for j in range(i, d):
            acc = 0.0
            for k in range(d):
                acc += s.Q[i + k * d] * inv[k] * s.Q[j + k * d]
            s.Pp[i * d + j] = acc
            s.Pp[j * d + i] = acc
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += s.Pp[i * d + j] * s.prev_mu[j]
        s.h[i] = acc


cdef int init_side(Side *s, double[::1] mu, double[:, ::1] cov, double *work, int lwork) noexcept nogil:
    cdef int d = s.d, i, j, k, info = 0
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef double add, acc
    cdef int floored = 0
    for i in range(d):
        s.prev_mu[i] = mu[i]
        s.mu[i] = mu[i]
        for j in range(d):
            s.prev_cov[i * d + j] = cov[i, j]
    if s.frozen:
        memcpy(s.cov, s.prev_cov, d * d * sizeof(double))
        s.logdet_prior = 0.0
        return 0
    memcpy(s.Q, s.prev_cov, d * d * sizeof(double))
    lapack.dsyev(&jobz, &uplo, &d, s.Q, &d, s.lam, work, &lwork, &info)
    if info != 0:
        return -1
    for k in range(d):
        if s.lam[k] < EIG_FLOOR:
            s.lam[k] = EIG_FLOOR
            floored = 1
    if floored:
        for i in range(d):
            for j in range(i, d):
                acc = 0.0
                for k in range(d):
                    acc += s.Q[i + k * d] * s.lam[k] * s.Q[j + k * d]
                s.prev_cov[i * d + j] = acc
                s.prev_cov[j * d + i] = acc
    build_prior(s)
    add = side_rate(s) * s.dt if s.dt > 0 else 0.0
    memcpy(s.cov, s.prev_cov, d * d * sizeof(double))
    if add > 0:
        for i in range(d):
            s.cov[i * d + i] += add
    return 0


cdef int gaussian_update(Side *s, Side *o, double ey, double sigma, double *P, double *rhs) noexcept nogil:
    """q(s) <- N given q(o) and E[y]; returns LAPACK info."""
    cdef int d = s.d, i, j, info = 0
    cdef char uplo = b'L'
    cdef double s2 = sigma * sigma, acc
    if s.frozen:
        return 0
    for i in range(d):
        for j in range(d):
            P[i * d + j] = s.Pp[i * d + j] + (o.mu[i] * o.mu[j] + o.cov[i * d + j]) / s2
    lapack.dpotrf(&uplo, &d, P, &d, &info)
    if info != 0:
        return info
    acc = 0.0
    for i in range(d):
        acc += log(P[i * d + i])
    s.logdet_post = -2.0 * acc
    lapack.dpotri(&uplo, &d, P, &d, &info)
    if info != 0:
        return info
    # column-major lower triangle == row-major upper triangle
    for i in range(d):
        for j in range(i, d):
            s.cov[i * d + j] = P[i * d + j]
            s.cov[j * d + i] = P[i * d + j]
    for i in range(d):
        rhs[i] = ey * o.mu[i] / s2 + s.h[i]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += s.cov[i * d + j] * rhs[j]
        s.mu[i] = acc
    return 0


cdef double kl_side(Side *s) noexcept nogil:
    cdef int d = s.d, i, j
    cdef double tr = 0.0, quad = 0.0, di, acc
    if s.frozen:
        return 0.0
    for i in range(d):
        di = s.mu[i] - s.prev_mu[i]
        acc = 0.0
        for j in range(d):
            tr += s.Pp[i * d + j] * s.cov[i * d + j]
            acc += s.Pp[i * d + j] * (s.mu[j] - s.prev_mu[j])
        quad += di * acc
    return 0.5 * (tr + quad - d + s.logdet_prior - s.logdet_post)


cdef void drift_stats(Side *s) noexcept nogil:
    cdef int d = s.d, i, j, k
    cdef double v, m, acc
    for k in range(d):
        v = 0.0
        for i in range(d):
            v += (s.mu[i] - s.prev_mu[i]) * s.Q[i + k * d]
        m = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += s.cov[i * d + j] * s.Q[j + k * d]
            m += s.Q[i + k * d] * acc
        s.s[k] = v * v + m


cdef inline int has_prior(Side *s) noexcept nogil:
    return s.prec > 0


cdef double drift_obj(Side *s, double a) noexcept nogil:
    cdef int k
    cdef double ea = exp(a) * s.dt, den, acc = 0.0
    for k in range(s.d):
        den = s.lam[k] + ea
        acc += log(den) + s.s[k] / den
    acc = -0.5 * acc
    if has_prior(s):
        acc -= 0.5 * s.prec * (a - s.a_prev) * (a - s.a_prev)
    return acc


cdef void lik_derivs(Side *s, double a, double *f1, double *f2) noexcept nogil:
    cdef int k
    cdef double ea = exp(a) * s.dt, den, eta, ratio
    cdef double g1 = 0.0, g2a = 0.0, g2b = 0.0
    for k in range(s.d):
        den = s.lam[k] + ea
        eta = ea / den
        ratio = s.s[k] / den
        g1 += eta * (1.0 - ratio)
        g2a += eta * (1.0 - eta)
        g2b += eta * (1.0 - 2.0 * eta) * ratio
    f1[0] = -0.5 * g1
    f2[0] = -0.5 * g2a + 0.5 * g2b


cdef void drift_derivs(Side *s, double a, double *f1, double *f2) noexcept nogil:
    lik_derivs(s, a, f1, f2)
    if has_prior(s):
        f1[0] -= s.prec * (a - s.a_prev)
        f2[0] -= s.prec


cdef void move_drift(Side *s) noexcept nogil:
    cdef double f1, f2, step, f0, a0 = s.a
    cdef int it
    if not s.learn:
        return
    drift_stats(s)
    drift_derivs(s, a0, &f1, &f2)
    if not f2 < -CURVATURE_GUARD:
        return
    step = -f1 / f2
    if step > MAX_STEP:
        step = MAX_STEP
    elif step < -MAX_STEP:
        step = -MAX_STEP
    step *= s.gamma
    if a0 + step < A_MIN:
        step = A_MIN - a0
    elif a0 + step > A_MAX:
        step = A_MAX - a0
    if step == 0.0:
        return
    f0 = drift_obj(s, a0)
    for it in range(40):
        if drift_obj(s, a0 + step) >= f0:
            s.a = a0 + step
            build_prior(s)
            return
        step *= 0.5


cdef double dot(double *x, double *y, int d) noexcept nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(d):
        acc += x[i] * y[i]
    return acc


cdef double elbo(Side *u, Side *w, int ordinal, double obs, double lo, double hi,
                 double sigma, double m_ij) noexcept nogil:
    cdef int d = u.d, i, j
    cdef double ey, ey2, ent = 0.0, logz, m1, r2, var, cross = 0.0, resid, out
    if ordinal:
        std_trunc_stats((lo - m_ij) / sigma, (hi - m_ij) / sigma, &logz, &m1, &r2)
        ey = m_ij + sigma * m1
        var = 1.0 + r2 - m1 * m1
        if var < 0.0:
            var = 0.0
        ey2 = sigma * sigma * var + ey * ey
        ent = LOG_SQRT_2PI_E + log(sigma) + logz + 0.5 * r2
    else:
        ey = obs
        ey2 = obs * obs
    for i in range(d):
        for j in range(d):
            cross += (u.cov[i * d + j] + u.mu[i] * u.mu[j]) * (w.cov[i * d + j] + w.mu[i] * w.mu[j])
    resid = ey2 - 2.0 * ey * dot(u.mu, w.mu, d) + cross
    out = -0.5 * (LOG_2PI + 2.0 * log(sigma)) - resid / (2.0 * sigma * sigma) + ent
    out -= kl_side(u) + kl_side(w)
    if u.learn and has_prior(u):
        out -= 0.5 * u.prec * (u.a - u.a_prev) * (u.a - u.a_prev)
    if w.learn and has_prior(w):
        out -= 0.5 * w.prec * (w.a - w.a_prev) * (w.a - w.a_prev)
    return out


cdef double* carve(Side *s, double *buf, int d) noexcept nogil:
    s.prev_mu = buf; buf += d
    s.prev_cov = buf; buf += d * d
    s.lam = buf; buf += d
    s.Q = buf; buf += d * d
    s.Pp = buf; buf += d * d
    s.h = buf; buf += d
    s.mu = buf; buf += d
    s.cov = buf; buf += d * d
    s.s = buf; buf += d
    return buf


def event_update(
    double[::1] mu_u, double[:, ::1] cov_u, double[::1] mu_w, double[:, ::1] cov_w,
    double dt_u, double dt_w,
    int mode, double fixed_alpha,
    double a_u, double prec_u, double gamma_u, bint learn_u,
    double a_w, double prec_w, double gamma_w, bint learn_w,
    bint frozen_u, bint frozen_w,
    bint ordinal, double obs, double lo, double hi, double sigma,
    int iters, double tol,
    double[::1] elbo_out,
):
    """Compiled twin of ``ckf._pykernel.event_update``."""
    cdef int d = mu_u.shape[0]
    cdef int lwork = 3 * d + 64 * d
    cdef int per_side = 5 * d + 4 * d * d
    cdef double *buf
    cdef double *work
    cdef double *P
    cdef double *rhs
    cdef double *old_u
    cdef double *old_w
    cdef Side u, w
    cdef int n = 0, k, i, j, info, converged = 0
    cdef double ey = obs, m_ij = 0.0, move, logz, m1, r2, out

    if mu_w.shape[0] != d or cov_u.shape[0] != d or cov_u.shape[1] != d \
            or cov_w.shape[0] != d or cov_w.shape[1] != d:
        raise ValueError("dimension mismatch")
    if elbo_out.shape[0] < iters:
        raise ValueError("elbo buffer shorter than iters")

    buf = <double *> malloc((2 * per_side + lwork + d * d + 3 * d) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        work = carve(&w, carve(&u, buf, d), d)
        P = work + lwork
        rhs = P + d * d
        old_u = rhs + d
        old_w = old_u + d

        u.d = d; w.d = d
        u.mode = mode; w.mode = mode
        u.fixed_alpha = fixed_alpha; w.fixed_alpha = fixed_alpha
        u.frozen = frozen_u; w.frozen = frozen_w
        u.dt = dt_u; w.dt = dt_w
        u.a = a_u; u.a_prev = a_u; u.prec = prec_u; u.gamma = gamma_u
        w.a = a_w; w.a_prev = a_w; w.prec = prec_w; w.gamma = gamma_w
        u.learn = learn_u and not frozen_u and dt_u > 0
        w.learn = learn_w and not frozen_w and dt_w > 0
        u.logdet_post = 0.0; w.logdet_post = 0.0

        if init_side(&u, mu_u, cov_u, work, lwork) != 0 or init_side(&w, mu_w, cov_w, work, lwork) != 0:
            raise ValueError("eigendecomposition of previous posterior failed")

        for n in range(1, iters + 1):
            memcpy(old_u, u.mu, d * sizeof(double))
            memcpy(old_w, w.mu, d * sizeof(double))
            if ordinal:
                m_ij = dot(u.mu, w.mu, d)
                std_trunc_stats((lo - m_ij) / sigma, (hi - m_ij) / sigma, &logz, &m1, &r2)
                ey = m_ij + sigma * m1
                if ey <= lo:
                    ey = nextafter(lo, INFINITY)
                if ey >= hi:
                    ey = nextafter(hi, -INFINITY)
            info = gaussian_update(&u, &w, ey, sigma, P, rhs)
            if info != 0:
                raise ValueError(f"posterior precision not positive definite (info={info})")
            info = gaussian_update(&w, &u, ey, sigma, P, rhs)
            if info != 0:
                raise ValueError(f"posterior precision not positive definite (info={info})")
            move_drift(&u)
            move_drift(&w)
            elbo_out[n - 1] = elbo(&u, &w, ordinal, obs, lo, hi, sigma, m_ij)
            move = 0.0
            for k in range(d):
                if fabs(u.mu[k] - old_u[k]) > move:
                    move = fabs(u.mu[k] - old_u[k])
                if fabs(w.mu[k] - old_w[k]) > move:
                    move = fabs(w.mu[k] - old_w[k])
            if move < tol:
                converged = 1
                break

        if not frozen_u:
            for i in range(d):
                mu_u[i] = u.mu[i]
                for j in range(d):
                    cov_u[i, j] = u.cov[i * d + j]
        if not frozen_w:
            for i in range(d):
                mu_w[i] = w.mu[i]
                for j in range(d):
                    cov_w[i, j] = w.cov[i * d + j]
        return u.a, w.a, n, bool(converged), ey
    finally:
        free(buf)
