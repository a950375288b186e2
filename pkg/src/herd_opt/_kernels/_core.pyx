# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pool-flow recursion and the FIFO SVIR episode.

Draw order matches ``_python.run_episode`` exactly; see that module for the
reference semantics.
"""
import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, expm1, fabs, INFINITY
from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, free, qsort
from libc.string cimport memset
from numpy.random cimport bitgen_t

cnp.import_array()

cdef extern from "numpy/random/distributions.h":
    struct s_binomial_t:
        int has_binomial
    ctypedef s_binomial_t binomial_t
    double random_standard_uniform(bitgen_t *bitgen_state) nogil
    int64_t random_binomial(bitgen_t *bitgen_state, double p, int64_t n, binomial_t *binomial) nogil

DEF NEWTON_MAX_ITER = 200


cdef double _solve_one(const double[::1] s, const double[::1] c, double target, double t0) noexcept nogil:
    cdef Py_ssize_t j, B = s.shape[0]
    cdef double t = t0, f, fp, e, step
    cdef double tol = 1e-12 * (target if target > 1.0 else 1.0)
    cdef int it
    for it in range(NEWTON_MAX_ITER):
        f = -target
        fp = 0.0
        for j in range(B):
            e = exp(-s[j] * t)
            f += -expm1(-s[j] * t) * c[j]
            fp += e * s[j] * c[j]
        if fp > 0:
            step = -f / fp
        else:
            step = 0.0
        if step < 0:
            step = 0.0
        if fabs(f) <= tol:
            break
        if step <= 1e-16 * (t if t > 1e-300 else 1e-300):
            t = t + step
            break
        t = t + step
    return t


def flow_curve(s_in, w_in, c_in, Py_ssize_t n_steps, double stop_below=-1.0, double scale=1.0):
    cdef const double[::1] s = np.ascontiguousarray(s_in, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef Py_ssize_t B = s.shape[0], j, k, n_done
    cdef double reach = 0.0, t_last = 0.0, v
    for j in range(B):
        if s[j] > 0:
            reach += c[j]
    exposure_arr = np.empty(n_steps + 1, dtype=np.float64)
    value_arr = np.empty(n_steps + 1, dtype=np.float64)
    cdef double[::1] exposure = exposure_arr
    cdef double[::1] value = value_arr
    v = 0.0
    for j in range(B):
        v += w[j] * c[j]
    exposure[0] = 0.0
    value[0] = v
    n_done = n_steps + 1
    with nogil:
        for k in range(1, n_steps + 1):
            if k < reach * (1.0 - 1e-14):
                t_last = _solve_one(s, c, <double>k, t_last)
                exposure[k] = t_last
                v = 0.0
                for j in range(B):
                    v += exp(-s[j] * t_last) * (w[j] * c[j])
            else:
                exposure[k] = INFINITY
                v = 0.0
            value[k] = v
            if stop_below >= 0 and scale * v < stop_below:
                n_done = k + 1
                break
    return exposure_arr[:n_done].copy(), value_arr[:n_done].copy()


ctypedef struct keyed_t:
    double key
    int64_t idx


cdef int _cmp_keyed(const void *a, const void *b) noexcept nogil:
    cdef const keyed_t *x = <const keyed_t *>a
    cdef const keyed_t *y = <const keyed_t *>b
    if x.key < y.key:
        return -1
    if x.key > y.key:
        return 1
    if x.idx < y.idx:
        return -1
    if x.idx > y.idx:
        return 1
    return 0


cdef int64_t _vaccinate(bitgen_t *bg, int64_t doses, int64_t *S, const int64_t *offsets,
                        int64_t *pool, Py_ssize_t B, int64_t *vacc, int64_t *n_vacc,
                        int64_t *cand, int64_t *owner, char *drop, keyed_t *keyed) noexcept nogil:
    cdef int64_t total = 0, q, m, j, i, chosen
    for j in range(B):
        total += S[j]
    if doses <= 0 or total == 0:
        return 0
    q = 0
    for j in range(B):
        for i in range(S[j]):
            cand[q] = pool[offsets[j] + i]
            owner[q] = j
            q += 1
    memset(drop, 0, total)
    if doses >= total:
        chosen = total
        for q in range(total):
            drop[q] = 1
            vacc[n_vacc[0]] = cand[q]
            n_vacc[0] += 1
    else:
        chosen = doses
        for q in range(total):
            keyed[q].key = random_standard_uniform(bg)
            keyed[q].idx = q
        qsort(keyed, total, sizeof(keyed_t), _cmp_keyed)
        for m in range(doses):
            q = keyed[m].idx
            drop[q] = 1
            vacc[n_vacc[0]] = cand[q]
            n_vacc[0] += 1
    for j in range(B):
        S[j] = 0
    for q in range(total):
        if not drop[q]:
            j = owner[q]
            pool[offsets[j] + S[j]] = cand[q]
            S[j] += 1
    return chosen


cdef inline double _pool_mass(const double[::1] bin_s, const int64_t *S, Py_ssize_t B) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t j
    for j in range(B):
        acc += bin_s[j] * <double>S[j]
    return acc


def run_episode(rng, bin_s_in, pair_prob_in, index_weight_in, members_in, offsets_in,
                triggers_in, doses_in, bint record_compartments=False):
    cdef const double[::1] bin_s = np.ascontiguousarray(bin_s_in, dtype=np.float64)
    cdef const double[:, ::1] P = np.ascontiguousarray(pair_prob_in, dtype=np.float64)
    cdef const double[::1] iw = np.ascontiguousarray(index_weight_in, dtype=np.float64)
    cdef const int64_t[::1] offsets = np.ascontiguousarray(offsets_in, dtype=np.int64)
    cdef const int64_t[::1] triggers = np.ascontiguousarray(triggers_in, dtype=np.int64)
    cdef const int64_t[::1] doses = np.ascontiguousarray(doses_in, dtype=np.int64)
    pool_arr = np.array(members_in, dtype=np.int64)
    cdef int64_t[::1] pool = pool_arr
    cdef Py_ssize_t B = bin_s.shape[0], N = pool.shape[0], E = triggers.shape[0]
    cdef Py_ssize_t j, i, r, head, n_order = 0, n_proc = 0, next_trigger = 0
    cdef int64_t n_vacc = 0, n_new, pos, node, tmp, base, q, total_S
    cdef double x, total_w, wp, running
    cdef binomial_t binom
    memset(&binom, 0, sizeof(binomial_t))

    order_arr = np.empty(N, dtype=np.int64)
    secondary_arr = np.empty(N, dtype=np.int64)
    w_inf_arr = np.empty(N, dtype=np.float64)
    w_proc_arr = np.empty(N, dtype=np.float64)
    vacc_arr = np.empty(N, dtype=np.int64)
    applied_arr = np.zeros(E, dtype=np.int64)
    node_bin_arr = np.empty(N, dtype=np.int64)
    comp_arr = np.empty((N if record_compartments else 0, 4), dtype=np.int64)
    cdef int64_t[::1] order = order_arr
    cdef int64_t[::1] secondary = secondary_arr
    cdef double[::1] w_inf = w_inf_arr
    cdef double[::1] w_proc = w_proc_arr
    cdef int64_t[::1] vacc = vacc_arr
    cdef int64_t[::1] applied = applied_arr
    cdef int64_t[::1] node_bin = node_bin_arr
    cdef int64_t[:, ::1] comp = comp_arr

    cdef int64_t *S = <int64_t *>malloc(B * sizeof(int64_t))
    cdef int64_t *kdraw = <int64_t *>malloc(B * sizeof(int64_t))
    cdef double *cum = <double *>malloc(B * sizeof(double))
    cdef int64_t *cand = <int64_t *>malloc((N + 1) * sizeof(int64_t))
    cdef int64_t *owner = <int64_t *>malloc((N + 1) * sizeof(int64_t))
    cdef char *drop = <char *>malloc(N + 1)
    cdef keyed_t *keyed = <keyed_t *>malloc((N + 1) * sizeof(keyed_t))
    if not (S and kdraw and cum and cand and owner and drop and keyed):
        free(S); free(kdraw); free(cum); free(cand); free(owner); free(drop); free(keyed)
        raise MemoryError()

    for j in range(B):
        S[j] = offsets[j + 1] - offsets[j]
        for i in range(offsets[j], offsets[j + 1]):
            node_bin[pool[i]] = j

    capsule = rng.bit_generator.capsule
    cdef bitgen_t *bg = <bitgen_t *>PyCapsule_GetPointer(capsule, "BitGenerator")
    lock = rng.bit_generator.lock
    with lock, nogil:
        while next_trigger < E and triggers[next_trigger] <= 0:
            applied[next_trigger] = _vaccinate(bg, doses[next_trigger], S, &offsets[0], &pool[0], B,
                                               &vacc[0], &n_vacc, cand, owner, drop, keyed)
            next_trigger += 1
        total_S = 0
        total_w = 0.0
        for j in range(B):
            total_S += S[j]
            total_w += iw[j] * <double>S[j]
            cum[j] = total_w
        if total_S > 0 and total_w > 0:
            x = random_standard_uniform(bg) * total_w
            j = 0
            while j < B and not (cum[j] > x):
                j += 1
            if j >= B:
                j = B - 1
                while j > 0 and not (iw[j] * <double>S[j] > 0):
                    j -= 1
            pos = <int64_t>(random_standard_uniform(bg) * <double>S[j])
            if pos > S[j] - 1:
                pos = S[j] - 1
            base = offsets[j]
            node = pool[base + pos]
            pool[base + pos] = pool[base + S[j] - 1]
            S[j] -= 1
            order[n_order] = node
            w_inf[n_order] = _pool_mass(bin_s, S, B)
            n_order += 1
            while next_trigger < E and triggers[next_trigger] <= 1:
                applied[next_trigger] = _vaccinate(bg, doses[next_trigger], S, &offsets[0], &pool[0], B,
                                                   &vacc[0], &n_vacc, cand, owner, drop, keyed)
                next_trigger += 1

        head = 0
        while head < n_order:
            node = order[head]
            r = node_bin[node]
            wp = _pool_mass(bin_s, S, B)
            n_new = 0
            for j in range(B):
                kdraw[j] = random_binomial(bg, P[r, j], S[j], &binom)
                n_new += kdraw[j]
            if n_new:
                q = n_order
                for j in range(B):
                    if kdraw[j] == 0:
                        continue
                    base = offsets[j]
                    for i in range(kdraw[j]):
                        pos = <int64_t>(random_standard_uniform(bg) * <double>S[j])
                        if pos > S[j] - 1:
                            pos = S[j] - 1
                        order[q] = pool[base + pos]
                        q += 1
                        pool[base + pos] = pool[base + S[j] - 1]
                        S[j] -= 1
                for i in range(n_new - 1, 0, -1):
                    tmp = <int64_t>(random_standard_uniform(bg) * <double>(i + 1))
                    if tmp > i:
                        tmp = i
                    node = order[n_order + i]
                    order[n_order + i] = order[n_order + tmp]
                    order[n_order + tmp] = node
                running = wp
                for i in range(n_new):
                    running -= bin_s[node_bin[order[n_order + i]]]
                    w_inf[n_order + i] = running
                n_order += n_new
            secondary[head] = n_new
            w_proc[head] = wp
            head += 1
            if n_new:
                while next_trigger < E and triggers[next_trigger] <= n_order:
                    applied[next_trigger] = _vaccinate(bg, doses[next_trigger], S, &offsets[0], &pool[0], B,
                                                       &vacc[0], &n_vacc, cand, owner, drop, keyed)
                    next_trigger += 1
            if record_compartments:
                total_S = 0
                for j in range(B):
                    total_S += S[j]
                comp[head - 1, 0] = total_S
                comp[head - 1, 1] = n_order - head
                comp[head - 1, 2] = head
                comp[head - 1, 3] = n_vacc

    free(S); free(kdraw); free(cum); free(cand); free(owner); free(drop); free(keyed)
    return {
        "order": order_arr[:n_order].copy(),
        "secondary": secondary_arr[:n_order].copy(),
        "w_inf": w_inf_arr[:n_order].copy(),
        "w_proc": w_proc_arr[:n_order].copy(),
        "vaccinated": vacc_arr[:n_vacc].copy(),
        "applied": applied_arr,
        "compartments": comp_arr[:n_order].copy() if record_compartments else None,
    }
