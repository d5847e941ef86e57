# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot simulator kernels (see _kernels_py for the reference)."""
import numpy as np
from libc.math cimport log2, fmin, fmax


def compose_gain_db(const double[:, ::1] base_db, const double[:, ::1] att_h_db,
                    const double[:, ::1] elev_deg, const double[::1] tilt_deg,
                    const double[::1] vhpbw_deg, const double[::1] max_gain_dbi,
                    double slope, double floor_db):
    cdef Py_ssize_t n_cell = base_db.shape[0], n_ue = base_db.shape[1]
    out = np.empty((n_cell, n_ue))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t c, k
    cdef double off, att_v, t, inv, g
    for c in range(n_cell):
        t = tilt_deg[c]
        inv = 1.0 / vhpbw_deg[c]
        g = max_gain_dbi[c]
        for k in range(n_ue):
            off = (elev_deg[c, k] - t) * inv
            att_v = -fmin(slope * off * off, floor_db)
            o[c, k] = base_db[c, k] + g + fmax(att_h_db[c, k] + att_v, -floor_db)
    return out


def mc_mean_log2_sinr(const double[:, ::1] rx_w, const double[:, :, ::1] fading,
                      const long[::1] assoc, double noise_w, is_uav):
    cdef Py_ssize_t n_cell = rx_w.shape[0], n_ue = rx_w.shape[1]
    cdef Py_ssize_t n_draw = fading.shape[0]
    cdef const unsigned char[::1] uav = np.ascontiguousarray(is_uav, dtype=np.uint8)
    out = np.empty(n_ue)
    cdef double[::1] o = out
    cdef Py_ssize_t c, k, d, s
    cdef double tot, sig, acc, v
    # column-wise totals are accumulated cell by cell so the result does not
    # depend on memory layout
    tot_arr = np.empty(n_ue)
    sig_arr = np.empty(n_ue)
    cdef double[::1] tots = tot_arr
    cdef double[::1] sigs = sig_arr
    for k in range(n_ue):
        o[k] = 0.0
    for d in range(n_draw):
        for k in range(n_ue):
            tots[k] = 0.0
        for c in range(n_cell):
            for k in range(n_ue):
                if uav[k]:
                    if d == 0:
                        tots[k] += rx_w[c, k]
                else:
                    tots[k] += rx_w[c, k] * fading[d, c, k]
        for k in range(n_ue):
            s = assoc[k]
            if uav[k]:
                if d > 0:
                    continue
                sig = rx_w[s, k]
            else:
                sig = rx_w[s, k] * fading[d, s, k]
            v = log2(1.0 + sig / (tots[k] - sig + noise_w))
            if uav[k]:
                o[k] = v
            else:
                o[k] += v
    for k in range(n_ue):
        if not uav[k]:
            o[k] /= n_draw
    return out
