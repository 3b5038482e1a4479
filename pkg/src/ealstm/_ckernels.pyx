# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent kernels; same contract as ``ealstm._pykernels``.

Built with fast-math so the activation loops vectorize. Pre-activations are
clamped to +-CLAMP before ``exp`` so no infinities are ever produced; the
clamp changes sigmoid/tanh by less than 1e-30.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fmin, fmax
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

DEF CLAMP = 80.0


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-fmax(fmin(x, CLAMP), -CLAMP)))


cdef inline double _tanh(double x) noexcept nogil:
    return 1.0 - 2.0 / (1.0 + exp(2.0 * fmax(fmin(x, CLAMP), -CLAMP)))


cdef void _sig_block(double* out, const double* z, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        out[j] = _sig(z[j])


cdef void _tanh_block(double* out, const double* z, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        out[j] = _tanh(z[j])


cdef void _matmul_ut(double* z, const double* hprev, const double* U,
                     int B, int H, int GH) noexcept nogil:
    # z (B, GH) += hprev (B, H) @ U.T, all row-major
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &GH, &B, &H, &one, <double*>U, &H, <double*>hprev, &H,
          &one, z, &GH)


cdef void _matmul_u(double* out, const double* dz, const double* U,
                    int B, int H, int GH) noexcept nogil:
    # out (B, H) = dz (B, GH) @ U, all row-major
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &H, &B, &GH, &one, <double*>U, &H, <double*>dz, &GH,
          &zero, out, &H)


cdef void _forward_loop(const double* zx, const double* U, const double* istat,
                        double* gates, double* c, double* h, double* tmp,
                        int T, int B, int H, int G) noexcept nogil:
    cdef int GH = G * H
    cdef int BH = B * H
    cdef int t, b, j
    cdef double* zt
    cdef double* gi
    cdef double* gf
    cdef double* gg
    cdef double* go
    cdef const double* cprev
    cdef double* cnew
    cdef double* hnew
    for t in range(T):
        zt = gates + t * B * GH
        for j in range(B * GH):
            zt[j] = zx[t * B * GH + j]
        _matmul_ut(zt, h + t * BH, U, B, H, GH)
        for b in range(B):
            if G == 3:
                gf = zt + b * GH
                gg = gf + H
                go = gg + H
                gi = <double*>istat + b * H
                _sig_block(gf, gf, H)
                _tanh_block(gg, gg, H)
                _sig_block(go, go, H)
            else:
                gi = zt + b * GH
                gf = gi + H
                gg = gf + H
                go = gg + H
                _sig_block(gi, gi, 2 * H)
                _tanh_block(gg, gg, H)
                _sig_block(go, go, H)
            cprev = c + t * BH + b * H
            cnew = c + (t + 1) * BH + b * H
            hnew = h + (t + 1) * BH + b * H
            for j in range(H):
                cnew[j] = gf[j] * cprev[j] + gi[j] * gg[j]
            _tanh_block(tmp, cnew, H)
            for j in range(H):
                hnew[j] = go[j] * tmp[j]


cdef void _backward_loop(const double* gates, const double* c, const double* U,
                         const double* istat, double* d_istat, double* dz,
                         double* dh, double* dc, double* tc,
                         int T, int B, int H, int G) noexcept nogil:
    cdef int GH = G * H
    cdef int BH = B * H
    cdef int t, b, j
    cdef const double* row
    cdef const double* gi
    cdef const double* gf
    cdef const double* gg
    cdef const double* go
    cdef double* zi
    cdef double* zf
    cdef double* zg
    cdef double* zo
    cdef double* dcb
    cdef const double* dhb
    cdef const double* cprev
    cdef double dcn
    for t in range(T - 1, -1, -1):
        for b in range(B):
            row = gates + t * B * GH + b * GH
            if G == 3:
                gi = istat + b * H
                gf = row
                zf = dz + t * B * GH + b * GH
                zi = NULL
            else:
                gi = row
                gf = row + H
                zi = dz + t * B * GH + b * GH
                zf = zi + H
            gg = gf + H
            go = gg + H
            zg = zf + H
            zo = zg + H
            cprev = c + t * BH + b * H
            dcb = dc + b * H
            dhb = dh + b * H
            _tanh_block(tc, c + (t + 1) * BH + b * H, H)
            for j in range(H):
                dcn = dcb[j] + dhb[j] * go[j] * (1.0 - tc[j] * tc[j])
                zf[j] = dcn * cprev[j] * gf[j] * (1.0 - gf[j])
                zg[j] = dcn * gi[j] * (1.0 - gg[j] * gg[j])
                zo[j] = dhb[j] * tc[j] * go[j] * (1.0 - go[j])
                dcb[j] = dcn
            if G == 3:
                for j in range(H):
                    d_istat[b * H + j] += dcb[j] * gg[j]
            else:
                for j in range(H):
                    zi[j] = dcb[j] * gg[j] * gi[j] * (1.0 - gi[j])
            for j in range(H):
                dcb[j] = dcb[j] * gf[j]
        _matmul_u(dh, dz + t * B * GH, U, B, H, GH)


def recurrent_forward(zx, U, istat=None):
    cdef double[:, :, ::1] zxv = np.ascontiguousarray(zx, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef int T = zxv.shape[0], B = zxv.shape[1], GH = zxv.shape[2]
    cdef int H = Uv.shape[1]
    cdef int G = GH // H
    cdef double[:, ::1] iv
    cdef const double* ip = NULL
    if istat is not None:
        iv = np.ascontiguousarray(istat, dtype=np.float64)
        ip = &iv[0, 0]
    gates_a = np.empty((T, B, GH))
    c_a = np.zeros((T + 1, B, H))
    h_a = np.zeros((T + 1, B, H))
    tmp_a = np.empty(H)
    cdef double[:, :, ::1] gates = gates_a
    cdef double[:, :, ::1] c = c_a
    cdef double[:, :, ::1] h = h_a
    cdef double[::1] tmp = tmp_a
    if T == 0 or B == 0:
        return gates_a, c_a, h_a
    with nogil:
        _forward_loop(&zxv[0, 0, 0], &Uv[0, 0], ip, &gates[0, 0, 0],
                      &c[0, 0, 0], &h[0, 0, 0], &tmp[0], T, B, H, G)
    return gates_a, c_a, h_a


def recurrent_backward(gates, c, h, U, dh_last, istat=None):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(gates, dtype=np.float64)
    cdef double[:, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef int T = gv.shape[0], B = gv.shape[1], GH = gv.shape[2]
    cdef int H = Uv.shape[1]
    cdef int G = GH // H
    cdef double[:, ::1] iv
    cdef double[:, ::1] div
    cdef const double* ip = NULL
    cdef double* dip = NULL
    d_istat = None
    if istat is not None:
        iv = np.ascontiguousarray(istat, dtype=np.float64)
        d_istat = np.zeros((B, H))
        div = d_istat
        ip = &iv[0, 0]
        dip = &div[0, 0]
    dz_a = np.empty((T, B, GH))
    dh_a = np.array(dh_last, dtype=np.float64, order="C", copy=True)
    dc_a = np.zeros((B, H))
    tc_a = np.empty(H)
    cdef double[:, :, ::1] dz = dz_a
    cdef double[:, ::1] dh = dh_a
    cdef double[:, ::1] dc = dc_a
    cdef double[::1] tc = tc_a
    if T == 0 or B == 0:
        return dz_a, d_istat
    with nogil:
        _backward_loop(&gv[0, 0, 0], &cv[0, 0, 0], &Uv[0, 0], ip, dip,
                       &dz[0, 0, 0], &dh[0, 0], &dc[0, 0], &tc[0], T, B, H, G)
    return dz_a, d_istat
