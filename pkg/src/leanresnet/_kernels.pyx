# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled fused lean convolution.

Output rows are processed in tiles. For each tile the channel-mixing
product is one BLAS gemm over the tile's pixels; the 4-point stencil is
then added from the same input rows (plus a one-row halo) while they are
still resident in cache.
"""
from cython cimport floating
from cython.parallel cimport prange
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport sgemm, dgemm

# Upper bound on input elements touched by one tile's gemm.
cdef enum:
    TILE_ELEMS = 131072


cdef inline void _gemm(int m, int n, int k, floating* a, int lda,
                       floating* b, int ldb, floating* c, int ldc) noexcept nogil:
    # column-major C[m,n] = A[m,k] @ B[k,n]
    cdef char trans = b'N'
    cdef float sone = 1.0, szero = 0.0
    cdef double done = 1.0, dzero = 0.0
    if floating is float:
        sgemm(&trans, &trans, &m, &n, &k, &sone, a, &lda, b, &ldb, &szero, c, &ldc)
    else:
        dgemm(&trans, &trans, &m, &n, &k, &done, a, &lda, b, &ldb, &dzero, c, &ldc)


cdef int tile_rows(int cin, int wo, int ho) noexcept nogil:
    cdef int rows = TILE_ELEMS // (cin * wo)
    if rows * wo < 256:
        rows = (256 + wo - 1) // wo
    if rows < 1:
        rows = 1
    if rows > ho:
        rows = ho
    return rows


cdef void _lean_image(floating* x, floating* alpha, floating* st, floating* out,
                      int cin, int cout, int d, int h, int w, int ho, int wo,
                      int stride, int trows, floating* buf) noexcept nogil:
    cdef int r0, nr, npix, i, rr, j, o, ir, ic, r
    cdef Py_ssize_t hw = <Py_ssize_t>h * w
    cdef Py_ssize_t hwo = <Py_ssize_t>ho * wo
    cdef floating *xc
    cdef floating *oc
    cdef floating *row
    cdef floating *orow
    cdef floating c_up, c_left, c_right, c_down, acc
    cdef floating *src
    cdef int lda

    r0 = 0
    while r0 < ho:
        nr = trows
        if r0 + nr > ho:
            nr = ho - r0
        npix = nr * wo

        if stride == 1:
            # contiguous tile copy: avoids power-of-two leading dimensions in gemm
            for i in range(cin):
                memcpy(buf + <Py_ssize_t>i * npix, x + i * hw + <Py_ssize_t>r0 * w,
                       npix * sizeof(floating))
        else:
            for i in range(cin):
                xc = x + i * hw
                for rr in range(nr):
                    row = xc + <Py_ssize_t>(r0 + rr) * stride * w
                    orow = buf + <Py_ssize_t>i * npix + rr * wo
                    for j in range(wo):
                        orow[j] = row[j * stride]
        src = buf
        lda = npix
        # out[:, tile] = alpha @ x[:, tile], expressed column-major
        _gemm(npix, cout, cin, src, lda, alpha, cin, out + <Py_ssize_t>r0 * wo, <int>hwo)

        for o in range(d):
            c_up = st[4 * o]
            c_left = st[4 * o + 1]
            c_right = st[4 * o + 2]
            c_down = st[4 * o + 3]
            xc = x + o * hw
            oc = out + o * hwo
            for rr in range(nr):
                r = r0 + rr
                ir = r * stride
                orow = oc + <Py_ssize_t>r * wo
                row = xc + <Py_ssize_t>ir * w
                if ir > 0:
                    src = row - w
                    for j in range(wo):
                        orow[j] += c_up * src[j * stride]
                if ir + 1 < h:
                    src = row + w
                    for j in range(wo):
                        orow[j] += c_down * src[j * stride]
                # left/right neighbours; first and last columns hit the zero border
                if w > 1:
                    orow[0] += c_right * row[1]
                for j in range(1, wo):
                    ic = j * stride
                    acc = c_left * row[ic - 1]
                    if ic + 1 < w:
                        acc = acc + c_right * row[ic + 1]
                    orow[j] += acc
        r0 += nr


def lean_forward(floating[:, :, :, ::1] x, floating[:, ::1] alpha,
                 floating[:, ::1] stencil, int stride,
                 floating[:, :, :, ::1] out, int num_threads=1):
    """Write the lean convolution of ``x`` into the preallocated ``out``."""
    cdef int n = x.shape[0], cin = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int cout = out.shape[1], ho = out.shape[2], wo = out.shape[3]
    cdef int d = stencil.shape[0]
    cdef int trows = tile_rows(cin, wo, ho)
    cdef int b
    cdef floating *buf
    cdef Py_ssize_t xs = <Py_ssize_t>cin * h * w
    cdef Py_ssize_t os_ = <Py_ssize_t>cout * ho * wo
    cdef Py_ssize_t bufsize = <Py_ssize_t>cin * trows * wo

    if alpha.shape[0] != cout or alpha.shape[1] != cin:
        raise ValueError("alpha shape does not match tensors")
    if n == 0:
        return out
    if num_threads < 1:
        num_threads = 1
    with nogil:
        for b in prange(n, num_threads=num_threads, schedule="static"):
            buf = <floating*>malloc(bufsize * sizeof(floating))
            _lean_image(&x[0, 0, 0, 0] + b * xs, &alpha[0, 0], &stencil[0, 0] if d > 0 else NULL,
                        &out[0, 0, 0, 0] + b * os_, cin, cout, d, h, w, ho, wo,
                        stride, trows, buf)
            if buf != NULL:
                free(buf)
    return out
