# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward passes and permutation-sampling marginals.

Row-at-a-time C loops; the GIL is released while evaluating so benchmark
cells can overlap on multi-core hosts.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, tanh
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t

cnp.import_array()

DEF KIND_MLP = 0
DEF KIND_QUAD = 1


cdef class NativeModel:
    cdef int kind
    cdef int n_layers
    cdef int width
    cdef int prob
    cdef double b0
    cdef Py_ssize_t d
    cdef cnp.int64_t[::1] dims
    cdef int[::1] acts
    cdef double[::1] W
    cdef double[::1] B
    cdef double[::1] qw
    cdef double[:, ::1] qa

    def __init__(self, kind, *args):
        if kind == "mlp":
            dims, acts, W, B, prob = args
            self.kind = KIND_MLP
            self.dims = np.array(dims, dtype=np.int64, order="C", copy=True)
            self.acts = np.array(acts, dtype=np.intc, order="C", copy=True)
            self.W = np.array(W, dtype=np.float64, order="C", copy=True)
            self.B = np.array(B, dtype=np.float64, order="C", copy=True)
            self.n_layers = len(acts)
            self.width = int(np.max(dims))
            self.d = dims[0]
        elif kind == "quad":
            w, a, b0, prob = args
            self.kind = KIND_QUAD
            self.qw = np.array(w, dtype=np.float64, order="C", copy=True)
            self.qa = np.array(a, dtype=np.float64, order="C", copy=True)
            self.b0 = b0
            self.d = len(w)
            self.width = self.d
        else:
            raise ValueError(f"unknown packed kind {kind!r}")
        self.prob = 1 if prob else 0

    cdef double _row(self, const double* z, double* buf_a, double* buf_b) noexcept nogil:
        cdef Py_ssize_t l, o, j, n_in, n_out, woff = 0, boff = 0
        cdef double s, acc
        cdef const double* cur
        cdef double* nxt
        cdef double* tmp
        if self.kind == KIND_QUAD:
            s = self.b0
            for j in range(self.d):
                acc = self.qw[j]
                for o in range(j + 1, self.d):
                    acc += self.qa[j, o] * z[o]
                s += acc * z[j]
        else:
            cur = z
            nxt = buf_a
            for l in range(self.n_layers):
                n_in = self.dims[l]
                n_out = self.dims[l + 1]
                for o in range(n_out):
                    acc = self.B[boff + o]
                    for j in range(n_in):
                        acc += self.W[woff + o * n_in + j] * cur[j]
                    if self.acts[l] == 0:
                        if acc < 0.0:
                            acc = 0.0
                    elif self.acts[l] == 1:
                        acc = tanh(acc)
                    nxt[o] = acc
                woff += n_in * n_out
                boff += n_out
                cur = nxt
                tmp = buf_b if nxt == buf_a else buf_a
                nxt = tmp
            s = cur[0]
        if self.prob:
            s = 1.0 / (1.0 + exp(-s))
        return s

    def forward(self, const double[:, ::1] Z):
        cdef Py_ssize_t n = Z.shape[0], r
        out = np.empty(n, dtype=np.float64)
        cdef double[::1] o = out
        cdef double* buf_a = <double*> malloc(2 * self.width * sizeof(double))
        if buf_a == NULL:
            raise MemoryError()
        cdef double* buf_b = buf_a + self.width
        with nogil:
            for r in range(n):
                o[r] = self._row(&Z[r, 0], buf_a, buf_b)
        free(buf_a)
        return out

    def marginals(self, const double[::1] x, const double[::1] base, Py_ssize_t feature,
                  bit_generator, Py_ssize_t n):
        cdef Py_ssize_t d = self.d, r, j
        if x.shape[0] != d or base.shape[0] != d or not 0 <= feature < d:
            raise ValueError("dimension mismatch in marginals()")
        out = np.empty(n, dtype=np.float64)
        cdef double[::1] o = out
        capsule = bit_generator.capsule
        cdef bitgen_t* rng = <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")
        cdef double* mem = <double*> malloc((3 * d + 2 * self.width) * sizeof(double))
        if mem == NULL:
            raise MemoryError()
        cdef double* u = mem
        cdef double* z = mem + d
        cdef double* zi = mem + 2 * d
        cdef double* buf_a = mem + 3 * d
        cdef double* buf_b = buf_a + self.width
        cdef double ui
        with bit_generator.lock, nogil:
            for r in range(n):
                for j in range(d):
                    u[j] = rng.next_double(rng.state)
                ui = u[feature]
                for j in range(d):
                    z[j] = x[j] if u[j] < ui else base[j]
                    zi[j] = z[j]
                z[feature] = base[feature]
                zi[feature] = x[feature]
                o[r] = self._row(zi, buf_a, buf_b) - self._row(z, buf_a, buf_b)
        free(mem)
        return out

    def marginals_round(self, const double[::1] x, const double[::1] base, list bit_generators):
        """One marginal per feature; feature ``i`` draws from ``bit_generators[i]``."""
        cdef Py_ssize_t d = self.d, i, j
        if x.shape[0] != d or base.shape[0] != d or len(bit_generators) != d:
            raise ValueError("dimension mismatch in marginals_round()")
        out = np.empty(d, dtype=np.float64)
        cdef double[::1] o = out
        cdef double* mem = <double*> malloc((3 * d + 2 * self.width) * sizeof(double))
        if mem == NULL:
            raise MemoryError()
        cdef double* u = mem
        cdef double* z = mem + d
        cdef double* zi = mem + 2 * d
        cdef double* buf_a = mem + 3 * d
        cdef double* buf_b = buf_a + self.width
        cdef double ui
        cdef bitgen_t* rng
        try:
            for i in range(d):
                bg = bit_generators[i]
                rng = <bitgen_t*> PyCapsule_GetPointer(bg.capsule, "BitGenerator")
                with bg.lock, nogil:
                    for j in range(d):
                        u[j] = rng.next_double(rng.state)
                    ui = u[i]
                    for j in range(d):
                        z[j] = x[j] if u[j] < ui else base[j]
                        zi[j] = z[j]
                    z[i] = base[i]
                    zi[i] = x[i]
                    o[i] = self._row(zi, buf_a, buf_b) - self._row(z, buf_a, buf_b)
        finally:
            free(mem)
        return out
