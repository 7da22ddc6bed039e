"""Hot inner loops for sparse Hamiltonian propagation.

Two interchangeable backends are provided:

* a numba ``@njit`` path that fuses the CSR mat-vec with the Chebyshev
  three-term recurrence, so a whole expansion runs without returning to
  Python, and
* a pure numpy/scipy path that does the same arithmetic term by term.

The numba path is used when numba imports cleanly and the environment
variable ``JCHLENS_DISABLE_NUMBA`` is unset (or ``0``).  Set it to ``1``
to force the numpy path, e.g. for debugging or for the benchmark in
``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

# the system TBB is too old for numba; avoid the noisy fallback warning
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

_DISABLED = os.environ.get("JCHLENS_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by JCHLENS_DISABLE_NUMBA")
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

# above this dimension the row loop is split across numba threads
PARALLEL_MIN_DIM = 20000


def backend() -> str:
    """Name of the active kernel backend (``"numba"`` or ``"numpy"``)."""
    return "numba" if HAS_NUMBA else "numpy"


def set_threads(n: int | None) -> None:
    if n is None or not HAS_NUMBA:
        return
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _use_parallel(dim: int) -> bool:
    return HAS_NUMBA and numba.get_num_threads() > 1 and dim >= PARALLEL_MIN_DIM


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _csr_matvec_nb(indptr, indices, data, x, out):
        n = indptr.shape[0] - 1
        for i in range(n):
            acc = 0j
            for jj in range(indptr[i], indptr[i + 1]):
                acc += data[jj] * x[indices[jj]]
            out[i] = acc

    @njit(cache=True, parallel=True)
    def _csr_matvec_nb_par(indptr, indices, data, x, out):
        n = indptr.shape[0] - 1
        for i in prange(n):
            acc = 0j
            for jj in range(indptr[i], indptr[i + 1]):
                acc += data[jj] * x[indices[jj]]
            out[i] = acc

    @njit(cache=True)
    def _cheb_step_nb(indptr, indices, data, center, inv_half, v_prev, v_cur, v_next, acc, coeff):
        # v_next = 2 * Hs v_cur - v_prev with Hs = (H - center) * inv_half; acc += coeff * v_next
        n = indptr.shape[0] - 1
        for i in range(n):
            s = 0j
            for jj in range(indptr[i], indptr[i + 1]):
                s += data[jj] * v_cur[indices[jj]]
            w = 2.0 * (s - center * v_cur[i]) * inv_half - v_prev[i]
            v_next[i] = w
            acc[i] += coeff * w

    @njit(cache=True, parallel=True)
    def _cheb_step_nb_par(indptr, indices, data, center, inv_half, v_prev, v_cur, v_next, acc, coeff):
        n = indptr.shape[0] - 1
        for i in prange(n):
            s = 0j
            for jj in range(indptr[i], indptr[i + 1]):
                s += data[jj] * v_cur[indices[jj]]
            w = 2.0 * (s - center * v_cur[i]) * inv_half - v_prev[i]
            v_next[i] = w
            acc[i] += coeff * w

    @njit(cache=True)
    def _chebyshev_series_nb(indptr, indices, data, center, half_width, coeffs, psi):
        n = psi.shape[0]
        inv_half = 1.0 / half_width
        v_prev = psi.copy()
        v_cur = np.empty(n, dtype=np.complex128)
        v_next = np.empty(n, dtype=np.complex128)
        acc = coeffs[0] * psi
        if coeffs.shape[0] == 1:
            return acc
        for i in range(n):
            s = 0j
            for jj in range(indptr[i], indptr[i + 1]):
                s += data[jj] * psi[indices[jj]]
            w = (s - center * psi[i]) * inv_half
            v_cur[i] = w
            acc[i] += coeffs[1] * w
        for k in range(2, coeffs.shape[0]):
            _cheb_step_nb(indptr, indices, data, center, inv_half, v_prev, v_cur, v_next, acc, coeffs[k])
            v_prev, v_cur, v_next = v_cur, v_next, v_prev
        return acc

    @njit(cache=True)
    def _chebyshev_series_nb_par(indptr, indices, data, center, half_width, coeffs, psi):
        n = psi.shape[0]
        inv_half = 1.0 / half_width
        v_prev = psi.copy()
        v_cur = np.empty(n, dtype=np.complex128)
        v_next = np.empty(n, dtype=np.complex128)
        acc = coeffs[0] * psi
        if coeffs.shape[0] == 1:
            return acc
        _csr_matvec_nb_par(indptr, indices, data, psi, v_cur)
        for i in range(n):
            v_cur[i] = (v_cur[i] - center * psi[i]) * inv_half
            acc[i] += coeffs[1] * v_cur[i]
        for k in range(2, coeffs.shape[0]):
            _cheb_step_nb_par(indptr, indices, data, center, inv_half, v_prev, v_cur, v_next, acc, coeffs[k])
            v_prev, v_cur, v_next = v_cur, v_next, v_prev
        return acc


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------


def _chebyshev_series_np(mat: sp.csr_matrix, center, half_width, coeffs, psi):
    inv_half = 1.0 / half_width
    v_prev = psi.copy()
    acc = coeffs[0] * psi
    if len(coeffs) == 1:
        return acc
    v_cur = (mat @ psi - center * psi) * inv_half
    acc += coeffs[1] * v_cur
    for ck in coeffs[2:]:
        v_next = (mat @ v_cur - center * v_cur) * (2.0 * inv_half)
        v_next -= v_prev
        acc += ck * v_next
        v_prev, v_cur = v_cur, v_next
    return acc


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def csr_matvec(mat: sp.csr_matrix, x: np.ndarray, *, force_numpy: bool = False) -> np.ndarray:
    """``mat @ x`` for a real CSR matrix and complex vector."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    if HAS_NUMBA and not force_numpy:
        out = np.empty(mat.shape[0], dtype=np.complex128)
        fn = _csr_matvec_nb_par if _use_parallel(mat.shape[0]) else _csr_matvec_nb
        fn(mat.indptr, mat.indices, mat.data, x, out)
        return out
    return np.asarray(mat @ x)


def chebyshev_series(
    mat: sp.csr_matrix,
    center: float,
    half_width: float,
    coeffs: np.ndarray,
    psi: np.ndarray,
    *,
    force_numpy: bool = False,
) -> np.ndarray:
    """Evaluate ``sum_k coeffs[k] T_k((mat - center) / half_width) @ psi``.

    ``mat`` must be a CSR matrix with float64 data, int32/int64 indices.
    """
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
    if HAS_NUMBA and not force_numpy:
        fn = _chebyshev_series_nb_par if _use_parallel(psi.shape[0]) else _chebyshev_series_nb
        return fn(mat.indptr, mat.indices, mat.data, float(center), float(half_width), coeffs, psi)
    return _chebyshev_series_np(mat, center, half_width, coeffs, psi)
