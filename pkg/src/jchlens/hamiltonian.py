"""One-excitation Jaynes-Cummings-Hubbard Hamiltonian.

Basis ordering is blocked: indices ``[0, N)`` hold the photonic
amplitudes ``c_r`` (state ``|g,1>_r``) and ``[N, 2N)`` the atomic
amplitudes ``d_r`` (state ``|e,0>_r``), with ``r`` the row-major site
index of :mod:`jchlens.lattice`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .lattice import SiteTable

DENSE_CAP = 4096
BASIS = "blocked:photon,atom"

_OP_MAGIC = b"JCHH"
_OP_HEADER = struct.Struct("<4sIQQd")  # magic, version, dim, nnz, shift
_OP_RECORD = np.dtype([("row", "<i8"), ("col", "<i8"), ("val", "<f8")])


class DenseCapError(RuntimeError):
    pass


@dataclass(frozen=True)
class SparseHamiltonian:
    """Real symmetric CSR operator on the 2N-dimensional one-excitation space.

    ``matrix`` already has ``shift * I`` subtracted; physical energies are
    eigenvalues of ``matrix`` plus ``shift``.
    """

    matrix: sp.csr_matrix
    n_sites: int
    shift: float = 0.0
    basis: str = BASIS

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def photon_index(self, sites):
        return np.asarray(sites)

    def atom_index(self, sites):
        return np.asarray(sites) + self.n_sites

    def subspace(self, site_mask: np.ndarray) -> tuple["SparseHamiltonian", np.ndarray]:
        """Restriction to the sites in ``site_mask``; also returns the kept indices."""
        sites = np.flatnonzero(site_mask)
        idx = np.concatenate([sites, sites + self.n_sites])
        sub = self.matrix[idx][:, idx].tocsr()
        return SparseHamiltonian(sub, len(sites), self.shift, self.basis), idx

    def expectation(self, psi: np.ndarray) -> float:
        """<psi|H|psi> in physical energy units."""
        return float(np.real(np.vdot(psi, self.matrix @ psi))) + self.shift * float(np.vdot(psi, psi).real)


def assemble(sites: SiteTable, *, shift: float | str | None = None) -> SparseHamiltonian:
    """Sparse Hamiltonian for a resolved lattice.

    Each bond contributes ``-kappa`` to both ``H[r, s]`` and ``H[s, r]``.
    ``shift`` subtracts a constant from the diagonal (rotating frame);
    pass ``"omega"`` to use the mean cavity frequency.
    """
    n = sites.n_sites
    if shift == "omega":
        shift = float(np.mean(sites.omega))
    shift = float(shift or 0.0)
    r = np.arange(n)
    e0, e1 = sites.edges[:, 0], sites.edges[:, 1]
    rows = np.concatenate([r, r + n, r, r + n, e0, e1])
    cols = np.concatenate([r, r + n, r + n, r, e1, e0])
    vals = np.concatenate(
        [sites.omega - shift, sites.eps - shift, sites.beta, sites.beta, -sites.edge_kappa, -sites.edge_kappa]
    )
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    mat.indices = mat.indices.astype(np.int64)
    mat.indptr = mat.indptr.astype(np.int64)
    asym = mat - mat.T
    if asym.nnz and np.max(np.abs(asym.data)) > 0:
        raise AssertionError("assembled Hamiltonian is not symmetric")
    return SparseHamiltonian(mat, n, shift)


def dressed_energy(n: int, omega: float, eps: float, beta: float, branch: str | int = "+") -> float:
    """Energy of the n-excitation polariton ``|+/-, n>`` of a single cavity."""
    if int(n) < 1:
        raise ValueError("dressed states need n >= 1; |g,0> has energy 0 and no branch")
    s = _branch_sign(branch)
    delta = omega - eps
    return n * omega - delta / 2 + s * math.sqrt(n * beta**2 + (delta / 2) ** 2)


def mixing_angle(n: int, beta: float, delta: float) -> float:
    """Polariton mixing angle ``0.5 * arctan(-2 sqrt(n) beta / delta)``.

    At ``delta = 0`` this returns ``pi/4`` (the limit from ``delta -> 0-``
    with ``beta > 0``), giving equal-weight symmetric/antisymmetric states.
    """
    if int(n) < 1:
        raise ValueError("mixing angle needs n >= 1")
    if delta == 0:
        return math.pi / 4 if beta != 0 else 0.0
    return 0.5 * math.atan(-2 * math.sqrt(n) * beta / delta)


def _branch_sign(branch) -> int:
    if branch in ("+", 1, "upper", "plus"):
        return 1
    if branch in ("-", -1, "lower", "minus"):
        return -1
    raise ValueError(f"branch must be '+' or '-', got {branch!r}")


def gershgorin_bounds(H: SparseHamiltonian) -> tuple[float, float]:
    """Interval containing the spectrum of ``H.matrix`` (shift not added)."""
    m = H.matrix
    diag = m.diagonal()
    absrow = np.asarray(abs(m).sum(axis=1)).ravel()
    radius = absrow - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


def dense_spectrum(H: SparseHamiltonian, *, cap: int = DENSE_CAP, vectors: bool = True):
    """Eigenvalues (ascending, physical units) and optionally eigenvectors."""
    if H.dim > cap:
        raise DenseCapError(f"dimension {H.dim} exceeds dense cap {cap}")
    a = H.matrix.toarray()
    if vectors:
        w, v = np.linalg.eigh(a)
        return w + H.shift, v
    return np.linalg.eigvalsh(a) + H.shift


def save_operator(path, H: SparseHamiltonian) -> None:
    """Binary dump: little-endian header then (row, col, value) triples."""
    coo = H.matrix.tocoo()
    rec = np.empty(coo.nnz, dtype=_OP_RECORD)
    rec["row"], rec["col"], rec["val"] = coo.row, coo.col, coo.data
    with open(path, "wb") as fh:
        fh.write(_OP_HEADER.pack(_OP_MAGIC, 1, H.dim, coo.nnz, H.shift))
        fh.write(rec.tobytes())


def load_operator(path) -> SparseHamiltonian:
    with open(path, "rb") as fh:
        magic, version, dim, nnz, shift = _OP_HEADER.unpack(fh.read(_OP_HEADER.size))
        if magic != _OP_MAGIC or version != 1:
            raise ValueError(f"{path}: not a JCH operator dump")
        rec = np.frombuffer(fh.read(nnz * _OP_RECORD.itemsize), dtype=_OP_RECORD)
    mat = sp.csr_matrix((rec["val"], (rec["row"], rec["col"])), shape=(dim, dim))
    mat.indices = mat.indices.astype(np.int64)
    mat.indptr = mat.indptr.astype(np.int64)
    return SparseHamiltonian(mat, dim // 2, shift)
