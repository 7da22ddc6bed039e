"""Time the numba kernels against the numpy fallback.

Kernel timings run in one process by passing ``force_numpy``; the
end-to-end ``evolve`` timing runs in a child process with
``JCHLENS_DISABLE_NUMBA=1`` so that the fallback is chosen exactly as a
user would select it.

    python3 benchmarks/bench_kernels.py --sizes 40 80 160 --repeat 5
"""

from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from jchlens import _kernels
from jchlens.hamiltonian import assemble, gershgorin_bounds
from jchlens.lattice import LatticeSpec, RegionMap, RegionParams, build_lattice
from jchlens.propagator import chebyshev_terms


def lattice_operator(L: int):
    spec = LatticeSpec(L, L, "rotated", boundary="periodic")
    H = assemble(build_lattice(spec, RegionMap.uniform(spec, RegionParams(0.0, 5.27, 100.0, 1.0))), shift="omega")
    return H


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (JIT compile on first call)
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def bench_kernels(sizes, repeat: int, dt: float) -> list[dict]:
    from scipy.special import jv

    rows = []
    rng = np.random.default_rng(0)
    for L in sizes:
        H = lattice_operator(L)
        lo, hi = gershgorin_bounds(H)
        c, h = 0.5 * (hi + lo), 0.5 * (hi - lo)
        m, _ = chebyshev_terms(h * dt, 1e-10)
        coeffs = jv(np.arange(m), h * dt) * (2.0 * (-1j) ** np.arange(m))
        coeffs[0] /= 2.0
        psi = rng.normal(size=H.dim) + 1j * rng.normal(size=H.dim)
        psi /= np.linalg.norm(psi)
        row = {"L": L, "dim": H.dim, "nnz": H.nnz, "terms": m}
        for name, force in (("numba", False), ("numpy", True)):
            if name == "numba" and not _kernels.HAS_NUMBA:
                continue
            row[f"matvec_{name}_s"] = best_of(lambda f=force: _kernels.csr_matvec(H.matrix, psi, force_numpy=f), repeat)
            row[f"series_{name}_s"] = best_of(
                lambda f=force: _kernels.chebyshev_series(H.matrix, c, h, coeffs, psi, force_numpy=f), repeat
            )
        if _kernels.HAS_NUMBA:
            a = _kernels.chebyshev_series(H.matrix, c, h, coeffs, psi)
            b = _kernels.chebyshev_series(H.matrix, c, h, coeffs, psi, force_numpy=True)
            row["max_abs_diff"] = float(np.max(np.abs(a - b)))
            row["series_speedup"] = row["series_numpy_s"] / row["series_numba_s"]
        rows.append(row)
    return rows


_CHILD = """
import json, math, time, numpy as np
from jchlens import _kernels
from jchlens.hamiltonian import assemble
from jchlens.lattice import LatticeSpec, RegionMap, RegionParams, build_lattice
from jchlens.propagator import evolve
L, t = {L}, {t}
spec = LatticeSpec(L, L, "rotated", boundary="periodic")
H = assemble(build_lattice(spec, RegionMap.uniform(spec, RegionParams(0.0, 5.27, 100.0, 1.0))), shift="omega")
psi = np.zeros(H.dim, complex); psi[0] = 1.0
evolve(H, psi, 1.0, 1e-10)
t0 = time.perf_counter(); r = evolve(H, psi, t, 1e-10); el = time.perf_counter() - t0
print(json.dumps({{"backend": _kernels.backend(), "seconds": el, "matvecs": r.matvecs, "psi_head": [abs(x) for x in r.psi[:4]]}}))
"""


def bench_evolve(L: int, t: float) -> dict:
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, JCHLENS_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _CHILD.format(L=L, t=t)], env=env, capture_output=True, text=True, check=True)
        rec = json.loads(res.stdout.strip().splitlines()[-1])
        out[rec["backend"]] = rec
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[40, 80, 160])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dt", type=float, default=10.0, help="Chebyshev step length in 1/kappa")
    ap.add_argument("--evolve-size", type=int, default=120)
    ap.add_argument("--evolve-time", type=float, default=50.0)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rows = bench_kernels(args.sizes, args.repeat, args.dt)
    print(f"backend available: {_kernels.backend()}  threads: {_kernels.numba.get_num_threads() if _kernels.HAS_NUMBA else 1}")
    print(f"{'L':>5} {'dim':>8} {'terms':>6} {'matvec nb':>10} {'matvec np':>10} {'series nb':>10} {'series np':>10} {'speedup':>8} {'max diff':>9}")
    for r in rows:
        print(
            f"{r['L']:>5} {r['dim']:>8} {r['terms']:>6} "
            f"{r.get('matvec_numba_s', math.nan):>10.2e} {r['matvec_numpy_s']:>10.2e} "
            f"{r.get('series_numba_s', math.nan):>10.2e} {r['series_numpy_s']:>10.2e} "
            f"{r.get('series_speedup', math.nan):>8.2f} {r.get('max_abs_diff', math.nan):>9.1e}"
        )
    ev = bench_evolve(args.evolve_size, args.evolve_time)
    for name, rec in ev.items():
        print(f"evolve L={args.evolve_size} t={args.evolve_time}: {name:<6} {rec['seconds']:.3f} s  ({rec['matvecs']} mat-vecs)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "evolve": ev}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
