"""Bond force kernels.

Two data-parallel formulations of the same physics:

* ``bond_parallel`` - one work slot per (node, bond) pair. Each node owns a
  group of N slots that write their bond force into a group-local cache,
  which is then summed by a binary tree with halving stride. Bond breaking
  is fused into the same pass.
* ``node_parallel`` - one worker per node, serial left-to-right summation
  over its bonds. Kept as the correctness oracle and benchmark baseline.

Both call the same inlined per-bond routine, so individual bond forces are
bitwise identical and only the summation order differs.
"""
from __future__ import annotations

import os

import numpy as np
from numba import njit, prange, set_num_threads, config as numba_config

BLOCK = 256

# numba tries TBB first and warns when the installed version is too old
if "NUMBA_THREADING_LAYER" not in os.environ:
    try:
        from numba.np.ufunc import omppool  # noqa: F401
        numba_config.THREADING_LAYER = "omp"
    except ImportError:
        numba_config.THREADING_LAYER = "workqueue"

_threads = os.environ.get("PERIDYN_THREADS")
if _threads:
    set_num_threads(max(1, min(int(_threads), numba_config.NUMBA_NUM_THREADS)))


@njit(inline="always", cache=True)
def _envelope(c, bp, fv, t, s):
    if s < bp[t, 0]:
        return c * s
    last = bp.shape[1] - 1
    if s >= bp[t, last]:
        return 0.0 * s
    m = 1
    while s >= bp[t, m]:
        m += 1
    return fv[t, m - 1] + (fv[t, m] - fv[t, m - 1]) * (s - bp[t, m - 1]) / (bp[t, m] - bp[t, m - 1])


@njit(inline="always", cache=True)
def _bond(i, k, j, coords, u, volume, history, bond_type, stiffness, bp, fv,
          lam, beta, no_fail, update):
    """Force density on node i from slot k (neighbour j).

    Returns (fx, fy, fz, broken). History is advanced when ``update`` is set.
    """
    xi0 = coords[j, 0] - coords[i, 0]
    xi1 = coords[j, 1] - coords[i, 1]
    xi2 = coords[j, 2] - coords[i, 2]
    y0 = xi0 + (u[j, 0] - u[i, 0])
    y1 = xi1 + (u[j, 1] - u[i, 1])
    y2 = xi2 + (u[j, 2] - u[i, 2])
    l0 = np.sqrt(xi0 * xi0 + xi1 * xi1 + xi2 * xi2)
    ll = np.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
    s = (ll - l0) / l0
    t = bond_type[i, k] if bond_type.shape[0] > 0 else 0
    c = stiffness[t]
    last = bp.shape[1] - 1
    h = history[i, k]
    if s > h:
        h = s
        if update:
            history[i, k] = h
    if no_fail[i] or no_fail[j]:
        f = c * s
    elif h >= bp[t, last]:
        return 0.0 * s, 0.0 * s, 0.0 * s, True
    elif s < 0.0 or h < bp[t, 0]:
        f = c * s
    elif s >= h:
        f = _envelope(c, bp, fv, t, s)
    else:
        f = s * (_envelope(c, bp, fv, t, h) / h)
    if lam.shape[0] > 0:
        f = f * lam[i, k]
    if beta.shape[0] > 0:
        f = f * beta[i, k]
    scale = f * volume[j] / ll
    return y0 * scale, y1 * scale, y2 * scale, False


@njit(parallel=True, cache=True)
def bond_parallel(coords, u, volume, nlist, n_neigh, history, bond_type, stiffness,
                  bp, fv, lam, beta, no_fail, out):
    """Fused break-check, bond force and tree reduction; writes ``out`` (n, 3)."""
    n, N = nlist.shape
    nblocks = (n + BLOCK - 1) // BLOCK
    for b in prange(nblocks):
        cx = np.empty(N, out.dtype)
        cy = np.empty(N, out.dtype)
        cz = np.empty(N, out.dtype)
        for i in range(b * BLOCK, min(n, (b + 1) * BLOCK)):
            for k in range(N):
                j = nlist[i, k]
                if j == -1:
                    cx[k] = 0.0
                    cy[k] = 0.0
                    cz[k] = 0.0
                else:
                    fx, fy, fz, broken = _bond(i, k, j, coords, u, volume, history,
                                               bond_type, stiffness, bp, fv, lam,
                                               beta, no_fail, True)
                    if broken:
                        nlist[i, k] = -1
                        n_neigh[i] -= 1
                    cx[k] = fx
                    cy[k] = fy
                    cz[k] = fz
            p = N // 2
            while p > 0:
                for k in range(p):
                    cx[k] += cx[k + p]
                    cy[k] += cy[k + p]
                    cz[k] += cz[k + p]
                p //= 2
            out[i, 0] = cx[0]
            out[i, 1] = cy[0]
            out[i, 2] = cz[0]


@njit(parallel=True, cache=True)
def node_parallel(coords, u, volume, nlist, n_neigh, history, bond_type, stiffness,
                  bp, fv, lam, beta, no_fail, out):
    """Same physics as ``bond_parallel`` with serial per-node summation."""
    n, N = nlist.shape
    for i in prange(n):
        fx_i = 0.0 * out[i, 0]
        fy_i = 0.0 * out[i, 0]
        fz_i = 0.0 * out[i, 0]
        for k in range(N):
            j = nlist[i, k]
            if j != -1:
                fx, fy, fz, broken = _bond(i, k, j, coords, u, volume, history,
                                           bond_type, stiffness, bp, fv, lam,
                                           beta, no_fail, True)
                if broken:
                    nlist[i, k] = -1
                    n_neigh[i] -= 1
                fx_i += fx
                fy_i += fy
                fz_i += fz
        out[i, 0] = fx_i
        out[i, 1] = fy_i
        out[i, 2] = fz_i


@njit(cache=True)
def check_bonds(coords, u, nlist, n_neigh, history, bond_type, bp, no_fail):
    """First pass of the unfused scheme: advance history and break bonds."""
    n, N = nlist.shape
    last = bp.shape[1] - 1
    for i in range(n):
        for k in range(N):
            j = nlist[i, k]
            if j == -1:
                continue
            xi0 = coords[j, 0] - coords[i, 0]
            xi1 = coords[j, 1] - coords[i, 1]
            xi2 = coords[j, 2] - coords[i, 2]
            y0 = xi0 + (u[j, 0] - u[i, 0])
            y1 = xi1 + (u[j, 1] - u[i, 1])
            y2 = xi2 + (u[j, 2] - u[i, 2])
            l0 = np.sqrt(xi0 * xi0 + xi1 * xi1 + xi2 * xi2)
            ll = np.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
            s = (ll - l0) / l0
            t = bond_type[i, k] if bond_type.shape[0] > 0 else 0
            if s > history[i, k]:
                history[i, k] = s
            if not (no_fail[i] or no_fail[j]) and history[i, k] >= bp[t, last]:
                nlist[i, k] = -1
                n_neigh[i] -= 1


@njit(cache=True)
def bond_forces_from_history(coords, u, volume, nlist, history, bond_type, stiffness,
                             bp, fv, lam, beta, no_fail, out):
    """Second pass of the unfused scheme: forces only, tree-reduced per node."""
    n, N = nlist.shape
    cx = np.empty(N, out.dtype)
    cy = np.empty(N, out.dtype)
    cz = np.empty(N, out.dtype)
    for i in range(n):
        for k in range(N):
            j = nlist[i, k]
            if j == -1:
                cx[k] = 0.0
                cy[k] = 0.0
                cz[k] = 0.0
            else:
                fx, fy, fz, broken = _bond(i, k, j, coords, u, volume, history,
                                           bond_type, stiffness, bp, fv, lam,
                                           beta, no_fail, False)
                cx[k] = fx
                cy[k] = fy
                cz[k] = fz
        p = N // 2
        while p > 0:
            for k in range(p):
                cx[k] += cx[k + p]
                cy[k] += cy[k + p]
                cz[k] += cz[k + p]
            p //= 2
        out[i, 0] = cx[0]
        out[i, 1] = cy[0]
        out[i, 2] = cz[0]


def reduce_group(contributions) -> np.ndarray:
    """Sum N contributions by halving strides, per Cartesian component.

    ``contributions`` is an (N,) or (N, 3) array with N a power of two.
    The summation order is fixed: at stride p, slot k accumulates slot k + p.
    """
    cache = np.array(contributions, dtype=np.result_type(contributions, np.float32), copy=True)
    N = cache.shape[0]
    if N < 1 or N & (N - 1):
        raise ValueError(f"group size {N} is not a power of two")
    p = N // 2
    while p > 0:
        cache[:p] += cache[p:2 * p]
        p //= 2
    return cache[0]
