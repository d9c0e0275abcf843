"""Compiled tridiagonal line solvers for the alternating-direction steppers.

All kernels act on C-ordered (nx, ny) arrays. ``keep`` marks unknowns; masked
nodes are decoupled identity rows. For each line the matrix is

    diag_i = 1 + 2 alpha + tau sigma_i / 2,   off = -alpha (between kept nodes)

with alpha = i tau / h^2, i.e. I + i tau (-D_hh - i sigma / 2) on the kept nodes.
"""
from __future__ import annotations

import platform
from contextlib import contextmanager

import numba as nb
import numpy as np
from llvmlite import ir
from numba import types
from numba.core import cgutils
from numba.extending import intrinsic


@nb.njit(cache=True)
def factor_axis0(sigma, tau, alpha, keep, cp, inv):
    nx, ny = sigma.shape
    for i in range(nx):
        for j in range(ny):
            if not keep[i, j]:
                inv[i, j] = 1.0
                cp[i, j] = 0.0
                continue
            den = 1.0 + 2.0 * alpha + 0.5 * tau * sigma[i, j]
            if i > 0 and keep[i - 1, j]:
                den -= -alpha * cp[i - 1, j]
            inv[i, j] = 1.0 / den
            if i < nx - 1 and keep[i + 1, j]:
                cp[i, j] = -alpha * inv[i, j]
            else:
                cp[i, j] = 0.0


@nb.njit(cache=True)
def factor_axis1(sigma, tau, alpha, keep, cp, inv):
    nx, ny = sigma.shape
    for i in range(nx):
        for j in range(ny):
            if not keep[i, j]:
                inv[i, j] = 1.0
                cp[i, j] = 0.0
                continue
            den = 1.0 + 2.0 * alpha + 0.5 * tau * sigma[i, j]
            if j > 0 and keep[i, j - 1]:
                den -= -alpha * cp[i, j - 1]
            inv[i, j] = 1.0 / den
            if j < ny - 1 and keep[i, j + 1]:
                cp[i, j] = -alpha * inv[i, j]
            else:
                cp[i, j] = 0.0


@nb.njit(cache=True)
def cayley_axis0(u, out, sigma, tau, alpha, cp, inv):
    """out = (I + i tau H_x)^{-1} (I - i tau H_x) u along axis 0.

    Expects u = 0 on masked nodes and inv = 0 there (see ``cayley_factors``),
    which keeps the loops free of mask tests.
    """
    nx, ny = u.shape
    c0 = 1.0 - 2.0 * alpha
    ht = 0.5 * tau
    for j in range(ny):
        out[0, j] = ((c0 - ht * sigma[0, j]) * u[0, j] + alpha * u[1, j]) * inv[0, j]
    for i in range(1, nx - 1):
        for j in range(ny):
            r = (c0 - ht * sigma[i, j]) * u[i, j] + alpha * (u[i - 1, j] + u[i + 1, j] + out[i - 1, j])
            out[i, j] = r * inv[i, j]
    i = nx - 1
    for j in range(ny):
        out[i, j] = ((c0 - ht * sigma[i, j]) * u[i, j] + alpha * (u[i - 1, j] + out[i - 1, j])) * inv[i, j]
    for i in range(nx - 2, -1, -1):
        for j in range(ny):
            out[i, j] -= cp[i, j] * out[i + 1, j]


@nb.njit(cache=True)
def cayley_axis1(u, out, sigma, tau, alpha, cp, inv):
    """out = (I + i tau H_y)^{-1} (I - i tau H_y) u along axis 1 (same conventions)."""
    nx, ny = u.shape
    c0 = 1.0 - 2.0 * alpha
    ht = 0.5 * tau
    for i in range(nx):
        ui = u[i]
        oi = out[i]
        si = sigma[i]
        vi = inv[i]
        prev = ((c0 - ht * si[0]) * ui[0] + alpha * ui[1]) * vi[0]
        oi[0] = prev
        for j in range(1, ny - 1):
            prev = ((c0 - ht * si[j]) * ui[j] + alpha * (ui[j - 1] + ui[j + 1] + prev)) * vi[j]
            oi[j] = prev
        j = ny - 1
        prev = ((c0 - ht * si[j]) * ui[j] + alpha * (ui[j - 1] + prev)) * vi[j]
        oi[j] = prev
        ci = cp[i]
        for j in range(ny - 2, -1, -1):
            prev = oi[j] - ci[j] * prev
            oi[j] = prev


@nb.njit(cache=True)
def solve_axis0(rhs, out, alpha, keep, cp, inv):
    """out = (I + i tau H_x)^{-1} rhs (masked rows are identity)."""
    nx, ny = rhs.shape
    for i in range(nx):
        for j in range(ny):
            r = rhs[i, j]
            if keep[i, j] and i > 0 and keep[i - 1, j]:
                r += alpha * out[i - 1, j]
            out[i, j] = r * inv[i, j]
    for i in range(nx - 2, -1, -1):
        for j in range(ny):
            out[i, j] -= cp[i, j] * out[i + 1, j]


@nb.njit(cache=True)
def solve_axis1(rhs, out, alpha, keep, cp, inv):
    nx, ny = rhs.shape
    for i in range(nx):
        for j in range(ny):
            r = rhs[i, j]
            if keep[i, j] and j > 0 and keep[i, j - 1]:
                r += alpha * out[i, j - 1]
            out[i, j] = r * inv[i, j]
        for j in range(ny - 2, -1, -1):
            out[i, j] -= cp[i, j] * out[i, j + 1]


@nb.njit(cache=True)
def masked_sum_sq(u, sigma):
    """(sum |u|^2, sum sigma |u|^2)."""
    nx, ny = u.shape
    m = 0.0
    a = 0.0
    for i in range(nx):
        for j in range(ny):
            v = u[i, j].real * u[i, j].real + u[i, j].imag * u[i, j].imag
            m += v
            a += sigma[i, j] * v
    return m, a


def line_factors(sigma: np.ndarray, keep: np.ndarray, tau: float, h: float, axis: int):
    """Thomas factors (c', 1/den) for I + i tau H along ``axis``; masked rows are identity."""
    alpha = 1j * tau / (h * h)
    cp = np.empty(sigma.shape, dtype=np.complex128)
    inv = np.empty(sigma.shape, dtype=np.complex128)
    (factor_axis0 if axis == 0 else factor_axis1)(sigma, tau, alpha, keep, cp, inv)
    return alpha, cp, inv


def cayley_factors(sigma: np.ndarray, keep: np.ndarray, tau: float, h: float, axis: int):
    """As ``line_factors`` but with 1/den = 0 on masked rows, which forces zeros there."""
    alpha, cp, inv = line_factors(sigma, keep, tau, h, axis)
    inv[~keep] = 0.0
    return alpha, cp, inv


# -- flush-to-zero control -----------------------------------------------------------
# Gaussian tails decay into the subnormal range, where x86 arithmetic is very
# slow. Steppers run with FTZ/DAZ set and restore the caller's MXCSR afterwards.

_X86 = platform.machine().lower() in ("x86_64", "amd64", "i686", "x86")

if _X86:
    @intrinsic
    def _stmxcsr(typingctx):
        def codegen(context, builder, signature, args):
            slot = cgutils.alloca_once(builder, ir.IntType(32))
            fnty = ir.FunctionType(ir.VoidType(), [ir.IntType(8).as_pointer()])
            fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.x86.sse.stmxcsr")
            builder.call(fn, [builder.bitcast(slot, ir.IntType(8).as_pointer())])
            return builder.load(slot)
        return types.uint32(), codegen

    @intrinsic
    def _ldmxcsr(typingctx, value):
        def codegen(context, builder, signature, args):
            slot = cgutils.alloca_once(builder, ir.IntType(32))
            builder.store(args[0], slot)
            fnty = ir.FunctionType(ir.VoidType(), [ir.IntType(8).as_pointer()])
            fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.x86.sse.ldmxcsr")
            builder.call(fn, [builder.bitcast(slot, ir.IntType(8).as_pointer())])
            return context.get_dummy_value()
        return types.void(types.uint32), codegen

    @nb.njit
    def get_mxcsr():
        return _stmxcsr()

    @nb.njit
    def set_mxcsr(value):
        _ldmxcsr(value)


_FTZ_DAZ = 0x8040


@contextmanager
def flush_denormals():
    """Run the enclosed block with subnormals flushed to zero (no-op off x86)."""
    if not _X86:
        yield
        return
    old = np.uint32(get_mxcsr())
    set_mxcsr(np.uint32(old | _FTZ_DAZ))
    try:
        yield
    finally:
        set_mxcsr(old)
