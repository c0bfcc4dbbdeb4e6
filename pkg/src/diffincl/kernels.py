"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``DIFFINCL_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the pure-Python kernels are used.  :func:`use` switches
backends at run time (parity tests and benchmarks).
"""

import os

import numpy as np

from . import _kernels_py
from . import opcodes as op
from .errors import DomainError, ExprError

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_backend = _kernels_py
if _compiled is not None and os.environ.get("DIFFINCL_PURE_PYTHON", "") in ("", "0"):
    _backend = _compiled


def available():
    """Names of the importable backends."""
    return ["python"] + (["cython"] if _compiled is not None else [])


def backend():
    return _backend.BACKEND


def use(name):
    """Select ``"python"`` or ``"cython"``; returns the previous backend name."""
    global _backend
    prev = _backend.BACKEND
    if name == "python":
        _backend = _kernels_py
    elif name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        _backend = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def _raise(status, source):
    if status == op.ERR_OPCODE:
        raise ExprError(f"corrupt program for {source!r}")
    raise DomainError(f"{op.STATUS_MESSAGES[status]} in {source!r}")


def eval_program(program, env):
    """Evaluate a compiled :class:`~diffincl.exprdsl.Program` on one env row."""
    status, value = _backend.eval_program(program.code, program.consts, env)
    if status != op.OK:
        _raise(status, program.source)
    return value


def eval_batch(program, envs):
    """Evaluate a program on each row of a 2-D env array."""
    envs = np.asarray(envs, dtype=float)
    if envs.ndim != 2:
        raise ValueError("envs must be 2-D")
    status, values = _backend.eval_batch(program.code, program.consts, envs)
    if status != op.OK:
        _raise(status, program.source)
    return values


def wrap_time(t, half_period):
    """``t`` wrapped into ``(-k, k]`` for ``k = half_period``."""
    return _backend.wrap_time(float(t), float(half_period))


def pack(programs):
    """Concatenate programs into the flat arrays the segment integrator takes."""
    codes = [p.code for p in programs]
    consts = [p.consts for p in programs]
    code_off = np.zeros(len(programs) + 1, dtype=np.intp)
    const_off = np.zeros(len(programs) + 1, dtype=np.intp)
    code_off[1:] = np.cumsum([c.size for c in codes])
    const_off[1:] = np.cumsum([c.size for c in consts])
    flat_code = np.concatenate(codes).astype(np.int32) if codes else np.zeros(0, np.int32)
    flat_consts = np.concatenate(consts) if consts else np.zeros(0)
    if flat_consts.size == 0:
        flat_consts = np.zeros(1)
    return np.ascontiguousarray(flat_code), np.ascontiguousarray(flat_consts), code_off, const_off


def integrate_segment(accel, guards, strict, t0, x0, v0, t_end, rtol, atol, h0, hmax,
                      event_tol, half_period=0.0, max_steps=1_000_000):
    """Run one integration segment; see ``_kernels_py.integrate_segment``."""
    codes, consts, code_off, const_off = pack(list(accel) + list(guards))
    strict = np.asarray(strict, dtype=np.int8).reshape(-1)
    if strict.size != len(guards):
        raise ValueError("one strictness flag per guard required")
    return _backend.integrate_segment(
        codes, consts, code_off, const_off, len(accel), strict,
        float(t0), np.asarray(x0, dtype=float), np.asarray(v0, dtype=float), float(t_end),
        float(rtol), float(atol), float(h0), float(hmax), float(event_tol),
        float(half_period), int(max_steps))
