"""Build-on-first-use loader for the C dot-product kernels.

The shared library is compiled once per (source, compiler, flags) combination
into a cache directory and loaded with ctypes. ctypes drops the GIL for the
duration of a foreign call, which is what lets the column-block workers run
in parallel.
"""

from __future__ import annotations

import ctypes
import hashlib
import logging
import os
import platform
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

log = logging.getLogger(__name__)

SOURCE = Path(__file__).with_name("ternary_kernels.c")
CACHE_ENV = "TERNARY_INFER_CACHE_DIR"

# Bit flags shared with ternary_kernels.c
FLAG_AVX512_VNNI = 1
FLAG_AVX_VNNI = 2
FLAG_NEON_SDOT = 4

_lib = None
_load_attempted = False


def _cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV)
    if root:
        return Path(root)
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return Path(base) / "ternary_infer"


def _compiler() -> str | None:
    for name in (os.environ.get("CC"), "cc", "gcc", "clang"):
        if name and shutil.which(name):
            return shutil.which(name)
    return None


def _flags() -> list[str]:
    flags = ["-O3", "-fPIC", "-shared", "-std=c11"]
    if platform.machine().lower() in ("arm64", "aarch64"):
        flags.append("-march=armv8.2-a+dotprod")
    return flags


def _suffix() -> str:
    return ".dylib" if sys.platform == "darwin" else ".so"


def build(force: bool = False) -> Path | None:
    """Compile the kernel library if needed and return its path (None without a compiler)."""
    cc = _compiler()
    if cc is None:
        log.warning("no C compiler found; only the portable backend is available")
        return None
    source = SOURCE.read_bytes()
    flags = _flags()
    key = hashlib.sha256(source + cc.encode() + " ".join(flags).encode()).hexdigest()[:16]
    target = _cache_dir() / f"ternary_kernels-{key}{_suffix()}"
    if target.exists() and not force:
        return target
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target.parent, suffix=_suffix())
    os.close(fd)
    cmd = [cc, *flags, "-o", tmp, str(SOURCE)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        os.unlink(tmp)
        log.warning("kernel build failed (%s):\n%s", " ".join(cmd), proc.stderr)
        return None
    os.replace(tmp, target)  # atomic, so concurrent builders never see a partial file
    return target


def load():
    """Return the loaded ctypes library, or None if it cannot be built."""
    global _lib, _load_attempted
    if _load_attempted:
        return _lib
    _load_attempted = True
    try:
        path = build()
        if path is None:
            return None
        lib = ctypes.CDLL(str(path))
    except OSError as exc:
        log.warning("could not load kernel library: %s", exc)
        return None

    lib.tk_cpu_features.restype = ctypes.c_int
    lib.tk_compiled_backends.restype = ctypes.c_int
    argtypes = [ctypes.c_void_p] * 3 + [ctypes.c_int64] * 5
    for name in ("tk_matmul_avx512_vnni", "tk_matmul_avx_vnni", "tk_matmul_neon_sdot"):
        fn = getattr(lib, name, None)
        if fn is not None:
            fn.argtypes = argtypes
            fn.restype = None
    _lib = lib
    return lib


def cpu_flags() -> int:
    lib = load()
    return lib.tk_cpu_features() if lib is not None else 0


def compiled_flags() -> int:
    lib = load()
    return lib.tk_compiled_backends() if lib is not None else 0


def kernel(name: str):
    lib = load()
    return getattr(lib, name) if lib is not None else None
