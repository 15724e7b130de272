import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the kernels fall back at import
    cythonize = None


def _extensions():
    if cythonize is None or os.environ.get("LOCALSTAB_NO_EXT"):
        return []
    ext = Extension(
        "localstab._kernels._ckernels",
        ["src/localstab/_kernels/_ckernels.pyx"],
        # bit-identical results with the Python fallback need plain IEEE ops
        extra_compile_args=["-O2", "-ffp-contract=off"],
        optional=True,
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=_extensions())
