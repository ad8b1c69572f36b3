"""Build script for the optional compiled kernel.

The Cython extension is optional: if it cannot be built the package falls
back to the numpy implementation at import time.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("QSSHYBRID_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "qsshybrid._kernel",
                    ["src/qsshybrid/_kernel.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
