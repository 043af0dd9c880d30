"""Build the compiled kernel extension.

    pip install -e . --no-build-isolation

If the compiler or Cython is unavailable the package still works through
its pure-Python fallback.
"""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("LEANRESNET_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "leanresnet._kernels",
                ["src/leanresnet/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
