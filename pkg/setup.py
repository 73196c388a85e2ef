"""Build script for the optional compiled kernels.

The package works without them; ``prism_ood._backend`` falls back to the
numpy implementations when the extension is missing.
"""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("PRISM_OOD_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "prism_ood._kernels",
                ["src/prism_ood/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no contraction into FMA: results must match the numpy fallback bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
