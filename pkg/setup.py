"""Build the optional compiled kernel.

If Cython or a C compiler is unavailable the package still installs and
falls back to the numpy implementation in ``melidar._core_py``.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("MELIDAR_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext_modules = cythonize(
            [
                Extension(
                    "melidar._core",
                    ["src/melidar/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"] + openmp,
                    extra_link_args=openmp,
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:
        print(f"melidar: building without compiled kernel ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
