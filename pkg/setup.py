"""Build script.

The solver inner loops have a compiled Cython implementation in
``bimax._fast._loops``.  Building it is optional: if Cython or a C compiler
is unavailable the package installs anyway and falls back to the pure-Python
loops at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "bimax._fast._loops",
                ["src/bimax/_fast/_loops.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"bimax: skipping compiled loops ({exc}); pure-Python fallback will be used",
          file=sys.stderr)

setup(ext_modules=ext_modules)
