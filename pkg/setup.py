"""Build script: compiles the min-plus / budgeted-relaxation core as a C
extension when Cython and a compiler are available.  The package works
without it (aubry.kernels falls back to a numpy implementation), so a
failed extension build is downgraded to a warning.
"""

import warnings

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "aubry._kernels",
                ["src/aubry/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    warnings.warn(f"compiled kernels disabled ({exc}); using the python fallback")
    extensions = []

setup(ext_modules=extensions)
