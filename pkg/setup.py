"""Build script: compiles the optional stepper extension, falls back to pure Python."""

import sys

from setuptools import Extension, setup


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"stepper extension skipped ({exc}); pure-NumPy backend will be used",
              file=sys.stderr)
        return []
    ext = Extension(
        "kinetic_em._steppers._core",
        ["src/kinetic_em/_steppers/_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions())
