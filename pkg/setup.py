"""Build script for the optional compiled DTW core.

The package is fully functional without the extension: teashift._kernels
falls back to a vectorized numpy implementation when the compiled module
is missing (no Cython, no C compiler, unsupported platform).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "teashift._kernels._dtwc",
                ["src/teashift/_kernels/_dtwc.pyx"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
