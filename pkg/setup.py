"""Build hook for the optional compiled kernel.

The extension uses typed memoryviews only, so no NumPy headers are needed.
If Cython is unavailable the package still installs; the solver falls back
to the pure Python kernels at import time.
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
                "sfdesim._kernels._speedups",
                ["src/sfdesim/_kernels/_speedups.pyx"],
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

setup(ext_modules=ext_modules)
