"""Build script for the optional compiled kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time); the extension just makes the per-point inner loop
faster. Building is skipped gracefully when Cython is unavailable.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "netvb._kernels",
                ["src/netvb/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
