import numpy
from setuptools import Extension, setup

# The compiled kernels are an optimisation; the package falls back to the
# pure-numpy implementations in yaompc._kernels_py when the extension is
# missing, so a failed cythonize must not break the install.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "yaompc._kernels",
                ["src/yaompc/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
