import os

from setuptools import Extension, setup

# The compiled resampling kernel is an optional accelerator: the package
# falls back to a pure-numpy implementation when it is absent.  Set
# PCSIG_NO_EXT=1 to skip compilation entirely.
ext_modules = []
if os.environ.get("PCSIG_NO_EXT") != "1":
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pcsig._kernel",
                sources=["src/pcsig/_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
