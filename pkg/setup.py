"""Builds the optional Cython kernel extension.

    pip install -e . --no-build-isolation

If Cython or a C compiler is unavailable the package installs without the
extension and ``gatefusion.kernels`` uses the numpy fallback.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "gatefusion._kernels",
                ["src/gatefusion/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            ),
            # fast-math lets gcc vectorise exp() through glibc's libmvec
            Extension(
                "gatefusion._attention",
                ["src/gatefusion/_attention.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                extra_link_args=["-lmvec"],
            ),
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
