"""Build script for the optional compiled solver kernel.

The package works without the extension: ``ensparse.kernels`` falls back to a
pure-numpy implementation when the compiled module is absent. Building with
Cython just makes the patch-coding hot loop much faster.
"""

from setuptools import Extension, setup


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "ensparse.kernels._fista",
        ["src/ensparse/kernels/_fista.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
