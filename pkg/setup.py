import os

from setuptools import setup

ext_modules = []
if os.environ.get("MCDIRICHLET_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("mcdirichlet._ckernel", ["src/mcdirichlet/_ckernel.pyx"], extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
