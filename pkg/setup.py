import os

from setuptools import setup

ext_modules = []
if os.environ.get("CSBPCAT_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("csbpcat._core", ["src/csbpcat/_core.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"])],
            language_level=3,
        )
    except ImportError:
        # pure Python fallback is selected at import time
        ext_modules = []

setup(ext_modules=ext_modules)
