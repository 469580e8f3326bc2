import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FLOWEXP_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        exts = [Extension("flowexp._kernels.dopri_core",
                          sources=["src/flowexp/_kernels/dopri_core.pyx"],
                          include_dirs=[np.get_include()],
                          extra_compile_args=["-O3"])]
        ext_modules = cythonize(exts, language_level=3, quiet=True)

setup(ext_modules=ext_modules)
