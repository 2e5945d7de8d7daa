from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    import numpy as np

    ext_modules = cythonize(
        [Extension("braingen._idw", ["src/braingen/_idw.pyx"])],
        language_level=3,
    )
    include_dirs = [np.get_include()]
except ImportError:
    # Pure-Python fallback is selected at import time; the extension is optional.
    ext_modules = []
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
