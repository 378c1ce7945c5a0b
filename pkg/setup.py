import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ocdl._convcore",
                ["src/ocdl/_convcore.pyx"],
                include_dirs=[np.get_include()],
            )
        ]
    )
except ImportError:
    # Pure-python fallback is selected at import when the extension is absent.
    ext_modules = []

setup(ext_modules=ext_modules)
