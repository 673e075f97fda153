import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "flowrec._kernels._cyjet",
                ["src/flowrec/_kernels/_cyjet.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython available: install pure-Python; the package falls back to the
    # numpy kernel backend at import time.
    extensions = []

setup(ext_modules=extensions)
