from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; aeclab._backend falls back
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "aeclab._kernels",
                ["src/aeclab/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
