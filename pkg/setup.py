import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "dynamix._kernels",
    ["src/dynamix/_kernels.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize([ext], language_level=3))
