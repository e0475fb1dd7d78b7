import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "qssep._brickwork",
        ["src/qssep/_brickwork.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-fcx-limited-range", "-fno-wrapv"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": 3}))
