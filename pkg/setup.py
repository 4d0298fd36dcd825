import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # build without the extension; the numpy decoder is used
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "supermajority._kernels",
                ["src/supermajority/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                language="c++",
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
