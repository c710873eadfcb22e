import os

import numpy as np
from setuptools import Extension, setup


def extensions():
    if os.environ.get("TIERMARKET_PURE_PYTHON"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "tiermarket._kernels",
        ["src/tiermarket/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize(
        [ext],
        compiler_directives={"boundscheck": False, "wraparound": False,
                             "cdivision": True, "language_level": 3},
    )


setup(ext_modules=extensions())
