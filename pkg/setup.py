from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    # no build toolchain: install the package alone, kernels fall back to numpy
    ext_modules = []
else:
    ext_modules = cythonize([
        Extension(
            "stgeom.kernels._raycast",
            ["src/stgeom/kernels/_raycast.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
