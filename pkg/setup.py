"""Build script: compiles the optional conv3d extension when a toolchain exists.

The package is fully functional without it (numpy reference kernels take
over), so any extension build failure downgrades to a warning instead of
failing the install.
"""

import warnings

from setuptools import setup

ext_modules = []
cmdclass = {}
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "waveseg.backend._ckernels",
        sources=[
            "src/waveseg/backend/_ckernels.pyx",
            "src/waveseg/backend/convkernels.c",
        ],
        include_dirs=[numpy.get_include(), "src/waveseg/backend"],
        extra_compile_args=["-O3", "-march=native", "-fno-math-errno"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # no Cython/numpy at build time: pure-python install
    warnings.warn(f"building without the compiled backend: {exc}")

try:
    setup(ext_modules=ext_modules)
except SystemExit:
    # Toolchain present but compilation failed (e.g. unsupported -march).
    warnings.warn("compiled backend failed to build; installing pure-python package")
    setup(ext_modules=[])
