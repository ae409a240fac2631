import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SKILLSCALE_NO_EXT") != "1":
    try:
        import numpy  # noqa: F401
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("skillscale._kernels_c", ["src/skillscale/_kernels_c.pyx"],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": 3},
        )

setup(ext_modules=ext_modules)
