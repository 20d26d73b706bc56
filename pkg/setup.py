"""Build the optional compiled kernels; the package works without them."""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("METAUNC_NO_EXTENSIONS", "") not in ("1", "true", "yes"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        extra = ["/O2"] if os.name == "nt" else ["-O3"]
        ext_modules = cythonize(
            [
                Extension(
                    "metaunc.kernels._ckernels",
                    ["src/metaunc/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=extra,
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
