import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TABXCHECK_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "tabxcheck._hnsw_native",
                    ["src/tabxcheck/_hnsw_native.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level="3",
        )
    except Exception as exc:  # pragma: no cover - build-env dependent
        print(f"warning: compiled kernels disabled, falling back to pure Python ({exc})")

setup(ext_modules=ext_modules)
