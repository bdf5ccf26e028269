import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("PGASRT_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pgasrt._stencil_core",
                ["src/pgasrt/_stencil_core.pyx"],
                # -ffp-contract=off: keep the compiled kernel bit-identical
                # to the numpy fallback (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
