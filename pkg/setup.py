from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    # -ffp-contract=off forbids FMA contraction so the compiled kernels are
    # bit-identical to the pure-Python fallback (test_backends relies on this).
    extensions = cythonize(
        [
            Extension(
                "asymlora._ckernels",
                ["src/asymlora/_ckernels.pyx"],
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    extensions = []

setup(ext_modules=extensions)
