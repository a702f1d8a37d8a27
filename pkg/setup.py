# Builds the optional compiled kernel core. The package falls back to the
# numpy reference kernels when the extension is unavailable.
from setuptools import setup, Extension
from Cython.Build import cythonize

extensions = [
    Extension(
        "protodiff.backend._fastcore",
        sources=["src/protodiff/backend/_fastcore.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
)
