"""
pyLCQ
Low-rank codebook quantization of transformer blocks
"""
import sys
from setuptools import setup, find_packages

short_description = "Low-rank codebook quantization of transformer blocks".split("\n")[0]

# from https://github.com/pytest-dev/pytest-runner#conditional-requirement
needs_pytest = {'pytest', 'test', 'ptr'}.intersection(sys.argv)
pytest_runner = ['pytest-runner'] if needs_pytest else []

try:
    with open("README.md", "r") as handle:
        long_description = handle.read()
except OSError:
    long_description = None

version = {}
with open("pylcq/_version.py") as handle:
    exec(handle.read(), version)


setup(
    name='pylcq',
    description=short_description,
    long_description=long_description,
    long_description_content_type="text/markdown",
    version=version["__version__"],
    license='MIT',

    packages=find_packages(),

    # Ships pylcq/data/quantize.ini
    include_package_data=True,
    package_data={'pylcq': ['data/*.ini']},

    setup_requires=[] + pytest_runner,
    install_requires=['numpy>=1.20', 'scipy', 'pandas'],
    tests_require=['pytest'],
    entry_points={'console_scripts': ['pylcq=pylcq.cli:main']},
    python_requires=">=3.8",
    zip_safe=False,
)
