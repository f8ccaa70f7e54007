from setuptools import setup, find_packages

from python_xls_topopt._version import __version__

with open('README.md') as f:
    readme = f.read()

setup(
    name='python_xls_topopt',
    version=__version__,
    description="Multi-material topology optimization with the extended level set",
    long_description=readme,
    long_description_content_type='text/markdown',
    install_requires=[
        "numpy",
        "scipy>=1.12",
        "meshio>=5",
        "Pillow",
    ],
    packages=find_packages(exclude=["tests"]),
    entry_points={
        "console_scripts": ["xls-topopt=python_xls_topopt.cli:console_main"],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
