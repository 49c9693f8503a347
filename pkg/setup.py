#!/usr/bin/env python
from setuptools import setup, find_packages

from wsl import __version__

CLASSIFIERS = [
    'Development Status :: 3 - Alpha',
    'Intended Audience :: Science/Research',
    'License :: OSI Approved :: Apache Software License',
    'Natural Language :: English',
    'Operating System :: OS Independent',
    'Programming Language :: Python :: 3',
    'Topic :: Scientific/Engineering :: Artificial Intelligence',
]

LONG_DESCRIPTION = None
try:
    # read the description if it's there
    with open('README.rst') as desc_f:
        LONG_DESCRIPTION = desc_f.read()
except OSError:
    pass

test_requirements = [
    'sphinx',
    'pytest',
    'coverage',
    'tox',
    'mock'
]

dev_requirements = test_requirements


setup(
    name='wsl',
    version=__version__,
    author='Emory University Libraries',
    author_email='libsysdev-l@listserv.cc.emory.edu',
    license='Apache License, Version 2.0',
    packages=find_packages(exclude=['test', 'test.*']),
    python_requires='>=3.8',
    install_requires=[
        'requests',
        'numpy',
        'torch',
        'torchvision',
        'scipy',
        'pandas',
        'matplotlib',
        'tqdm',
        'PyMCubes',
        'tomli; python_version < "3.11"',
    ],
    extras_require={
        'dev': dev_requirements,
        'test': test_requirements
    },
    entry_points={
        'console_scripts': ['wsl = wsl.cli:main'],
    },
    description='Encoding, decoding and exploring neural network weights as 2D matrices',
    long_description=LONG_DESCRIPTION,
    classifiers=CLASSIFIERS,
    keywords='weight space learning hypernetwork model zoo',
    include_package_data=True,
)
