#!/usr/bin/env python3
"""
Setup script for the AOSA explainability engine.
"""

from setuptools import setup, find_packages
import os

# Read the version number from __init__.py
with open(os.path.join(os.path.dirname(__file__), '__init__.py'), 'r') as f:
    for line in f:
        if line.startswith('__version__'):
            version = line.strip().split('=')[1].strip(' \'"')
            break
    else:
        version = '0.0.1'

# Read README.md for long description
with open('README.md', 'r') as f:
    long_description = f.read()

setup(
    name='aosa',
    version=version,
    description='Flow-adaptive occlusion sensitivity saliency maps for video classifiers',
    long_description=long_description,
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=['tests', 'examples', 'examples.*']),
    py_modules=['main', 'generator', 'performance_chart'],
    include_package_data=True,
    data_files=[('Configuration', ['Configuration/default_config.json'])],
    install_requires=[
        'numpy>=1.22.0',
        'scipy>=1.7.0',
        'matplotlib>=3.5.0',
        'tqdm>=4.60.0',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': [
            'aosa=main:main',
            'aosa-generate=generator:main',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
    python_requires='>=3.8',
)
