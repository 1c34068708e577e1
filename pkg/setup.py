#!/usr/bin/env python
# -*- coding : utf-8 -*-

from setuptools import setup, find_packages

long_description = """
# Cascaded networks for compositional zero-shot learning
"""

setup(
    name="cscnet",
    version="0.1",
    description="Class-specified cascaded networks for compositional "
    "zero-shot learning at desk scale",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3.8",
    ],
    keywords="compositional zero-shot learning attribute object cascade",
    packages=find_packages(exclude=["docs", "examples"]),
    install_requires=[
        "pandas>=0.24.1",
        "numpy>=1.16.1",
    ],
    extras_require={
        "docs": ["sphinx_rtd_theme"],
    },
    package_data={},
    include_package_data=True,
    test_suite="cscnet",
    entry_points={
        "console_scripts": ["cscnet=cscnet.cli:main"],
    },
)
