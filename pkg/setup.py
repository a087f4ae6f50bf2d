#!/usr/bin/env python

from setuptools import find_packages, setup

setup(
    name="erv_mixture",
    version="0.1.0",
    description="Negative binomial mixture model for ERV presence calls from read counts",
    packages=find_packages(exclude=["tools"]),
    package_data={"erv_mixture.tests": ["data/*.csv"]},
    python_requires=">=3.8",
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "scikit-learn",
        "loguru",
        "tqdm",
        "typer",
        "rich",
    ],
    entry_points={"console_scripts": ["erv-mixture = erv_mixture.cli:app"]},
)
