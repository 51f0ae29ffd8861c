#!/usr/bin/env python3
"""
ETDG - Installation Setup
Installs the 'etdg' command for ETD-RK discontinuous Galerkin stability experiments
"""

from setuptools import setup
from pathlib import Path

# Read README for long description
readme_path = Path(__file__).parent / "README.md"
# Read README using UTF-8 to avoid platform encoding issues (Windows cp1252, etc.)
long_description = readme_path.read_text(encoding="utf-8") if readme_path.exists() else ""

setup(
    name="etdg",
    version="1.0.0",
    description="Exponential time differencing Runge-Kutta DG schemes for advection-diffusion: "
                "stability search, growth factors and experiments",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",

    packages=['src'],

    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "mpmath>=1.2",
        "tqdm>=4.60",
    ],

    extras_require={
        "test": [
            "pytest>=7.0",
            "hypothesis>=6.0",
        ],
    },

    entry_points={
        "console_scripts": [
            "etdg=src.cli:main",
            "etdg-dg=src.cli:main",
        ]
    },

    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Natural Language :: English",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],

    python_requires=">=3.9",
)
