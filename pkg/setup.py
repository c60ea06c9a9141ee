#!/usr/bin/env python
"""
Setup script for AV Label Tagger

Usage:
    python setup.py install
    OR
    pip install -e .
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="av-label-tagger",
    version="1.0.0",
    author="AV Label Tagger Team",
    author_email="team@example.com",
    description="Tag malware files with behaviors, platforms, vulnerabilities and packers from AV scan reports",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests"]),
    py_modules=["app"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Security",
    ],
    python_requires=">=3.8",
    install_requires=requirements,
    extras_require={
        "test": ["pytest>=7.0", "hypothesis>=6.0"],
    },
    entry_points={
        "console_scripts": [
            "av-tagger=app:main",
        ],
    },
    include_package_data=True,
    data_files=[
        ("data", [
            "data/default.rules",
            "data/default.wordlist",
            "data/default.affixes",
            "data/default.aliases",
            "data/default.correlations",
            "data/example.env",
        ]),
    ],
)
