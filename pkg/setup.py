from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="nls-decay-lab",
    version="0.1.0",
    author="Sanket Kulkarni",
    author_email="author@example.com",
    description="Pseudo-spectral simulation and decay diagnostics for defocusing NLS",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/sanketkulkarni-1-sdk/nls-decay-lab",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22.0",
        "scipy>=1.8.0",
        "pandas>=1.3.0",
        "pyyaml>=5.4",
        "python-dotenv>=0.19.0",
    ],
    extras_require={
        "dev": [
            "pytest>=6.0",
            "pytest-cov>=2.10.0",
            "black>=21.0",
            "flake8>=3.9.0",
            "mypy>=0.910",
        ],
    },
    entry_points={
        "console_scripts": [
            "nls-decay-lab=nls_decay_lab.cli:main",
        ],
    },
)
