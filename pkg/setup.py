import os
from setuptools import setup, find_packages

# Get absolute path to the directory containing this file
this_dir = os.path.abspath(os.path.dirname(__file__))

# Read the long description from docs/index.md
with open(os.path.join(this_dir, "docs", "index.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="mixflow",
    version="v0.1.0",
    packages=find_packages(exclude=("test", "test.*", "examples", "examples.*")),
    entry_points={
        "console_scripts": [
            "mixflow=mixflow.cli:run_cli",
        ],
    },
    install_requires=["numpy>=1.22", "networkx>=2.8", "shapely>=2.0", "pandas>=1.5"],
    extras_require={
        "yaml": ["PyYAML"],
        "progress": ["tqdm"],
        "plots": ["matplotlib"],
        "dev": ["pytest", "pytest-timeout"],
    },
    author="Khagendra Neupane",
    author_email="nkhagendra1@gmail.com",
    description="Mixed-traffic junction simulation and Soft Actor-Critic training for robot vehicles",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
)
