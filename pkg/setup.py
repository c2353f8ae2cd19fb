from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="mrc-entity-audit",
    version="0.1.0",
    description="Entity renaming robustness audits for extractive reading comprehension: perturbed test sets, evaluation and masking data",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["test"]),
    package_data={"MrcEntityAudit": ["data/namebanks/*/*"]},
    python_requires=">=3.10",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: Public Domain",
        "Development Status :: 3 - Alpha",
    ],
    install_requires = [
        "pandas",
        "numpy",
        "scipy",
        "jsonlines",
        "tqdm",
        "tomli; python_version < '3.11'"
    ],
    entry_points={
        "console_scripts": [
            "mrc-entity-audit=MrcEntityAudit.cli:main",
        ],
    },
)
