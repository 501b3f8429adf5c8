from setuptools import find_packages, setup

with open("requirements.txt") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="vugen-desk",
    version="0.1.0",
    description="Desk-scale visual-understanding-latent image generation with baselines and sweeps",
    packages=find_packages(exclude=("tests",)),
    python_requires=">=3.10",
    install_requires=requirements,
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["vugen=vugen.cli:main"]},
)
