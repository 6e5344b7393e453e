from pathlib import Path

import setuptools

setuptools.setup(
    name="hoi_composer",
    version="1.0.0",
    description="Scripts to plan, align, execute and evaluate dynamic human-object interaction clips",
    long_description=Path('README.md').read_text(),
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(),
    python_requires=">=3.8",
    install_requires=["numpy>=1.21", "scipy>=1.7"],
    extras_require={"test": ["pytest>=7.0"]},
)
