"""setup.py for fedfeed"""

from setuptools import find_packages, setup


def parse_requirements():
    _install_requires = []
    _dependency_links = []
    with open("./requirements.txt", encoding="utf-8") as requirements_file:
        lines = [r.strip() for r in requirements_file.readlines()]
        for line in lines:
            if line.startswith("--extra-index-url"):
                # Handle custom index URLs
                _, url = line.split()
                _dependency_links.append(url)
            elif line and line[0] != "#":
                # Handle standard packages
                _install_requires.append(line)

    return _install_requires, _dependency_links


install_requires, dependency_links = parse_requirements()


setup(
    name="fedfeed",
    version="0.1.0",
    description="Federated learning simulator driven by noisy user feedback",
    long_description="fedfeed bootstraps a seed classifier, simulates noisy positive/negative user feedback on edge clients, trains clients with feedback-aware and noise-robust losses, aggregates with FedAvg, and estimates feedback noise from logs.",
    package_dir={"": "src"},
    packages=find_packages("src"),
    install_requires=install_requires,
    dependency_links=dependency_links,
    entry_points={
        "console_scripts": [
            "fedfeed=fedfeed.cli.main:main",
        ],
    },
)
