from setuptools import setup, find_packages

with open('requirements.txt') as f:
    install_requires = f.read().splitlines()

setup(
    name="fairrec",
    version="0.1.0",
    description="Fairness-aware collaborative filtering with minority indexes, PMF and a loss-predicting network",
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["examples", "examples.*"]),
    include_package_data=True,
    entry_points={
        'console_scripts': [
            'fairrec = fairrec.__main__:main',
        ]
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    install_requires=install_requires,
    extras_require={
        'test': ['hypothesis', 'coverage'],
    },
    python_requires='>=3.9',
)
