#!/bin/python

from setuptools import setup
from setuptools import find_packages

import dense_pose_aggregation

with open("README.md", encoding='utf8') as readme:
    long_description = readme.read()

with open("requirements.txt", encoding='utf8') as requirements_txt:
    install_requirements = [each.strip() for each in requirements_txt.read().splitlines() if each.strip()]

setup(
    name="dense_pose_aggregation",
    version=dense_pose_aggregation.__version__,
    description='Post-network stage of dense 6D object pose estimation: Hough voting, '
                'orientation aggregation, losses and ADD/ADD-S evaluation.',
    long_description = long_description,
    long_description_content_type='text/markdown',
    license = "Apache 2.0",
    packages=find_packages(exclude=["tests", "tests.*", "slow_tests", "slow_tests.*"]),
    include_package_data=True,
    keywords="6d pose, quaternion averaging, hough voting, ransac, add-s, auc",
    install_requires=install_requirements,
    python_requires=">=3.7.0",
    entry_points={
        "console_scripts": ["dense-pose-aggregation=dense_pose_aggregation.cli:main"],
    },
    classifiers=[
        "Development Status :: 2 - Pre-Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: Apache 2.0 License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
