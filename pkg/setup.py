from setuptools import find_packages, setup

setup(
    name='gncformer',
    version='0.1.0',
    packages=find_packages(include=['gncformer', 'gncformer.*']),
    package_data={'gncformer': ['config.yaml']},
    python_requires='>=3.10',
    install_requires=[
        'numpy>=1.23',
        'scipy',
        'pandas',
        'pyyaml',
        'tqdm',
    ],
    entry_points={
        'console_scripts': ['gncformer=gncformer.cli:main'],
    },
)
