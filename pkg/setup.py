from setuptools import setup, find_packages


def version():
    import re
    for line in open('gentract/__init__.py'):
        match = re.match("__version__ *= *'(.*)'", line)
        if match:
            return match.groups()[0]
    raise RuntimeError('__version__ is not found')


def long_description():
    with open('README.rst') as fp:
        content = fp.read()
    return content


install_requires = [
    'numpy',
    'scipy',
    'scikit-learn',
    'matplotlib',
    'tqdm',
    'tomli; python_version < "3.11"'
]

tests_require = [
    'pytest',
    'pyyaml',
    'nibabel'
]

setup(
    name='gentract',
    maintainer='devforfu',
    version=version(),
    description='Desk-scale generative tractography with diffusion and '
                'flow-matching streamline generators',
    long_description=long_description(),
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=install_requires,
    tests_require=tests_require,
    extras_require={'tests': tests_require, 'yaml': ['pyyaml']},
    package_data={'': ['configs/*.json', 'configs/*.yaml',
                       'configs/*.toml']},
    include_package_data=True,
    entry_points={'console_scripts': ['gentract = gentract.cli:main']},
    keywords=['tractography', 'diffusion-mri', 'generative-models'])
