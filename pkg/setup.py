"""OISpace package definition and install configuration"""

# Copyright (c) 2026 OISpace developers.
#
# This is free software released under the MIT License.  See
# `LICENSE.txt` for details.


import setuptools

import oispace


# Extract the descriptions from the package documentation
_desc_paragraphs = oispace.__doc__.strip().split('\n\n')
_desc_short = _desc_paragraphs[0].replace('\n', ' ') # Needs to be one line
_desc_long = '\n\n'.join(_desc_paragraphs[1:-2])


# Define package attributes
setuptools.setup(

    # Basic characteristics
    name='oispace',
    version=oispace.__version__,
    license='MIT',
    author='OISpace developers',

    # Description
    description=_desc_short,
    long_description=_desc_long,
    keywords=[
        'interpretability',
        'entity tracking',
        'activation patching',
        'activation steering',
        'PCA',
        'transformers',
    ],
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3 :: Only',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],

    # Requirements
    python_requires='>= 3.8',
    install_requires=[
        'barnapy ~= 0.1',
        'matplotlib',
        'numpy',
        'psutil',
        'PyYAML',
        'scipy',
        'torch',
    ],

    # API
    packages=setuptools.find_packages(),
    package_data={
        'oispace': ['data/*.txt', 'test/golden/*.txt'],
    },
    entry_points={
        'console_scripts': ['oispace = oispace.__main__:main'],
    },

)
