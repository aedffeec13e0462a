# Copyright 2026 Xanadu Quantum Technologies Inc.

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from setuptools import setup, find_packages

with open("advprop/_version.py") as f:
    version = f.readlines()[-1].split()[-1].strip("\"'")

requirements = ["numpy>=1.22", "pandas>=1.5", "pyyaml", "appdirs"]
test_requirements = ["pytest", "scipy", "scikit-learn"]

info = {
    'name': 'advprop',
    'version': version,
    'maintainer': 'Xanadu Inc.',
    'maintainer_email': 'software@xanadu.ai',
    'packages': find_packages(include=['advprop']),
    'entry_points': {
        'console_scripts': [
            'advprop = advprop.cli:main',
            ]
    },
    'description': 'Adversarial training with attack propagation for tabular fraud detection',
    'long_description': open('README.rst').read(),
    'long_description_content_type': 'text/x-rst',
    'provides': ['advprop'],
    'install_requires': requirements,
    'extras_require': {'test': test_requirements},
    'python_requires': '>=3.9',
}

classifiers = [
    'Programming Language :: Python :: 3',
    'Operating System :: OS Independent'
]

setup(classifiers=classifiers, **(info))
