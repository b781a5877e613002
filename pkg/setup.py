from setuptools import find_packages, setup

package_name = 'irs_alloc'

setup(
    name=package_name,
    version='0.1.0',
    packages=find_packages(exclude=['test']),
    data_files=[
        ('share/' + package_name + '/config', ['config/defaults.yaml']),
    ],
    install_requires=['setuptools', 'numpy', 'scipy', 'PyYAML'],
    python_requires='>=3.8',
    zip_safe=True,
    maintainer='neuroam',
    maintainer_email='neuroam@todo.todo',
    description='Globally and locally optimal beamforming with discrete IRS phases under perfect and '
                'norm-bounded imperfect CSI',
    license='TODO: License declaration',
    extras_require={
        'test': ['pytest', 'hypothesis', 'flake8'],
    },
    tests_require=['pytest', 'hypothesis'],
    entry_points={
        'console_scripts': [
            'irs_alloc = irs_alloc.cli:main',
        ],
    },
)
