import setuptools

with open('README.md', 'r') as fh:
    long_description = fh.read()

setuptools.setup(
    name='thermovqa',
    version='0.0.1',
    packages=setuptools.find_packages(exclude=['tests']),
    include_package_data=True,
    package_data={
        'thermovqa': ['prompts/*.txt', 'fixtures/*.jsonl'],
    },
    long_description=long_description,
    long_description_content_type='text/markdown',
    description="ThermoVQA - zero-shot anomaly detection benchmark for "
                "battery thermal images with VQA models",
    author='Antmicro Ltd.',
    author_email='contact@antmicro.com',
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8',
        'opencv-python-headless>=4.6',
        'Pillow>=9.1',
        'matplotlib>=3.6.1',
        'pandas>=1.4',
        'scikit-learn>=1.1',
        'openai>=1.0',
        'requests>=2.28',
        'backoff>=2.2',
        'PyYAML>=6.0',
        'python-dotenv>=1.0',
    ],
    extras_require={
        'test': [
            'pytest>=7.2'
        ]
    },
    entry_points={
        'console_scripts': [
            'thermovqa = thermovqa.__main__:main'
        ]
    }
)
