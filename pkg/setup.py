from setuptools import setup, find_packages

# Lee el contenido del README.md para la descripción larga
with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="BKLibQSeld",  # Nombre del paquete
    version="0.1.0",
    author="Elieser Castro",
    author_email="bkelidireccion@gmail.com",
    description=(
        "Redes convolucionales-recurrentes cuaterniónicas en numpy para la detección "
        "y localización de eventos sonoros sobre audio Ambisonics de primer orden."
    ),
    long_description=long_description,  # Descripción larga desde README.md
    long_description_content_type="text/markdown",
    license="Personal Use Only",
    classifiers=[
        "License :: Other/Proprietary License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
        "Topic :: Multimedia :: Sound/Audio :: Analysis",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    packages=find_packages(exclude=("tests", "tests.*")),  # Encuentra todos los subpaquetes automáticamente
    python_requires=">=3.10",  # Versión mínima de Python
    install_requires=[
        "numpy >= 1.24",
        "scipy >= 1.10",
        "soundfile >= 0.12",
        "pydantic >= 2.11.7",
        "tqdm >= 4.65",
    ],
    extras_require={
        "test": ["pytest >= 7.4"],
    },
    entry_points={
        "console_scripts": [
            "bkqseld = BKLibQSeld.cli:main",
        ],
    },
    include_package_data=True,
)
