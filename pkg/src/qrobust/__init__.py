"""Single-qubit data re-uploading classifiers: simulation, training, GA attacks and robustness certificates."""

__version__ = "0.1.0"
