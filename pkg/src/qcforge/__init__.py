"""qcforge: quality control for multi-site resting-state fMRI curation."""

__version__ = "0.1.0"
