"""hatescope: phrase mining, cross-modal image retrieval, and calibration over post corpora."""

__version__ = "0.1.0"
