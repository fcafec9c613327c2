"""EEG motor-imagery decoding and Grad-CAM channel relevance on numpy/scipy."""

__version__ = "0.1.0"
