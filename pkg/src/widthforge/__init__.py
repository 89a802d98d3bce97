"""Width-volume bounds, dilation certificates and explicit degree-1 maps between rectangles."""
__version__ = "0.1.0"
