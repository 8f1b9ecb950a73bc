"""Joint natural-language moment retrieval and highlight detection.

A multi-modal transformer over synchronized video/audio clip features with
2D sin-cos positional encoding, persistent-memory attention, and the Lion
optimizer, plus the full retrieval/highlight evaluation protocol and a
planted-moment synthetic benchmark for desk-scale verification.
"""

__version__ = "0.1.0"
