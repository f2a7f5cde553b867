"""Ambiguity-gated image-text tamper localization at desk scale.

Subpackages are plain modules: ``tensor`` (autodiff core), ``features``,
``itcam``, ``itim``, ``red``, ``losses``, ``model``, ``data``, ``train``,
``oracle`` (loop references) and ``verify`` (registered checks).
"""

__version__ = "0.1.0"
