"""c2clab: component prototypes, dual-path composition inference, and
calibrated zero-shot evaluation for verb-object action recognition,
exercised on synthetic compositional video data."""

__version__ = "0.1.0"
