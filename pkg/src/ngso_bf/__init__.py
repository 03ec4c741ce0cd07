"""Receive beamforming for NGSO co-frequency interference mitigation.

Scenario simulator, classical beamformers (MRC, ZF, SMI, MVDR) and a
self-supervised Mamba-style neural beamformer trained with a small
reverse-mode autodiff engine.
"""

__version__ = "0.1.0"
