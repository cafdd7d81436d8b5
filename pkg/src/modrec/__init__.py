"""Workbench for modulation recognition and its adversarial robustness.

Subpackages and modules:

- ``dsp``: constellations, modulation, AWGN channels, power/SPR accounting
- ``dataset``: labeled IQ dataset generation, splits, binary persistence
- ``autodiff``: minimal reverse-mode gradient engine on numpy
- ``models``: convolutional classifiers built on the gradient engine
- ``attacks``: SPR-budgeted gradient attacks (FGSM and iterated variants)
- ``training``: standard and adversarial training loops
- ``evaluation``: robustness and security evaluation reports
- ``analysis``: maximum-likelihood baselines and perturbation geometry
"""

__version__ = "0.1.0"
