#!/usr/bin/env python3
# C^2 cutoffs shared by the gluing and the corrector

import numpy as np


def smoothstep(x):
    """Quintic ramp: 0 for x <= 0, 1 for x >= 1, two vanishing derivatives at both ends"""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x ** 2)


def ramp(s, start, stop):
    """0 below start, 1 above stop"""
    return smoothstep((np.asarray(s, dtype=float) - start) / (stop - start))


def neck_cutoffs(s, center, width):
    """(chi_1, chi_2) on a neck chart with the transition window [center - width, center + width]"""
    chi_2 = ramp(s, center - width, center + width)
    return 1.0 - chi_2, chi_2
