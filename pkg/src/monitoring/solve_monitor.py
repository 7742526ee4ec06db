#!/usr/bin/env python3
# Iteration monitoring for the contraction solver

import logging
from collections import deque

import numpy as np
import pandas as pd


class SolveMonitor:
    """Records residual, increment and contraction ratio per iteration"""

    def __init__(self, window=3, max_entries=1000):
        self.window = window
        self.entries = []
        self.recent_ratios = deque(maxlen=max(window, 1))
        self.max_entries = max_entries
        self.logger = logging.getLogger('cpsc_gluing.monitor')

    def log_iteration(self, iteration, residual, increment, **extra):
        previous = self.entries[-1]['increment'] if self.entries else None
        ratio = float('nan')
        if previous is not None and np.isfinite(previous) and previous > 0 and np.isfinite(increment):
            ratio = increment / previous
        entry = {
            'iteration': iteration,
            'residual': float(residual),
            'increment': float(increment),
            'ratio': float(ratio),
        }
        entry.update(extra)
        self.entries.append(entry)
        if np.isfinite(ratio):
            self.recent_ratios.append(ratio)
        self.logger.info(
            f"Iteration {iteration}: residual={residual:.3e} increment={increment:.3e} ratio={ratio:.3f}"
        )

        # Keep only the last max_entries iterations
        if len(self.entries) > self.max_entries:
            self.entries = self.entries[-self.max_entries:]
        return entry

    def detect_divergence(self, window=None):
        """Divergence when every ratio in the last window iterations is >= 1"""
        window = window or self.window
        ratios = [e['ratio'] for e in self.entries if np.isfinite(e['ratio'])][-window:]
        if len(ratios) < window:
            return {"status": "insufficient_data", "count": len(ratios)}
        diverging = all(r >= 1.0 for r in ratios)
        return {
            "status": "diverging" if diverging else "contracting",
            "ratios": ratios,
            "max_ratio": max(ratios),
            "window": window,
        }

    def ratio_trace(self):
        return [e['ratio'] for e in self.entries]

    def residuals(self):
        return [e['residual'] for e in self.entries]

    def summary(self):
        if not self.entries:
            return {"iterations": 0}
        finite = [r for r in self.ratio_trace() if np.isfinite(r)]
        return {
            "iterations": len(self.entries),
            "final_residual": self.entries[-1]['residual'],
            "final_increment": self.entries[-1]['increment'],
            "max_ratio": max(finite) if finite else None,
            "contraction_estimate": float(np.exp(np.mean(np.log(finite)))) if finite and min(finite) > 0 else None,
        }

    def to_frame(self):
        return pd.DataFrame(self.entries, columns=['iteration', 'residual', 'increment', 'ratio'])
