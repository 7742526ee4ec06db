#!/usr/bin/env python3
# Sample run documents shipped under configs/

import logging
from pathlib import Path

from src.core.config import RunConfig
from src.data.serialization import write_json

logger = logging.getLogger(__name__)


class SampleConfigGenerator:
    """Build the sample run documents and validate them before they are written"""

    def __init__(self, n_theta=41, h=0.1):
        self.grids = {"h_body": h, "n_theta": n_theta, "h_neck": h, "n_psi": n_theta}

    def dipole(self, n=3, eps=0.4, T=12.0):
        return {
            "gluing": {
                "n": n,
                "summands": [
                    {"eps": eps, "gluing_point": [0.0, 0.0], "deficiency_end": "+"},
                    {"eps": eps, "gluing_point": [0.0, 0.0], "deficiency_end": "+"},
                ],
                "T": [T],
                "cutoff_width": 1.0,
                "grids": dict(self.grids),
            },
            "solver": {"delta": 0.5, "max_iterations": 30, "residual_target": 1e-9},
        }

    def chain(self, n=3, eps=(0.4, 0.35, 0.4), T=(10.0, 12.0)):
        summands = [{"eps": e, "gluing_point": [0.0, 0.0], "deficiency_end": "+"} for e in eps]
        return {
            "gluing": {"n": n, "summands": summands, "T": list(T), "cutoff_width": 1.0, "grids": dict(self.grids)},
            "solver": {"delta": 0.5, "max_iterations": 40, "residual_target": 1e-9},
        }

    def sweep(self, n, T_list=(8.0, 10.0, 12.0, 14.0, 16.0), quantity="both", eps=0.4):
        document = self.dipole(n=n, eps=eps, T=T_list[0])
        document["sweep"] = {"quantity": quantity, "T": list(T_list), "probes": 8, "n_jobs": 1}
        return document

    def samples(self):
        return {
            "dipole.json": self.dipole(),
            "chain3.json": self.chain(),
            "sweep_n3.json": self.sweep(3),
            "sweep_n4.json": self.sweep(4, eps=0.5),
        }

    def save(self, output_dir="configs"):
        output_dir = Path(output_dir)
        written = []
        for name, document in self.samples().items():
            RunConfig.model_validate(document)
            written.append(write_json(output_dir / name, document))
            logger.info(f"Sample config {output_dir / name}")
        return written
