#!/usr/bin/env python3
# Write the sample run documents under configs/

import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.logging_setup import setup_logging
from src.data.sample_configs import SampleConfigGenerator


def main():
    setup_logging("INFO")
    output_dir = sys.argv[1] if len(sys.argv) > 1 else "configs"
    written = SampleConfigGenerator().save(output_dir)
    print(f"Wrote {len(written)} sample configs to {output_dir}/")


if __name__ == "__main__":
    main()
