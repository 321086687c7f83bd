"""Print finite-difference gradient errors for every layer and the tiny full model."""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from test_acceptance import _full_model_error, _layer_errors  # noqa: E402


def main():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for name, err in _layer_errors(rng).items():
        print(f"{name:28s} {err:.2e}")
    print(f"{'full model (4/3/2)':28s} {_full_model_error(rng):.2e}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
