"""wave-packet density snapshots"""

import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np

from combctl import units
from combctl.propagator import SURFACES, ThreeSurfaceState

logger = logging.getLogger(__name__)


class StateSnapshot:
    """writes |psi|^2 of the three surfaces after selected pulse pairs"""

    def __init__(self, snapshot_dir="snapshots"):
        self.snapshot_dir = snapshot_dir
        os.makedirs(snapshot_dir, exist_ok=True)

    def capture(self, state: ThreeSurfaceState, pair: int, label: Optional[str] = None) -> Tuple[str, Dict]:
        """save densities and metadata as .npz; returns the path and the saved arrays"""
        filename = f"pair_{pair:03d}"
        if label:
            filename += f"_{label}"
        filepath = os.path.join(self.snapshot_dir, filename + ".npz")
        data = {
            "r_angstrom": units.bohr_to_angstrom(state.grid.points),
            "densities": np.abs(state.psi) ** 2,
            "norms": state.norms(),
            "time_fs": np.array(units.au_to_fs(state.time)),
            "pair": np.array(pair),
            "surfaces": np.array(SURFACES),
        }
        np.savez_compressed(filepath, **data)
        logger.debug("snapshot of pair %d saved to %s", pair, filepath)
        return filepath, data

    @staticmethod
    def load(filepath) -> Dict[str, np.ndarray]:
        with np.load(filepath) as archive:
            return {key: archive[key] for key in archive.files}

    @staticmethod
    def print_snapshot(data):
        """human-readable summary of a snapshot"""
        print("\n" + "=" * 50)
        print(f"Snapshot after pair {int(data['pair'])} at t = {float(data['time_fs']):.1f} fs")
        r = data["r_angstrom"]
        for name, density, norm in zip(data["surfaces"], data["densities"], data["norms"]):
            peak = r[int(np.argmax(density))]
            print(f"  {name:>2}: norm {norm:.6f}, density peak at {peak:.3f} A")
        print("=" * 50)


def density_rows(states: Dict[int, ThreeSurfaceState]) -> Tuple[List[str], List[List[float]]]:
    """header and rows r_angstrom, then g1/e/g2 densities per pair in increasing pair order"""
    pairs = sorted(states)
    grid = states[pairs[0]].grid
    header = ["r_angstrom"] + [f"{name}_pair{pair}" for pair in pairs for name in SURFACES]
    columns = [units.bohr_to_angstrom(grid.points)]
    for pair in pairs:
        columns.extend(np.abs(states[pair].psi) ** 2)
    return header, np.column_stack(columns).tolist()
