"""Experiment orchestration: run configs, drivers, scans, saliency and image export."""
from .commands import (EXIT_CONFIG, EXIT_OK, EXIT_SAMPLING, cmd_compare, cmd_sample, cmd_saliency,
                       cmd_testset_scan, cmd_train)
from .pgm import export_grid, read_pgm, write_pgm
from .runspec import RunSpec, load_runspec, parse_runspec
from .saliency import SaliencyMap, smoothgrad
from .scan import ScanReport, ambiguous_pair, scan_confidences

__all__ = [
    "EXIT_CONFIG", "EXIT_OK", "EXIT_SAMPLING", "RunSpec", "SaliencyMap", "ScanReport", "ambiguous_pair",
    "cmd_compare", "cmd_sample", "cmd_saliency", "cmd_testset_scan", "cmd_train", "export_grid",
    "load_runspec", "parse_runspec", "read_pgm", "scan_confidences", "smoothgrad", "write_pgm",
]
