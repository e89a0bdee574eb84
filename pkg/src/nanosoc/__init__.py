"""nanosoc: compute pipeline of a mobile-genomics SoC, in software.

Synthetic nanopore signal generation, a six-layer CNN basecaller with
CTC training, FM-index seed-and-extend mapping, edit-distance kernels,
the support stages around them, and calibrated cycle/energy models of
the systolic GEMM and edit-distance accelerators.
"""

__version__ = "0.1.0"
