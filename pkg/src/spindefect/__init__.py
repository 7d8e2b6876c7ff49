"""Simulation and analysis toolkit for optically active spin defects.

Subsystems:

- :mod:`spindefect.spincore`: spin operators, manifold Hamiltonians, stick
  spectra.
- :mod:`spindefect.lindblad`: master-equation propagation and steady states.
- :mod:`spindefect.photodynamics`: optical-cycle level models, CW spectra,
  photon readout.
- :mod:`spindefect.sequences`: pulse-program language, compiler, and the
  polarization-transfer gate.
- :mod:`spindefect.analysis`: curve fits, scalar figures of merit, spectral
  broadening.
- :mod:`spindefect.modelio`: TOML model files.
- :mod:`spindefect.cli`: command-line front end.
"""

__version__ = "0.1.0"
