"""Channel estimation for a circular-RIS-aided mmWave MIMO-NOMA link.

Subpackages: tensorops (multilinear algebra), scenario (configuration and
channel model), txrx (pilot/tensor synthesis), decomp (tensor solvers),
extract (parameter estimation), crb (Fisher information bounds), bench
(Monte-Carlo harness), cli (command line).
"""

__version__ = "0.1.0"
