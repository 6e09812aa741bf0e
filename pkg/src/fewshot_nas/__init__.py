"""Few-shot neural architecture search with channel-reduced supernets.

The search space is split into K subspaces by a structural score, one
supernet (width divided by G) is trained per subspace with balanced
sampling, and an evolutionary search ranks subnets by supernet accuracy.
"""

from .space import SearchSpace, Subnet, decode, encode, load_space
from .partition import Criterion, Partition, build_partition

__version__ = "0.1.0"
