"""Stateful L4 load balancing with Othello lookup tables.

The data plane keeps no per-connection entries: each VIP's lookup structure
maps stored flows to their Dcode and spreads unknown flows over Dcodes, and a
per-VIP DipArray turns Dcodes into weighted DIPs.
"""

from .controlplane import ControlPlane, Dip, DipPool, partition_dcodes
from .dataplane import DataPlane, UpdateMessage
from .hashing import FLOW_KEY_LEN, FlowKey
from .othello import Othello, OthelloStructure
from .othellomap import OthelloMap

__all__ = [
    "ControlPlane",
    "DataPlane",
    "Dip",
    "DipPool",
    "FLOW_KEY_LEN",
    "FlowKey",
    "Othello",
    "OthelloMap",
    "OthelloStructure",
    "UpdateMessage",
    "partition_dcodes",
]

__version__ = "0.1.0"
