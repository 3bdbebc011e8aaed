"""Task offloading and block mining (TOBM) simulator for blockchain-based MEC cells."""

__version__ = "0.1.0"
