"""SMEmail: elliptic-curve signcryption for secure e-mail, with PKI, OCSP/DV services and a simulator."""

__version__ = "0.1.0"
