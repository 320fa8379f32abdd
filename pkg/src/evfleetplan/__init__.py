"""Joint planning of ride-pooling, charging and station siting for
electric robo-taxi fleets on an iso-energy multi-layer network."""

__version__ = "0.1.0"
