"""Body-conduction voice authentication: match a wearer's vibration channel
against a microphone channel and keep only speech the wearer produced."""

__version__ = "0.1.0"
