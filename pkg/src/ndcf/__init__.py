"""Neural deforming contact fields: joint deformed-SDF and contact-probability
fields conditioned on wrench feedback."""

__version__ = "0.1.0"
