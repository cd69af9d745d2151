# Functional ensemble classification of mouse trajectories

__version__ = "0.1.0"
