"""FEM toolkit for indoor-climate estimation and control: forward CFD
solves, discrete adjoints, PMV comfort and a receding-horizon optimizer."""

__version__ = "0.1.0"
