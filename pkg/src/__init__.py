"""CPSC gluing toolkit: Delaunay metrics, mode analysis, connected sums and correctors."""

__version__ = "1.0.0"
