"""Streaming LiDAR-camera fusion data plane, pipeline simulator and tools."""

__version__ = "0.1.0"
