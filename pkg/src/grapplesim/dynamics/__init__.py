from .world import GraspInfo, World

__all__ = ["World", "GraspInfo"]
