"""Packing configuration trees for online 3D bin packing."""
from .geometry import BinSpec, Box3, Vec3
from .tree import ItemSpec, LeafPlacement, PackingTree, new_tree

__all__ = ["BinSpec", "Box3", "Vec3", "ItemSpec", "LeafPlacement", "PackingTree", "new_tree"]
__version__ = "0.1.0"
