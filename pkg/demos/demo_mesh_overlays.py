# Quadtree meshes: local refinement, coarsening, and the two overlays.
#
# Meshes are immutable quadtrees over a rectangle.  Refinement splits
# marked cells into four congruent children and automatically splits
# whatever else is needed to keep edge-adjacent neighbors within one
# level of each other.  Coarsening merges sibling quadruples when all
# four are marked and the merge does not break that invariant.

import numpy as np

from semiheat import Mesh, Rectangle

rect = Rectangle(0.0, 1.0, 0.0, 1.0)
base = Mesh.uniform(rect, 2)
print("uniform 4x4:", len(base), "cells, min diameter", base.min_diameter())

# Refine the south-west corner twice; the closure keeps the mesh 1-irregular.
mesh = base.refine([(2, 0, 0)])
mesh = mesh.refine([(3, 0, 0)])
print("after two local refinements:", len(mesh), "cells,",
      "1-irregular:", mesh.is_one_irregular())

# The two overlays: the coarsest mesh refining both inputs, and the
# finest mesh that both inputs refine.  The error estimators evaluate
# field differences on the first and take size weights from the second.
nw = base.refine([k for k in base.leaves if k[1] < 2 and k[2] >= 2])
se = base.refine([k for k in base.leaves if k[1] >= 2 and k[2] < 2])
vee = nw.overlay_finest(se)
wedge = nw.overlay_coarsest(se)
print("overlay_finest has refinements of both quadrants:", len(vee), "cells")
print("overlay_coarsest falls back to the base mesh:",
      set(wedge.leaves) == set(base.leaves))

# Coarsening undoes refinement only where all four siblings agree.
children = [k for k in mesh.leaves if k[0] == 4]
back = mesh.coarsen(children)
print("coarsening the level-4 quadruple:", len(mesh), "->", len(back), "cells")

# Meshes dump to plain-text legacy VTK for external viewers.
mesh.dump_vtk("overlay_demo.vtk", cell_data={"level": mesh.levels.astype(float)})
print("wrote overlay_demo.vtk (quad cells + per-cell level scalar)")
