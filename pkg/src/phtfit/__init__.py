"""Voxel images to analysis-suitable PHT-spline volumetric parametrizations.

Pipeline: load or synthesize a voxel image (image_io), build its smooth
B-spline level set (levelset), embed it in a hierarchical C^1 cubic spline
mesh (pht_mesh), fit the mesh boundary to the contour with circle/sphere
templates (templates, fitter), and validate with isogeometric linear
elasticity (elasticity).
"""

__version__ = "1.0.0"
