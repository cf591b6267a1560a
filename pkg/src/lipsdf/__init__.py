"""Provably 1-Lipschitz neural distance fields and the queries they make safe."""

from .extract import (GridField, Polylines, euler_characteristic, marching_cubes,
                      marching_squares, planar_slice, sample_grid)
from .fieldops import (Camera, CsgField, NetField, ScalarField, ScaledField, audit_lipschitz,
                       audit_underestimation, csg_difference, csg_intersect, csg_union,
                       medial_axis_sample, project, render, sphere_trace)
from .geometry import (LabeledDataset, NormalizeTransform, OrientedPointCloud, SegmentSoup,
                       TriangleSoup, build_signed_dataset, build_unsigned_dataset, load_geometry,
                       normalize, winding_numbers)
from .lipnet import AffineHead, LipNet, SllLayer, init_net
from .losses import HkrConfig, hkr_loss
from .trainer import TrainConfig, checkpoint, restore, train

__version__ = "0.1.0"
