''' Stage II scene completion: posed object reconstructions merged into the live view '''

from dataclasses import dataclass, field

import numpy as np

from geometry.cloud import (PointCloud, concatenate, coverage, group_by_voxel, reduce_groups,
                            transform_cloud)
from geometry.io import write_ply
from tracking.tracker import LOST, TRACKING
from utils.errors import InvalidInputError

OBSERVED = 0
RECONSTRUCTED = 1


@dataclass
class ObjectEntry:
    object_id: int
    status: str = TRACKING
    mesh: object = None         # TriangleMesh, model frame
    samples: object = None      # PointCloud with normals, model frame
    volume: object = None       # frozen TsdfVolume
    state: object = None        # TrackState
    diagnostics: list = field(default_factory=list)

    @property
    def usable(self):
        return self.status == TRACKING and self.samples is not None and len(self.samples) > 0

    def mark_lost(self, reason):
        self.status = LOST
        self.diagnostics.append(reason)
        if self.state is not None and self.state.status != LOST:
            self.state.mark_lost(reason)


class ObjectRegistry:
    ''' Reconstructed objects keyed by id, each with its tracking state. '''

    def __init__(self, entries=()):
        self.entries = {}
        for e in entries:
            self.add(e)

    def add(self, entry):
        if entry.object_id in self.entries:
            raise InvalidInputError('object %d registered twice' % entry.object_id)
        if entry.status == TRACKING and (entry.mesh is None or entry.mesh.is_empty()):
            raise InvalidInputError('tracked object %d has no mesh' % entry.object_id)
        self.entries[entry.object_id] = entry
        return entry

    def __iter__(self):
        return iter([self.entries[k] for k in sorted(self.entries)])

    def __len__(self):
        return len(self.entries)

    def __contains__(self, object_id):
        return object_id in self.entries

    def get(self, object_id):
        if object_id not in self.entries:
            raise InvalidInputError('object %r is not registered' % (object_id,))
        return self.entries[object_id]

    def tracked_ids(self):
        return [e.object_id for e in self if e.usable]

    def states(self):
        return [e.state for e in self if e.usable and e.state is not None]

    def status(self):
        return {e.object_id: {'status': e.status, 'diagnostics': list(e.diagnostics)} for e in self}


@dataclass(frozen=True, eq=False)
class MergedScene:
    cloud: PointCloud
    provenance: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        prov = np.asarray(self.provenance, dtype=np.int8).reshape(-1)
        if len(prov) != len(self.cloud):
            raise InvalidInputError('provenance length %d != point count %d' % (len(prov), len(self.cloud)))
        prov.setflags(write=False)
        object.__setattr__(self, 'provenance', prov)

    def __len__(self):
        return len(self.cloud)

    def observed(self):
        return self.cloud.select(self.provenance == OBSERVED)

    def reconstructed(self):
        return self.cloud.select(self.provenance == RECONSTRUCTED)


def reconstruct_objects(registry, poses):
    ''' Each usable object's samples moved into the camera frame by its pose; others are skipped. '''
    clouds = []
    for entry in registry:
        if not entry.usable or entry.object_id not in poses:
            continue
        clouds.append(transform_cloud(entry.samples, poses[entry.object_id]).with_labels(entry.object_id))
    return clouds


def merge_scene(partial, objects, rho=0.003, frame_index=0):
    ''' Observed cloud plus reconstructed object clouds, deduplicated per voxel.

        A voxel holding any observed point keeps the centroid of its observed
        points; voxels reached only by reconstructions keep the reconstructed
        centroid. rho of 0 or None concatenates without deduplication.
    '''
    if rho is not None and rho < 0:
        raise InvalidInputError('merge voxel must be >= 0, got %r' % (rho,))
    parts = [partial] + list(objects)
    cloud = concatenate(parts)
    provenance = np.concatenate([np.full(len(p), OBSERVED if i == 0 else RECONSTRUCTED, dtype=np.int8)
                                 for i, p in enumerate(parts)])
    if not rho or len(cloud) == 0:
        return MergedScene(cloud, provenance, frame_index)

    uniq, inverse = group_by_voxel(cloud.positions, rho)
    n_groups = len(uniq)
    has_observed = np.bincount(inverse[provenance == OBSERVED], minlength=n_groups) > 0
    keep = (provenance == OBSERVED) | ~has_observed[inverse]
    merged = reduce_groups(cloud.select(keep), inverse[keep], n_groups)
    return MergedScene(merged, np.where(has_observed, OBSERVED, RECONSTRUCTED), frame_index)


def export_merged_scene(scene, path):
    write_ply(path, scene.cloud, extra_int={'provenance': scene.provenance})


def world_coverage(cloud, cam_pose, gt_samples, radius):
    ''' Coverage of world-frame GT samples by a camera-frame cloud. '''
    if len(cloud) == 0:
        return 0.
    return coverage(cam_pose.apply(cloud.positions), gt_samples, radius)
