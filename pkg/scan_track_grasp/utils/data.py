import h5py
import numpy as np

from geometry.camera import CameraIntrinsics, DepthImage, InstanceMask
from geometry.transforms import RigidTransform
from sim.render import ScanFrame
from utils.errors import InvalidInputError

INTRINSIC_KEYS = ('fx', 'fy', 'cx', 'cy', 'width', 'height')


def save_frames(path, frames, num_objects=None, attrs=None):
    ''' Frames stacked along axis 0: depth (N,H,W), mask (N,H,W), cam_pose (N,4,4), index (N,).
        All frames share the intrinsics stored as file attributes. '''
    if not frames:
        raise InvalidInputError('no frames to save')
    intr = frames[0].intr
    if any(fr.intr != intr for fr in frames):
        raise InvalidInputError('frames in one file must share intrinsics')
    with h5py.File(path, 'w') as f:
        f.create_dataset('depth', data=np.stack([fr.depth.values for fr in frames]), track_times=False)
        f.create_dataset('mask', data=np.stack([fr.mask.labels for fr in frames]), track_times=False)
        f.create_dataset('cam_pose', data=np.stack([fr.cam_pose.matrix for fr in frames]), track_times=False)
        f.create_dataset('index', data=np.array([fr.index for fr in frames], dtype=np.int64), track_times=False)
        for k in INTRINSIC_KEYS:
            f.attrs[k] = getattr(intr, k)
        f.attrs['num_objects'] = -1 if num_objects is None else int(num_objects)
        for key, value in sorted((attrs or {}).items()):
            f.attrs[key] = value


class FrameDB(object):
    ''' Lazy reader for files written by save_frames; frames are cached once read. '''

    def __init__(self, frame_file):
        self.frame_file = frame_file
        self._frame_store = {}
        with h5py.File(frame_file, 'r') as f:
            self.index = [int(i) for i in f['index'][...]]
            self.intr = CameraIntrinsics(**{k: f.attrs[k].item() for k in INTRINSIC_KEYS})
            n = int(f.attrs['num_objects'])
            self.num_objects = None if n < 0 else n
            self.attrs = {k: f.attrs[k] for k in f.attrs.keys() if k not in INTRINSIC_KEYS}
        self._position = {idx: row for row, idx in enumerate(self.index)}

    def __len__(self):
        return len(self.index)

    def get_frame(self, index):
        if index in self._frame_store:
            return self._frame_store[index]
        if index not in self._position:
            raise InvalidInputError('%s has no frame %d' % (self.frame_file, index))
        row = self._position[index]
        with h5py.File(self.frame_file, 'r') as f:
            frame = ScanFrame(
                DepthImage(f['depth'][row]),
                InstanceMask(f['mask'][row].astype(np.int32), self.num_objects),
                self.intr,
                RigidTransform.from_matrix(f['cam_pose'][row]),
                index,
            )
        self._frame_store[index] = frame
        return frame

    def frames(self):
        return [self.get_frame(i) for i in self.index]
