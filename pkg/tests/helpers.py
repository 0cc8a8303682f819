import math

import numpy as np

from swm.geo_core import CameraIntrinsics, CameraPose, GeoPoint, local_to_geo
from swm.pano_index import PanoramaRecord, PinholeView

SMALL = CameraIntrinsics.from_fov(math.pi / 2, 64, 40)
ORIGIN = GeoPoint(37.5665, 126.978)


def flat_record(pid, position, heading=0.0, depth=10.0, session="s0", timestamp=1.0e9, intr=SMALL):
    """Panorama whose 8 views see a uniform depth (cheap, no rendering)."""
    position = np.asarray(position, dtype=np.float64)
    views = []
    for k in range(8):
        pose = CameraPose.looking(position, heading + k * math.pi / 4)
        img = np.full((intr.height, intr.width, 3), 10 * k, dtype=np.uint8)
        dep = np.full((intr.height, intr.width), depth, dtype=np.float32)
        views.append(PinholeView(intr, pose, pid, k, image=img, depth=dep))
    return PanoramaRecord(
        id=pid,
        geo=local_to_geo(position[None], ORIGIN)[0],
        local_position=position,
        timestamp=timestamp,
        session_id=session,
        heading=heading,
        views=views,
    )
