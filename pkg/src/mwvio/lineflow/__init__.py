"""Line detection and 4-parameter pyramidal line optical flow."""
from .detect import DetectorParams, detect_lines
from .flow import LineMotion, TrackStatus, apply_motion, track_line, track_lines
from .image import GrayImage, ImagePyramid, build_pyramid, read_pgm, write_pgm
from .maintain import extend_endpoints, merge_collinear, replenish
from .segment import LineSegment2D, sample_points
