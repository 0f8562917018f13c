"""Radio-image sensing with large antenna surfaces.

Simulates multipath propagation onto a wall of densely spaced antennas,
renders per-antenna received power as grayscale radio images, and detects
route deviations of a transmitter with a statistical likelihood-ratio test
and an image-feature outlier detector (optionally behind a denoising
autoencoder).
"""

from .channel import (
    ANOMALOUS,
    CORRECT,
    ChannelSnapshot,
    LisSpec,
    Path,
    PowerFrame,
    Reflector,
    Scene,
    Trajectory,
    average_snr,
    build_lis_grid,
    channel_at,
    load_scene,
    load_trajectory,
    sample_power,
    save_scene,
    save_trajectory,
    sigma_for_snr,
    trace_paths,
)
from .imaging import (
    Dataset,
    FeatureVector,
    RadioImage,
    average_frames,
    export_pgm,
    import_pgm,
    to_features,
    to_image,
)
from .metrics import Confusion, f1_scores, precision_recall

__version__ = "0.1.0"
