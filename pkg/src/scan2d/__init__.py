"""Two-dimensional selective state-space scans: sequential oracles, a tiled
engine with carry prefixes and a backward pass, a memory-traffic model, and a
toy forward-only MIL model built on the scan."""

from .grid import (
    IDENTITY,
    FeatureGrid,
    LinOpElement,
    MaskedGrid,
    ScanParams,
    SelectiveInputs,
    ShapeError,
    TileConfig,
)
from .memsim import MemReport, TrafficCounter, count_flops, padding_waste, simulate_traffic
from .model import (
    AttentionWeights,
    BlockWeights,
    ModelConfig,
    SlideFeature,
    attention_aggregate,
    block_forward,
    embed_with_padding,
    mil_forward,
)
from .parallel import (
    GradBundle,
    chunked_scan1d,
    linop_compose,
    naive_scan2d,
    segmented_block_scan,
    tiled_scan2d_backward,
    tiled_scan2d_forward,
)
from .reference import (
    closed_form_constant,
    discretize,
    impulse_coefficient,
    scan1d_sequential,
    scan2d_sequential,
    selective_scan1d,
    selective_scan2d,
)
from .tensorfile import read_array, read_scan_params, read_tensor, write_scan_params, write_tensor

__version__ = "0.1.0"
