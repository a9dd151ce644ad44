from .accounting import FlopCount, Footprint, count_buffers, count_flops, count_params, footprint, layer_counts
from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .layers import build_block
from .network import Network, build_recognizer, build_tinyfqnet, trace_shapes
from .specs import BlockSpec, NetworkSpec, Normalization, recognizer_spec, tinyfqnet_spec
