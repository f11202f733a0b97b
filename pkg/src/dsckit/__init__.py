"""Design toolkit for storage-bounded distributed source coding and
dispersive information routing.

Given training samples of correlated sources, the toolkit designs per-source
high-rate quantizers, Wyner-Ziv relabeling maps, bit-subset selectors with
their reconstruction tables (single sink) or per-bit routing assignments with
per-sink tables (multi-hop networks), trading distortion against decoder
storage or communication cost along a Lagrangian sweep.  Both greedy descent
and deterministic annealing designers are provided.
"""

from .model import (
    BitSubsetSelector,
    DecoderCodebook,
    DegenerateDataError,
    HighRateQuantizer,
    SourceSystem,
    TrainingSet,
    WzMap,
    complexity,
    decode,
    distortion,
    encode,
    extract_bits,
    lagrangian,
    naive_decoder_storage,
)
from .quantizer import design_lloyd_max, quantize
from .greedy import GreedyConfig, grouping_baseline, run_greedy
from .anneal import AnnealSchedule, SoftEncoder, run_da
from .dir import (
    NetworkGraph,
    RouterAssignment,
    TrafficMatrix,
    communication_cost,
    conventional_baseline,
    dir_distortion,
    run_dir_design,
    steiner_table,
)
from .data import gen_gaussian_chain, gen_gaussian_field, load_csv, split
from .curves import TradeoffPoint
from .experiment import ExperimentConfig, run_dir_experiment, run_experiment

__version__ = "0.1.0"
