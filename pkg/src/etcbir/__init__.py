"""Content-based image retrieval over a mixture of plain and block-scrambled images."""

from .cipher import (
    CipherStreams,
    KeySet,
    SplitMix64,
    canonicalize_query,
    decrypt,
    derive_streams,
    encrypt,
    np_transform,
    permute_blocks,
    transform_blocks,
)
from .codebook import Codebook, KMeansConfig, assign, assign_batch, train_codebook
from .evaluation import (
    EvalCondition,
    EvalReport,
    GroundTruth,
    average_precision,
    run_condition,
    sweep,
    sweep_table,
)
from .image_io import (
    BLOCK,
    BlockGrid,
    DatasetManifest,
    ManifestEntry,
    assemble_blocks,
    load_image,
    load_manifest,
    save_image,
    split_blocks,
)
from .index import (
    DescriptorIndex,
    build_histogram,
    build_index,
    compute_df,
    describe_image,
    make_query_descriptor,
    search,
    tfidf_weight,
)
from .scd import ScdConfig, compute_scd, extract_patches, haar_transform, rgb_to_hsv
from .synth import SynthConfig, generate_dataset

__version__ = "0.1.0"
