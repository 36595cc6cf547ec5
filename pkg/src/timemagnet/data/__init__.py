from .mex import (
    ARITY,
    MexFormatError,
    RawRecording,
    Stream,
    format_timestamp,
    parse_mex_csv,
    parse_mex_lines,
    parse_timestamp,
    read_mex_tree,
    write_mex_csv,
    write_mex_tree,
)
from .preprocess import (
    AlignedWindows,
    NormStats,
    PreparedData,
    SplitSpec,
    WindowDataset,
    align_multimodal,
    apply_zscore,
    augment_batch,
    augment_gaussian,
    build_dataset,
    class_weights,
    fit_zscore,
    make_split,
    normalize_dataset,
    prepare,
    resample_linear,
    segment_windows,
    split_by_participant,
    window_count,
    window_recording,
    zscore_normalize,
)
from .synth import SynthSpec, synth_dataset, synth_export, synth_generate, synth_recordings
