//! Frame formats and the post-processing / resolution-adaptation coding
//! workflows.

mod codec;
mod convert;
mod frame;
mod io;
mod synth;
mod tiling;
mod workflow;

pub use convert::{
    convert_420_to_444, convert_444_to_420, decimation_taps, denormalize_444, downsample2x, from_444, lanczos,
    nn_upsample2x, normalized_444, to_444, LANCZOS_A,
};
pub use codec::{
    codec_run, quant_step, stub_code_frame, CodecAdapter, CodecMode, CodecOutput, MAX_QP, QP_LADDER,
    STUB_FRAME_HEADER_BYTES,
};
pub use io::{
    load_block_png, load_pairs, read_y4m, read_yuv, save_block_png, save_pairs, write_y4m, write_yuv, ManifestRow,
    RawFormat, Y4mVideo, MANIFEST,
};
pub use workflow::{
    build_training_pairs, crop_plan, degrade, enhance_decoded, pp_enhance, sra_restore, Crop, Degraded, PairConfig,
};
pub use frame::{ChromaFormat, PlanarFrame, Plane};
pub use synth::synthetic_sequence;
pub use tiling::{
    aggregate_blocks, aggregate_normalized, axis_offsets, segment_blocks, segment_blocks_with, TileMap, BLOCK_SIZE,
    OVERLAP,
};
