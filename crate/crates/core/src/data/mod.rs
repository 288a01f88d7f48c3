//! Dataset plumbing: file formats, manifests, layer loading and sampling rules.

pub mod histogram;
pub mod layers;
pub mod manifest;
pub mod pfm;
pub mod sampling;
pub mod synth;

pub use histogram::{parse_bin_edges, pixel_histogram, Histogram};
pub use layers::{input_stack, load_input_stack, load_layer_dir, load_layers, load_rgb, save_layers};
pub use manifest::{dataset_root, DatasetManifest, ManifestEntry, Split, GROUND_TRUTH_SPP, MANIFEST_FILE};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, write_pfm_with, PfmWriteOptions};
pub use sampling::{
    avg_spp, nearest_downsample, nearest_upsample, patch_size_for_scale, pre_crop, random_patch, random_patch_sized,
    sample_spp_pair, sample_spp_pair_from, tile_origins, valid_pairs, SppPair, DATASET_SPP, DEFAULT_TILE, HRLS_SPP,
    LRHS_SPP,
};
pub use synth::{generate_dataset, SynthConfig};
