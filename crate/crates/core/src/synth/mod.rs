//! Seeded synthetic audio-visual world: scene generation, view augmentation,
//! the fixed encoders standing in for pretrained backbones, and dataset IO.

mod augment;
mod dataset;
mod encode;
mod world;

pub use augment::{
    augment_photometric, augment_spatial, blur_channels, gaussian_blur, gaussian_kernel, grayscale,
    reflect, PhotometricConfig, SpatialConfig, SpatialParams, LUMA,
};
pub use dataset::{load_dataset, read_manifest, write_dataset, ManifestRecord, MANIFEST_NAME};
pub use encode::{
    encode_audio, encode_visual, init_encoder_params, visual_features, PatchProjection,
};
pub use world::{
    cosine, hsv_to_rgb, make_world, BlobShape, ClassTexture, Scene, World, WorldConfig,
};

/// Two spatially matched views of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub images: [crate::imaging::Image; 2],
    pub masks: [crate::imaging::Mask; 2],
    pub params: [SpatialParams; 2],
}
